import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dbag.errors import IndexOutOfRange
from dbag.geometry import (
    RegionSpec,
    default_region_spec,
    geometric_features_frame,
    geometric_features_sequence,
    region_centers,
)
from oracles import geometric_oracle, random_region_spec

# 20-landmark toy spec: windows fit because both medians sit mid-range
TOY = RegionSpec(
    lower_indices=(4, 6, 8, 10, 12),
    upper_indices=(5, 7, 9, 11, 13),
    half_range=3,
)


def test_default_spec_is_valid_and_36_dim():
    spec = default_region_spec()
    spec.validate(478)
    assert spec.feature_dim == 36
    assert len(spec.lower_indices) == 18
    assert len(spec.upper_indices) == 18
    assert not set(spec.lower_indices) & set(spec.upper_indices)


def test_region_spec_rejects_overlap_and_bad_metric():
    with pytest.raises(ValueError):
        RegionSpec(lower_indices=(1, 2), upper_indices=(2, 3))
    with pytest.raises(ValueError):
        RegionSpec(lower_indices=(1,), upper_indices=(2,), metric="cosine")
    with pytest.raises(ValueError):
        RegionSpec(lower_indices=(), upper_indices=(2,))


def test_region_spec_window_bounds_checked():
    spec = RegionSpec(lower_indices=(0, 1), upper_indices=(18, 19), half_range=9)
    with pytest.raises(IndexOutOfRange):
        spec.validate(20)  # lower window would start below 0


def test_region_centers_identical_points():
    points = np.zeros((20, 3))
    points[list(TOY.upper_indices)] = (1.0, 2.0, 3.0)
    top, bottom = region_centers(points, TOY)
    assert np.allclose(top, (1.0, 2.0, 3.0))
    assert np.allclose(bottom, 0.0)


def test_region_centers_midpoint():
    spec = RegionSpec(lower_indices=(2, 3), upper_indices=(4, 5), half_range=1)
    points = np.zeros((8, 3))
    points[4] = (0.0, 0.0, 0.0)
    points[5] = (2.0, 0.0, 0.0)
    top, _ = region_centers(points, spec)
    assert np.allclose(top, (1.0, 0.0, 0.0))


def test_region_centers_match_mean_oracle(rng):
    spec = RegionSpec(lower_indices=(2, 5, 7), upper_indices=(10, 11, 14), half_range=2)
    points = rng.normal(size=(20, 3))
    top, bottom = region_centers(points, spec)
    assert np.allclose(top, points[[10, 11, 14]].mean(axis=0))
    assert np.allclose(bottom, points[[2, 5, 7]].mean(axis=0))


def test_all_landmarks_at_origin_gives_zeros():
    spec = default_region_spec()
    out = geometric_features_frame(np.zeros((478, 3)), spec)
    assert out.shape == (36,)
    assert np.all(out == 0.0)


def test_translation_invariance_is_exact(rng):
    spec = default_region_spec()
    # grid-valued coordinates so that points + v is itself exact in float64
    points = rng.integers(-1000, 1000, size=(478, 3)).astype(np.float64) / 8.0
    shifted = points + np.array([5.0, -3.0, 1.0])
    base = geometric_features_frame(points, spec)
    assert np.array_equal(base, geometric_features_frame(shifted, spec))


def test_toy_spec_matches_double_loop_oracle(rng):
    points = rng.normal(size=(20, 3))
    out = geometric_features_frame(points, TOY)
    assert out.shape == (12,)
    assert np.max(np.abs(out - geometric_oracle(points, TOY))) <= 1e-9


def test_random_specs_match_oracle(rng):
    for _ in range(10):
        spec = random_region_spec(rng)
        points = rng.normal(scale=3.0, size=(478, 3))
        got = geometric_features_frame(points, spec)
        want = geometric_oracle(points, spec)
        assert np.max(np.abs(got - want)) <= 1e-6
        assert np.all(got >= 0.0)


def test_l2_variant_matches_oracle(rng):
    spec = random_region_spec(rng, metric="l2")
    points = rng.normal(size=(478, 3))
    got = geometric_features_frame(points, spec)
    assert np.max(np.abs(got - geometric_oracle(points, spec))) <= 1e-9


@given(scale=st.floats(min_value=0.0, max_value=100.0, allow_nan=False), seed=st.integers(0, 2**31))
@settings(max_examples=30, deadline=None)
def test_scaling_scales_features_linearly(scale, seed):
    spec = TOY
    points = np.random.default_rng(seed).normal(size=(20, 3))
    base = geometric_features_frame(points, spec)
    scaled = geometric_features_frame(points * scale, spec)
    assert np.allclose(scaled, base * scale, rtol=1e-9, atol=1e-9)


def test_sequence_matches_per_frame_oracle(rng):
    spec = default_region_spec()
    frames = rng.normal(size=(5, 478, 3))
    out = geometric_features_sequence(frames, spec)
    assert out.shape == (5, 36)
    for t in range(5):
        assert np.array_equal(out[t], geometric_features_frame(frames[t], spec))


def test_sequence_single_and_identical_frames(rng):
    spec = default_region_spec()
    frame = rng.normal(size=(478, 3))
    one = geometric_features_sequence([frame], spec)
    assert one.shape == (1, 36)
    many = geometric_features_sequence([frame] * 4, spec)
    assert np.array_equal(many, np.tile(one, (4, 1)))


def test_out_of_bounds_index_raises(rng):
    spec = RegionSpec(lower_indices=(4, 6, 8), upper_indices=(5, 7, 9), half_range=3)
    with pytest.raises(IndexOutOfRange):
        geometric_features_frame(rng.normal(size=(9, 3)), spec)


def test_spec_serialization_round_trip_and_hash():
    spec = default_region_spec()
    clone = RegionSpec.from_dict(spec.to_dict())
    assert clone == spec
    assert clone.spec_hash == spec.spec_hash
    other = RegionSpec.from_dict({**spec.to_dict(), "metric": "l2"})
    assert other.spec_hash != spec.spec_hash
