"""Golden-ratio-inspired geometric features.

Per frame we take two landmark regions on the outer face ring (an upper and a
lower half), compute each region's centroid, and measure distances from one
region's centroid to a contiguous window of landmark indices centered on the
opposite region. With the default half_range of 9 that yields 18 distances per
side, concatenated to a 36-dim vector per frame.

Distances default to L1 (sum of absolute coordinate differences); L2 is
available as a config variant. Features are translation invariant but scale
with the landmarks, on purpose: coordinate units carry signal.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import IndexOutOfRange
from .hashing import hash_json

# Outer-face landmark ring of the 478-point face-mesh topology, ordered
# clockwise from the forehead center (10) through the chin (152) and back.
FACE_OVAL_RING = (
    10, 338, 297, 332, 284, 251, 389, 356, 454, 323, 361, 288, 397, 365,
    379, 378, 400, 377, 152, 148, 176, 149, 150, 136, 172, 58, 132, 93,
    234, 127, 162, 21, 54, 103, 67, 109,
)

_METRICS = ("l1", "l2")


@dataclass(frozen=True)
class RegionSpec:
    """Landmark index sets for the lower/upper outer-face regions.

    half_range controls the distance window: 2 * half_range consecutive
    landmark indices centered on the region's median index. The default
    half_range of 9 gives the canonical 18 distances per side.
    """

    lower_indices: tuple[int, ...]
    upper_indices: tuple[int, ...]
    half_range: int = 9
    metric: str = "l1"
    name: str = "custom"

    def __post_init__(self):
        if not self.lower_indices or not self.upper_indices:
            raise ValueError("lower and upper index sets must be non-empty")
        if set(self.lower_indices) & set(self.upper_indices):
            raise ValueError("lower and upper index sets must be disjoint")
        if self.half_range < 1:
            raise ValueError("half_range must be >= 1")
        if self.metric not in _METRICS:
            raise ValueError(f"metric must be one of {_METRICS}, got {self.metric!r}")

    @property
    def feature_dim(self) -> int:
        return 4 * self.half_range

    def center_index(self, which: str) -> int:
        """Median landmark index of a region (lower median for even counts)."""
        ids = sorted(self.upper_indices if which == "upper" else self.lower_indices)
        return ids[(len(ids) - 1) // 2]

    def window(self, which: str) -> range:
        c = self.center_index(which)
        return range(c - self.half_range, c + self.half_range)

    def validate(self, n_points: int = 478) -> None:
        """Raise IndexOutOfRange unless all indices and windows fit n_points."""
        for ids in (self.lower_indices, self.upper_indices):
            for i in ids:
                if not 0 <= i < n_points:
                    raise IndexOutOfRange(f"landmark index {i} out of range for {n_points} points")
        for which in ("upper", "lower"):
            w = self.window(which)
            if w.start < 0 or w.stop > n_points:
                raise IndexOutOfRange(
                    f"{which} window [{w.start}, {w.stop}) exceeds landmark bounds [0, {n_points})"
                )

    def to_dict(self) -> dict:
        return {
            "lower_indices": list(self.lower_indices),
            "upper_indices": list(self.upper_indices),
            "half_range": self.half_range,
            "metric": self.metric,
            "name": self.name,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RegionSpec":
        return cls(
            lower_indices=tuple(d["lower_indices"]),
            upper_indices=tuple(d["upper_indices"]),
            half_range=int(d["half_range"]),
            metric=d.get("metric", "l1"),
            name=d.get("name", "custom"),
        )

    @property
    def spec_hash(self) -> str:
        return hash_json(self.to_dict())


def default_region_spec() -> RegionSpec:
    """Outer-face ring split at the horizontal midline: 18 upper, 18 lower."""
    ring = FACE_OVAL_RING
    # ring position 0 is the forehead center, position 18 the chin center
    upper = ring[27:] + ring[:9]
    lower = ring[9:27]
    return RegionSpec(lower_indices=lower, upper_indices=upper, name="face-oval-v1")


def _as_points(lm) -> np.ndarray:
    points = np.asarray(getattr(lm, "points", lm), dtype=np.float64)
    if points.ndim != 2 or points.shape[1] != 3:
        raise ValueError(f"landmarks must be (N, 3), got {points.shape}")
    return points


def region_centers(lm, spec: RegionSpec) -> tuple[np.ndarray, np.ndarray]:
    """Centroids of the upper and lower regions: (top_point, bottom_point)."""
    points = _as_points(lm)
    spec.validate(points.shape[0])
    top = points[list(spec.upper_indices)].mean(axis=0)
    bottom = points[list(spec.lower_indices)].mean(axis=0)
    return top, bottom


def _window_distances(
    points: np.ndarray, window: range, region_indices: tuple[int, ...], metric: str
) -> np.ndarray:
    # distance from the region centroid c to window point w equals
    # |mean_j(r_j - w)|; computing differences first lets exactly translated
    # inputs cancel exactly, making translation invariance bitwise
    region = points[list(region_indices)]
    win = points[window.start : window.stop]
    mean_diff = (region[None, :, :] - win[:, None, :]).mean(axis=1)
    if metric == "l1":
        return np.abs(mean_diff).sum(axis=1)
    return np.sqrt((mean_diff ** 2).sum(axis=1))


def geometric_features_frame(lm, spec: RegionSpec) -> np.ndarray:
    """Per-frame geometric feature vector of length 4 * half_range.

    First half: distances from the lower centroid to the window around the
    upper region's center index. Second half: symmetric, from the upper
    centroid to the lower-side window.
    """
    points = _as_points(lm)
    spec.validate(points.shape[0])
    g_top = _window_distances(points, spec.window("upper"), spec.lower_indices, spec.metric)
    g_bottom = _window_distances(points, spec.window("lower"), spec.upper_indices, spec.metric)
    return np.concatenate([g_top, g_bottom])


def geometric_features_sequence(lms, spec: RegionSpec) -> np.ndarray:
    """Stack geometric_features_frame over a landmark sequence to (N, 4n)."""
    frames = list(lms)
    if not frames:
        raise ValueError("landmark sequence is empty")
    return np.stack([geometric_features_frame(lm, spec) for lm in frames])
