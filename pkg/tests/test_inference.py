import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dbag.errors import (
    ArtifactMismatch,
    EmptyReference,
    MTooLarge,
    NoSlices,
    ShapeError,
    StatsMismatch,
)
from dbag.inference import (
    InferenceConfig,
    SliceVerdict,
    check_chain,
    knn_predict,
    predict_videos,
    read_predictions,
    video_verdict,
    write_predictions,
)
from dbag.trainer import ReferenceSet, TrainConfig, build_reference_set, load_checkpoint, save_checkpoint, train
from dbag.inference import embed_test
from oracles import knn_oracle

from conftest import TINY_MODEL, make_slices


def ref_of(values, labels):
    emb = np.asarray(values, dtype=np.float32)
    if emb.ndim == 1:
        emb = emb[:, None]
    return ReferenceSet(embeddings=emb, labels=list(labels))


def test_knn_worked_example():
    ref = ref_of([0.0, 1.0, 10.0], ["real", "real", "fake"])
    verdict = knn_predict(np.array([0.5]), ref, InferenceConfig(m_neighbors=3))
    assert verdict.label == "real"
    assert verdict.fake_score == pytest.approx(1 / 3)
    assert verdict.neighbor_indices == [0, 1, 2]


def test_knn_m1_exact_match():
    ref = ref_of([0.0, 1.0, 10.0], ["real", "real", "fake"])
    verdict = knn_predict(np.array([10.0]), ref, InferenceConfig(m_neighbors=1))
    assert verdict.label == "fake"
    assert verdict.fake_score == 1.0
    assert verdict.neighbor_distances[0] == 0.0


def test_knn_degenerate_all_fake(rng):
    ref = ref_of(rng.normal(size=5), ["fake"] * 5)
    verdict = knn_predict(np.array([rng.normal()]), ref, InferenceConfig(m_neighbors=3))
    assert verdict.label == "fake"
    assert verdict.fake_score == 1.0


def test_knn_guards():
    ref = ref_of([0.0, 1.0], ["real", "fake"])
    with pytest.raises(MTooLarge, match="m_neighbors=5 exceeds reference size 2"):
        knn_predict(np.array([0.0]), ref, InferenceConfig(m_neighbors=5))
    empty = ReferenceSet(embeddings=np.empty((0, 1), dtype=np.float32), labels=[])
    with pytest.raises(EmptyReference):
        knn_predict(np.array([0.0]), empty, InferenceConfig(m_neighbors=1))


def test_knn_distance_tie_takes_lower_index():
    # two references equidistant from the query
    ref = ref_of([[1.0, 0.0], [-1.0, 0.0], [5.0, 5.0]], ["fake", "real", "real"])
    verdict = knn_predict(np.array([0.0, 0.0]), ref, InferenceConfig(m_neighbors=1))
    assert verdict.neighbor_indices == [0]
    assert verdict.label == "fake"


def test_knn_vote_tie_takes_nearest_label():
    ref = ref_of([0.0, 1.0], ["real", "fake"])
    verdict = knn_predict(np.array([0.2]), ref, InferenceConfig(m_neighbors=2))
    assert verdict.label == "real"  # 1-1 vote, nearest is real
    verdict = knn_predict(np.array([0.8]), ref, InferenceConfig(m_neighbors=2))
    assert verdict.label == "fake"


def test_knn_matches_oracle_random_cases(rng):
    for _ in range(50):
        n = int(rng.integers(2, 40))
        dim = int(rng.integers(1, 8))
        emb = rng.normal(size=(n, dim)).astype(np.float32)
        labels = [str(l) for l in rng.choice(["real", "fake"], size=n)]
        q = rng.normal(size=dim).astype(np.float32)
        m = int(rng.integers(1, n + 1))
        ref = ReferenceSet(embeddings=emb, labels=labels)
        verdict = knn_predict(q, ref, InferenceConfig(m_neighbors=m))
        o_idx, o_label, o_score, o_dists = knn_oracle(emb, labels, q, m)
        assert verdict.neighbor_indices == o_idx
        assert verdict.label == o_label
        assert verdict.fake_score == o_score
        assert verdict.neighbor_distances == pytest.approx(o_dists, rel=1e-12)


def test_knn_score_quantization_and_permutation_invariance(rng):
    n, dim, m = 20, 4, 5
    emb = rng.normal(size=(n, dim)).astype(np.float32)
    labels = [str(l) for l in rng.choice(["real", "fake"], size=n)]
    ref = ReferenceSet(embeddings=emb, labels=labels)
    q = rng.normal(size=dim).astype(np.float32)
    verdict = knn_predict(q, ref, InferenceConfig(m_neighbors=m))
    assert verdict.fake_score in [k / m for k in range(m + 1)]

    perm = rng.permutation(n)
    ref2 = ReferenceSet(embeddings=emb[perm], labels=[labels[i] for i in perm])
    verdict2 = knn_predict(q, ref2, InferenceConfig(m_neighbors=m))
    assert verdict2.label == verdict.label
    assert verdict2.fake_score == verdict.fake_score


def _verdict(score):
    return SliceVerdict(label="fake" if score >= 0.5 else "real", fake_score=score,
                        neighbor_indices=[], neighbor_distances=[])


def test_video_verdict_examples():
    v = video_verdict([_verdict(1 / 3), _verdict(2 / 3), _verdict(1.0)], "v")
    assert v.fake_score == pytest.approx(2 / 3)
    assert v.label == "fake"
    assert v.n_slices == 3

    single = video_verdict([_verdict(0.8)], "v")
    assert single.fake_score == pytest.approx(0.8)
    assert single.label == "fake"

    zeros = video_verdict([_verdict(0.0)] * 3, "v")
    assert zeros.label == "real" and zeros.fake_score == 0.0

    with pytest.raises(NoSlices):
        video_verdict([], "v")


@given(st.lists(st.floats(0, 1), min_size=1, max_size=10), st.floats(0, 0.5))
@settings(max_examples=100, deadline=None)
def test_video_score_monotone_in_slice_scores(scores, bump):
    base = video_verdict([_verdict(s) for s in scores], "v").fake_score
    raised = video_verdict([_verdict(min(1.0, s + bump)) for s in scores], "v").fake_score
    assert raised >= base - 1e-12


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    rng = np.random.default_rng(77)
    slices = make_slices(rng, n_per_class=5)
    result = train(slices, TINY_MODEL, TrainConfig(epochs=1, batch_size=4, seed=21))
    path = save_checkpoint(tmp_path_factory.mktemp("ckpt") / "m.dbag", result)
    checkpoint = load_checkpoint(path)
    ref = build_reference_set(checkpoint, slices)
    return checkpoint, ref, slices


def test_embed_test_matches_reference_rows(trained):
    checkpoint, ref, slices = trained
    # same function, same batching: re-embedding the bank is bit-identical
    emb = embed_test(checkpoint, slices)
    assert np.array_equal(emb, ref.embeddings)
    # a subset runs through different conv batch shapes; equal to float tolerance
    sub = embed_test(checkpoint, slices[:3])
    assert np.allclose(sub, ref.embeddings[:3], atol=1e-5)
    assert embed_test(checkpoint, []).shape == (0, TINY_MODEL.embedding_dim)


def test_embed_test_stats_guard(trained):
    checkpoint, _, slices = trained
    emb = embed_test(checkpoint, slices[:1], stats_hash=checkpoint.stats.stats_hash)
    assert emb.shape[0] == 1
    with pytest.raises(StatsMismatch):
        embed_test(checkpoint, slices[:1], stats_hash="deadbeef")


def test_embed_test_shape_guard(trained, rng):
    checkpoint, _, _ = trained
    from dbag.descriptor import DBaGSlice

    bad = DBaGSlice(matrix=rng.normal(size=(60, 600)).astype(np.float32), start_frame=0, video_id="x")
    with pytest.raises(ShapeError):
        embed_test(checkpoint, [bad])


def test_chain_check(trained):
    checkpoint, ref, _ = trained
    check_chain(checkpoint, ref)  # matching hashes pass
    stale = ReferenceSet(embeddings=ref.embeddings, labels=ref.labels, checkpoint_hash="0" * 64)
    with pytest.raises(ArtifactMismatch):
        check_chain(checkpoint, stale)


def test_predict_videos_and_report_round_trip(trained, tmp_path):
    checkpoint, ref, slices = trained
    by_video = {"vid-a": slices[:2], "vid-b": slices[2:4]}
    verdicts, details = predict_videos(checkpoint, ref, by_video, InferenceConfig(m_neighbors=3))
    assert [v.video_id for v in verdicts] == ["vid-a", "vid-b"]
    assert len(details) == 4
    path = write_predictions(tmp_path / "p.jsonl", verdicts)
    back = read_predictions(path)
    assert [(v.video_id, v.label, v.fake_score, v.n_slices) for v in back] == [
        (v.video_id, v.label, v.fake_score, v.n_slices) for v in verdicts
    ]
