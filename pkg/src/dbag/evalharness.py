"""Split protocols, video-level metrics, and experiment orchestration.

Two split modes: whole-video random 80/20, and a per-video segment protocol
that trains on the first 20% of each video's frames, tests on the last 20%,
and ignores the middle 60% (for datasets with few videos per identity).
Metrics are ACC at a fixed threshold, AUC as the rank statistic (probability a
random fake outscores a random real, ties at half credit), and EER from linear
interpolation of the ROC polyline. Experiments pair a training manifest with a
test manifest, so in-dataset, cross-manipulation, and cross-dataset runs are
the same code path.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .cache import read_feature_cache, read_sidecar, sidecar_path
from .descriptor import DBaGSlice, slice_features
from .errors import EmptyManifest, MissingCache, SingleClassError, SplitError
from .hashing import hash_file
from .inference import FAKE_LABEL, InferenceConfig, predict_videos
from .trainer import TrainConfig, build_reference_set, load_checkpoint, save_checkpoint, train

SPLIT_MODES = ("random_80_20", "segment_20_20", "full")


@dataclass(frozen=True)
class ManifestRecord:
    video_id: str
    path: str
    label: str
    dataset_name: str = ""
    manipulation_type: str | None = None
    identity_id: str | None = None

    def to_dict(self) -> dict:
        d = {
            "video_id": self.video_id,
            "path": self.path,
            "label": self.label,
            "dataset_name": self.dataset_name,
        }
        if self.manipulation_type is not None:
            d["manipulation_type"] = self.manipulation_type
        if self.identity_id is not None:
            d["identity_id"] = self.identity_id
        return d


def read_manifest(path: str | Path) -> list[ManifestRecord]:
    """Line-delimited JSON manifest, one record per video."""
    path = Path(path)
    if not path.exists():
        raise EmptyManifest(f"manifest not found: {path}")
    records = []
    with open(path, "r", encoding="utf-8") as f:
        for line_no, line in enumerate(f, 1):
            line = line.strip()
            if not line:
                continue
            d = json.loads(line)
            if d.get("label") not in ("real", "fake"):
                raise ValueError(f"{path}:{line_no}: label must be 'real' or 'fake', got {d.get('label')!r}")
            records.append(
                ManifestRecord(
                    video_id=d["video_id"],
                    path=d.get("path", ""),
                    label=d["label"],
                    dataset_name=d.get("dataset_name", ""),
                    manipulation_type=d.get("manipulation_type"),
                    identity_id=d.get("identity_id"),
                )
            )
    if not records:
        raise EmptyManifest(f"manifest holds no records: {path}")
    return records


def write_manifest(path: str | Path, records: list[ManifestRecord]) -> Path:
    path = Path(path)
    with open(path, "w", encoding="utf-8") as f:
        for r in records:
            f.write(json.dumps(r.to_dict(), sort_keys=True) + "\n")
    return path


def segment_ranges(n_frames: int) -> tuple[tuple[int, int], tuple[int, int]]:
    """Exact 20% boundaries: train [0, N//5), test [4N//5, N), middle ignored."""
    return (0, n_frames // 5), (4 * n_frames // 5, n_frames)


@dataclass
class SplitPlan:
    mode: str
    seed: int
    # video_id -> {"role": "train"|"test"} or
    # video_id -> {"role": "both", "train_range": [lo, hi), "test_range": [lo, hi)}
    assignments: dict[str, dict]

    def side_videos(self, side: str) -> list[str]:
        out = []
        for vid, a in self.assignments.items():
            if a["role"] in (side, "both", "all"):
                out.append(vid)
        return out

    def frame_range(self, video_id: str, side: str) -> tuple[int, int] | None:
        a = self.assignments[video_id]
        if a["role"] == "both":
            lo, hi = a[f"{side}_range"]
            return int(lo), int(hi)
        return None

    @property
    def has_overlap_risk(self) -> bool:
        return any(a["role"] == "all" for a in self.assignments.values())

    def to_dict(self) -> dict:
        return {"mode": self.mode, "seed": self.seed, "assignments": self.assignments}


def make_split(
    records: list[ManifestRecord],
    mode: str,
    seed: int,
    frame_counts: dict[str, int] | None = None,
) -> SplitPlan:
    """Assign videos (or per-video frame ranges) to train/test sides."""
    if not records:
        raise EmptyManifest("cannot split an empty manifest")
    if mode not in SPLIT_MODES:
        raise ValueError(f"split mode must be one of {SPLIT_MODES}, got {mode!r}")
    if mode == "full":
        # every video on both sides, full frame range; only sane when the
        # train and test manifests are disjoint (e.g. cross-dataset runs)
        return SplitPlan(mode=mode, seed=seed, assignments={r.video_id: {"role": "all"} for r in records})
    if mode == "random_80_20":
        ids = [r.video_id for r in records]
        rng = np.random.default_rng(seed)
        order = rng.permutation(len(ids))
        n_test = max(1, len(ids) // 5)
        if len(ids) - n_test < 1:
            raise SplitError(f"cannot split {len(ids)} videos into non-empty train and test sides")
        test_ids = {ids[i] for i in order[:n_test]}
        assignments = {
            vid: {"role": "test" if vid in test_ids else "train"} for vid in ids
        }
        return SplitPlan(mode=mode, seed=seed, assignments=assignments)

    if frame_counts is None:
        raise ValueError("segment_20_20 needs per-video frame counts")
    assignments = {}
    for r in records:
        if r.video_id not in frame_counts:
            raise SplitError(f"no frame count for video {r.video_id!r}")
        n = int(frame_counts[r.video_id])
        (t0, t1), (e0, e1) = segment_ranges(n)
        assignments[r.video_id] = {
            "role": "both",
            "train_range": [t0, t1],
            "test_range": [e0, e1],
        }
    return SplitPlan(mode=mode, seed=seed, assignments=assignments)


# --- metrics ---

def _score_arrays(scores, labels) -> tuple[np.ndarray, np.ndarray]:
    scores = np.asarray(scores, dtype=np.float64)
    is_fake = np.asarray([lab == FAKE_LABEL for lab in labels], dtype=bool)
    if scores.shape[0] != is_fake.shape[0]:
        raise ValueError("scores and labels must align")
    return scores, is_fake


def _rankdata(values: np.ndarray) -> np.ndarray:
    """1-based ranks with ties assigned the group average."""
    order = np.argsort(values, kind="stable")
    ranks = np.empty(len(values), dtype=np.float64)
    i = 0
    while i < len(values):
        j = i
        while j + 1 < len(values) and values[order[j + 1]] == values[order[i]]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2 + 1
        i = j + 1
    return ranks


def auc_percent(scores, labels) -> float:
    """Rank-statistic AUC: P(random fake outscores random real), ties at 1/2."""
    scores, is_fake = _score_arrays(scores, labels)
    n_pos = int(is_fake.sum())
    n_neg = int((~is_fake).sum())
    if n_pos == 0 or n_neg == 0:
        raise SingleClassError("AUC needs at least one fake and one real video")
    ranks = _rankdata(scores)
    u = ranks[is_fake].sum() - n_pos * (n_pos + 1) / 2
    return 100.0 * u / (n_pos * n_neg)


def roc_points(scores, labels) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """ROC polyline from (0,0) to (1,1) over descending unique thresholds."""
    scores, is_fake = _score_arrays(scores, labels)
    n_pos = int(is_fake.sum())
    n_neg = int((~is_fake).sum())
    if n_pos == 0 or n_neg == 0:
        raise SingleClassError("ROC needs at least one fake and one real video")
    order = np.argsort(-scores, kind="stable")
    sorted_scores = scores[order]
    sorted_fake = is_fake[order]
    tp = np.cumsum(sorted_fake)
    fp = np.cumsum(~sorted_fake)
    distinct = np.nonzero(np.diff(sorted_scores, append=np.nan))[0]
    tpr = np.concatenate([[0.0], tp[distinct] / n_pos])
    fpr = np.concatenate([[0.0], fp[distinct] / n_neg])
    thresholds = np.concatenate([[np.inf], sorted_scores[distinct]])
    return fpr, tpr, thresholds


def eer_percent(scores, labels) -> float:
    """Operating point where false-accept equals false-reject, interpolated."""
    fpr, tpr, _ = roc_points(scores, labels)
    fnr = 1.0 - tpr
    diff = fpr - fnr  # monotone from -1 to +1 along the polyline
    idx = int(np.argmax(diff >= 0))
    if diff[idx] == 0 or idx == 0:
        return 100.0 * fpr[idx]
    f0, f1 = fpr[idx - 1], fpr[idx]
    m0, m1 = fnr[idx - 1], fnr[idx]
    denom = (f1 - f0) - (m1 - m0)
    t = (m0 - f0) / denom
    return 100.0 * (f0 + t * (f1 - f0))


def acc_percent(scores, labels, threshold: float = 0.5) -> float:
    scores, is_fake = _score_arrays(scores, labels)
    predicted_fake = scores >= threshold
    return 100.0 * float((predicted_fake == is_fake).mean())


@dataclass
class EvalReport:
    acc: float
    auc: float
    eer: float
    n_videos: int
    per_video: list[dict]
    config_hashes: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "acc": self.acc,
            "auc": self.auc,
            "eer": self.eer,
            "n_videos": self.n_videos,
            "per_video": self.per_video,
            "config_hashes": self.config_hashes,
            "meta": self.meta,
        }

    def save(self, path: str | Path) -> Path:
        path = Path(path)
        with open(path, "w", encoding="utf-8") as f:
            json.dump(self.to_dict(), f, sort_keys=True, indent=2)
            f.write("\n")
        return path

    @classmethod
    def load(cls, path: str | Path) -> "EvalReport":
        with open(path, "r", encoding="utf-8") as f:
            d = json.load(f)
        return cls(**d)


def compute_metrics(scores, labels, threshold: float = 0.5, video_ids=None) -> EvalReport:
    """ACC/AUC/EER plus per-video verdicts for aligned score/label sequences."""
    scores = list(scores)
    labels = list(labels)
    video_ids = list(video_ids) if video_ids is not None else [str(i) for i in range(len(scores))]
    per_video = [
        {
            "video_id": vid,
            "label": lab,
            "fake_score": float(s),
            "predicted": FAKE_LABEL if s >= threshold else "real",
        }
        for vid, lab, s in zip(video_ids, labels, scores)
    ]
    return EvalReport(
        acc=acc_percent(scores, labels, threshold),
        auc=auc_percent(scores, labels),
        eer=eer_percent(scores, labels),
        n_videos=len(scores),
        per_video=per_video,
    )


# --- experiment driver ---

def feature_cache_path(cache_dir: str | Path, video_id: str) -> Path:
    return Path(cache_dir) / f"{video_id}.feat.dbag"


def landmark_cache_path(cache_dir: str | Path, video_id: str) -> Path:
    return Path(cache_dir) / f"{video_id}.lm.dbag"


def cached_frame_counts(records: list[ManifestRecord], cache_dir: str | Path) -> dict[str, int]:
    """Original frame counts per video, read from feature-cache sidecars."""
    counts = {}
    for r in records:
        path = feature_cache_path(cache_dir, r.video_id)
        if not sidecar_path(path).exists():
            raise MissingCache(f"feature cache sidecar missing for video {r.video_id!r}: {sidecar_path(path)}")
        meta = read_sidecar(path)
        counts[r.video_id] = int(meta.get("n_source_frames", meta.get("n_frames", 0)))
    return counts


def load_split_slices(
    records: list[ManifestRecord],
    cache_dir: str | Path,
    plan: SplitPlan,
    side: str,
    window: int = 120,
    stride: int = 60,
    pad_mode: str = "off",
) -> dict[str, list[DBaGSlice]]:
    """Slices per video for one side of a split plan, manifest order preserved."""
    cache_dir = Path(cache_dir)
    by_label = {r.video_id: r.label for r in records}
    out: dict[str, list[DBaGSlice]] = {}
    side_ids = set(plan.side_videos(side))
    for r in records:
        if r.video_id not in side_ids:
            continue
        path = feature_cache_path(cache_dir, r.video_id)
        if not path.exists():
            raise MissingCache(f"feature cache missing for video {r.video_id!r}: {path}")
        features, meta = read_feature_cache(path)
        source = meta.get("source_indices")
        rng = plan.frame_range(r.video_id, side)
        offset = 0
        if rng is not None:
            lo, hi = rng
            if source is None:
                source = list(range(features.shape[0]))
            keep = [i for i, src in enumerate(source) if lo <= src < hi]
            features = features[keep]
            offset = lo
        out[r.video_id] = slice_features(
            features,
            window=window,
            stride=stride,
            pad_mode=pad_mode,
            video_id=r.video_id,
            label=by_label[r.video_id],
            start_offset=offset,
        )
    return out


@dataclass
class ExperimentSpec:
    """One side of an experiment: a manifest plus its cache directory."""

    manifest_path: Path
    cache_dir: Path
    split_mode: str = "random_80_20"
    seed: int = 0
    name: str = ""


def run_experiment(
    train_spec: ExperimentSpec,
    test_spec: ExperimentSpec,
    model_config=None,
    train_config: TrainConfig | None = None,
    infer_config: InferenceConfig | None = None,
    window: int = 120,
    stride: int = 60,
    pad_mode: str = "off",
    checkpoint_path: str | Path | None = None,
    out_dir: str | Path | None = None,
) -> EvalReport:
    """Train (or reuse a checkpoint), build the reference set, score the test
    side, and compute metrics. Same-dataset, cross-manipulation, and
    cross-dataset runs differ only in the manifests supplied."""
    from .network import ModelConfig

    model_config = model_config or ModelConfig()
    train_config = train_config or TrainConfig()
    infer_config = infer_config or InferenceConfig()
    if out_dir is not None:
        Path(out_dir).mkdir(parents=True, exist_ok=True)

    train_records = read_manifest(train_spec.manifest_path)
    test_records = read_manifest(test_spec.manifest_path)
    same_side = (
        Path(train_spec.manifest_path).resolve() == Path(test_spec.manifest_path).resolve()
        and train_spec.split_mode == test_spec.split_mode
        and train_spec.seed == test_spec.seed
    )

    def plan_for(spec: ExperimentSpec, records):
        counts = None
        if spec.split_mode == "segment_20_20":
            counts = cached_frame_counts(records, spec.cache_dir)
        return make_split(records, spec.split_mode, spec.seed, frame_counts=counts)

    train_plan = plan_for(train_spec, train_records)
    test_plan = train_plan if same_side else plan_for(test_spec, test_records)

    train_slices_by_video = load_split_slices(
        train_records, train_spec.cache_dir, train_plan, "train", window, stride, pad_mode
    )
    train_slices = [s for vid in train_slices_by_video.values() for s in vid]
    if checkpoint_path is not None and Path(checkpoint_path).exists():
        checkpoint = load_checkpoint(checkpoint_path)
        history = []
    else:
        result = train(train_slices, model_config, train_config)
        if checkpoint_path is None:
            if out_dir is None:
                raise ValueError("need checkpoint_path or out_dir to store the trained model")
            checkpoint_path = Path(out_dir) / "checkpoint.dbag"
        Path(checkpoint_path).parent.mkdir(parents=True, exist_ok=True)
        save_checkpoint(checkpoint_path, result, extra_hashes={"train_manifest": hash_file(train_spec.manifest_path)})
        checkpoint = load_checkpoint(checkpoint_path)
        history = result.history

    ref = build_reference_set(checkpoint, train_slices, manifest_hash=hash_file(train_spec.manifest_path))
    if out_dir is not None:
        ref.save(Path(out_dir) / "reference_set.dbag")

    test_slices_by_video = load_split_slices(
        test_records, test_spec.cache_dir, test_plan, "test", window, stride, pad_mode
    )
    verdicts, _ = predict_videos(checkpoint, ref, test_slices_by_video, infer_config)
    scored = {v.video_id: v for v in verdicts}
    test_ids = [r.video_id for r in test_records if r.video_id in scored]
    labels = {r.video_id: r.label for r in test_records}
    skipped = [vid for vid in test_slices_by_video if vid not in scored]

    report = compute_metrics(
        scores=[scored[vid].fake_score for vid in test_ids],
        labels=[labels[vid] for vid in test_ids],
        threshold=infer_config.threshold,
        video_ids=test_ids,
    )
    report.config_hashes = {
        "model_config": model_config.config_hash,
        "train_config": train_config.config_hash,
        "checkpoint": checkpoint.file_hash,
        "stats": checkpoint.stats.stats_hash,
        "train_manifest": hash_file(train_spec.manifest_path),
        "test_manifest": hash_file(test_spec.manifest_path),
    }
    report.meta = {
        "train_dataset": train_spec.name or (train_records[0].dataset_name if train_records else ""),
        "test_dataset": test_spec.name or (test_records[0].dataset_name if test_records else ""),
        "train_split": train_plan.mode,
        "test_split": test_plan.mode,
        "n_train_slices": len(train_slices),
        "n_skipped_videos": len(skipped),
        "final_train_loss": history[-1]["mean_loss"] if history else None,
    }
    if out_dir is not None:
        report.save(Path(out_dir) / "eval_report.json")
        if history:
            from .trainer import write_history

            write_history(Path(out_dir) / "train_history.jsonl", history)
    return report
