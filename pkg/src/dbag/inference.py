"""Reference-set nearest-neighbor classification of embedded test slices.

A test slice is embedded with the trained network, its Euclidean distance to
every reference embedding is computed, and the majority label of the m closest
references becomes the slice verdict. The fake-neighbor fraction serves as a
continuous score; video scores are the mean over that video's slices.

Tie handling is deterministic: equal distances rank by lower reference index,
and a tied vote falls to the tied label seen earliest in the neighbor ranking
(the nearest neighbor's side).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ArtifactMismatch, EmptyReference, MTooLarge, NoSlices, StatsMismatch
from .network import embed_slices
from .trainer import Checkpoint, ReferenceSet

FAKE_LABEL = "fake"
REAL_LABEL = "real"


@dataclass(frozen=True)
class InferenceConfig:
    m_neighbors: int = 5  # odd by default to avoid binary vote ties
    distance: str = "euclidean"
    aggregation: str = "mean"
    threshold: float = 0.5
    batch_size: int = 64

    def __post_init__(self):
        if self.m_neighbors < 1:
            raise ValueError("m_neighbors must be >= 1")
        if self.distance != "euclidean":
            raise ValueError("only euclidean distance is supported")
        if self.aggregation != "mean":
            raise ValueError("only mean aggregation is supported")

    def to_dict(self) -> dict:
        return {
            "m_neighbors": self.m_neighbors,
            "distance": self.distance,
            "aggregation": self.aggregation,
            "threshold": self.threshold,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "InferenceConfig":
        d = {k: v for k, v in d.items() if k != "batch_size"}
        return cls(**d)


@dataclass
class SliceVerdict:
    label: str
    fake_score: float
    neighbor_indices: list[int]
    neighbor_distances: list[float]
    video_id: str = ""
    start_frame: int = 0


@dataclass
class VideoVerdict:
    video_id: str
    label: str
    fake_score: float
    n_slices: int


def embed_test(checkpoint: Checkpoint, slices, stats_hash: str | None = None) -> np.ndarray:
    """Inference-mode embeddings in the reference set's space.

    stats_hash, when supplied (e.g. from a feature-cache sidecar), must match
    the standardization stats stored in the checkpoint.
    """
    if stats_hash is not None and stats_hash != checkpoint.stats.stats_hash:
        raise StatsMismatch(
            f"feature stats {stats_hash[:12]} do not match checkpoint stats "
            f"{checkpoint.stats.stats_hash[:12]}"
        )
    return embed_slices(checkpoint.model, checkpoint.stats, slices)


def knn_predict(
    e_test: np.ndarray, ref: ReferenceSet, config: InferenceConfig | None = None
) -> SliceVerdict:
    """Majority vote of the m nearest reference embeddings."""
    config = config or InferenceConfig()
    if len(ref) == 0:
        raise EmptyReference("reference set is empty")
    m = config.m_neighbors
    if m > len(ref):
        raise MTooLarge(f"m_neighbors={m} exceeds reference size {len(ref)}")
    e = np.asarray(e_test, dtype=np.float64).ravel()
    if e.shape[0] != ref.embeddings.shape[1]:
        raise ValueError(f"query dim {e.shape[0]} != reference dim {ref.embeddings.shape[1]}")
    dists = np.sqrt(((ref.embeddings.astype(np.float64) - e) ** 2).sum(axis=1))
    order = np.argsort(dists, kind="stable")[:m]  # stable sort: distance ties -> lower index
    neighbor_labels = [ref.labels[i] for i in order]
    counts: dict[str, int] = {}
    for lab in neighbor_labels:
        counts[lab] = counts.get(lab, 0) + 1
    best = max(counts.values())
    tied = {lab for lab, c in counts.items() if c == best}
    label = next(lab for lab in neighbor_labels if lab in tied)
    fake_score = sum(lab == FAKE_LABEL for lab in neighbor_labels) / m
    return SliceVerdict(
        label=label,
        fake_score=fake_score,
        neighbor_indices=[int(i) for i in order],
        neighbor_distances=[float(dists[i]) for i in order],
    )


def video_verdict(
    verdicts: list[SliceVerdict], video_id: str = "", threshold: float = 0.5
) -> VideoVerdict:
    """Mean slice score; fake when the mean clears the threshold."""
    if not verdicts:
        raise NoSlices(f"no slice verdicts for video {video_id!r}")
    score = float(np.mean([v.fake_score for v in verdicts]))
    return VideoVerdict(
        video_id=video_id or verdicts[0].video_id,
        label=FAKE_LABEL if score >= threshold else REAL_LABEL,
        fake_score=score,
        n_slices=len(verdicts),
    )


def check_chain(checkpoint: Checkpoint, ref: ReferenceSet) -> None:
    """Refuse to predict when the reference set came from another checkpoint."""
    if ref.checkpoint_hash and checkpoint.file_hash and ref.checkpoint_hash != checkpoint.file_hash:
        raise ArtifactMismatch(
            f"reference set was built from checkpoint {ref.checkpoint_hash[:12]}, "
            f"but the loaded checkpoint hashes to {checkpoint.file_hash[:12]}"
        )


def predict_videos(
    checkpoint: Checkpoint,
    ref: ReferenceSet,
    slices_by_video: dict[str, list],
    config: InferenceConfig | None = None,
    stats_hash: str | None = None,
) -> tuple[list[VideoVerdict], list[SliceVerdict]]:
    """Slice-level kNN verdicts plus per-video aggregation, in manifest order."""
    config = config or InferenceConfig()
    check_chain(checkpoint, ref)
    video_verdicts = []
    slice_verdicts = []
    for video_id, slices in slices_by_video.items():
        if not slices:
            continue
        emb = embed_test(checkpoint, slices, stats_hash=stats_hash)
        per_video = []
        for row, s in zip(emb, slices):
            v = knn_predict(row, ref, config)
            v.video_id = video_id
            v.start_frame = s.start_frame
            per_video.append(v)
        slice_verdicts.extend(per_video)
        video_verdicts.append(video_verdict(per_video, video_id, threshold=config.threshold))
    return video_verdicts, slice_verdicts


def write_predictions(path: str | Path, verdicts: list[VideoVerdict]) -> Path:
    """One JSON record per video, line-delimited."""
    path = Path(path)
    with open(path, "w", encoding="utf-8") as f:
        for v in verdicts:
            f.write(
                json.dumps(
                    {
                        "video_id": v.video_id,
                        "label": v.label,
                        "fake_score": v.fake_score,
                        "n_slices": v.n_slices,
                    },
                    sort_keys=True,
                )
                + "\n"
            )
    return path


def write_slice_details(path: str | Path, verdicts: list[SliceVerdict]) -> Path:
    path = Path(path)
    with open(path, "w", encoding="utf-8") as f:
        for v in verdicts:
            f.write(
                json.dumps(
                    {
                        "video_id": v.video_id,
                        "start_frame": v.start_frame,
                        "label": v.label,
                        "fake_score": v.fake_score,
                        "neighbor_indices": v.neighbor_indices,
                        "neighbor_distances": v.neighbor_distances,
                    },
                    sort_keys=True,
                )
                + "\n"
            )
    return path


def read_predictions(path: str | Path) -> list[VideoVerdict]:
    path = Path(path)
    out = []
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            if not line.strip():
                continue
            d = json.loads(line)
            out.append(
                VideoVerdict(
                    video_id=d["video_id"],
                    label=d["label"],
                    fake_score=d["fake_score"],
                    n_slices=d["n_slices"],
                )
            )
    return out
