"""Per-frame feature fusion and temporal windowing.

Each surviving frame yields a 600-dim vector laid out as
``[behavioral(52) | geometric(36) | identity(512)]``; the per-video matrix is
then windowed into overlapping slices (default 120 rows, stride 60) that the
embedding network consumes. Block-wise standardization statistics are computed
on training data and stored with the model so inference applies the exact same
transform.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, LengthMismatch
from .geometry import RegionSpec, geometric_features_sequence
from .hashing import hash_json
from .ingest import FaceFrames, VideoFrames, crop_and_resize, detect_faces, extract_landmarks

log = logging.getLogger(__name__)

BEHAVIORAL_DIM = 52
GEOMETRIC_DIM = 36
IDENTITY_DIM = 512
FRAME_DIM = BEHAVIORAL_DIM + GEOMETRIC_DIM + IDENTITY_DIM

BLOCKS = (
    ("behavioral", 0, BEHAVIORAL_DIM),
    ("geometric", BEHAVIORAL_DIM, BEHAVIORAL_DIM + GEOMETRIC_DIM),
    ("identity", BEHAVIORAL_DIM + GEOMETRIC_DIM, FRAME_DIM),
)

WINDOW = 120
STRIDE = 60

PAD_MODES = ("off", "repeat_last")


@dataclass(frozen=True)
class DBaGFrameVector:
    """One frame's fused 600-dim feature vector."""

    values: np.ndarray

    def __post_init__(self):
        if self.values.shape != (FRAME_DIM,):
            raise ValueError(f"expected ({FRAME_DIM},) vector, got {self.values.shape}")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("frame vector must be finite")


@dataclass
class DBaGSlice:
    """A temporal window of consecutive fused frame vectors."""

    matrix: np.ndarray
    start_frame: int
    video_id: str
    label: str | None = None

    def __post_init__(self):
        if self.matrix.ndim != 2:
            raise ValueError(f"slice matrix must be 2-D, got {self.matrix.shape}")
        if not np.all(np.isfinite(self.matrix)):
            raise ValueError("slice matrix must be finite")


def behavioral_features(faces: FaceFrames, registry) -> np.ndarray:
    """One 52-vector per crop, clamped to [0, 1]."""
    adapter = registry.require("behavioral_extractor")
    rows = []
    for pos in range(len(faces)):
        vec = np.asarray(adapter.coefficients(faces.crops[pos]), dtype=np.float32).ravel()
        if vec.shape != (BEHAVIORAL_DIM,):
            raise DimensionMismatch(
                f"behavioral backend {adapter.name} emitted {vec.shape[0]} values, expected {BEHAVIORAL_DIM}"
            )
        if np.any(np.isnan(vec)):
            raise ValueError(f"behavioral backend {adapter.name} emitted NaN")
        rows.append(np.clip(vec, 0.0, 1.0))
    return np.stack(rows) if rows else np.empty((0, BEHAVIORAL_DIM), dtype=np.float32)


def identity_features(faces: FaceFrames, registry) -> np.ndarray:
    """One L2-normalized 512-vector per crop."""
    adapter = registry.require("identity_extractor")
    rows = []
    for pos in range(len(faces)):
        vec = np.asarray(adapter.embedding(faces.crops[pos]), dtype=np.float32).ravel()
        if vec.shape != (IDENTITY_DIM,):
            raise DimensionMismatch(
                f"identity backend {adapter.name} emitted {vec.shape[0]} dims, expected {IDENTITY_DIM}"
            )
        if not np.all(np.isfinite(vec)):
            raise ValueError(f"identity backend {adapter.name} emitted non-finite values")
        norm = float(np.linalg.norm(vec))
        if norm == 0.0:
            raise ValueError(f"identity backend {adapter.name} emitted a zero vector")
        rows.append(vec / norm)
    return np.stack(rows) if rows else np.empty((0, IDENTITY_DIM), dtype=np.float32)


def fuse(f_b: np.ndarray, f_g: np.ndarray, f_i: np.ndarray) -> np.ndarray:
    """Concatenate per-frame blocks in the fixed behavioral|geometric|identity order."""
    f_b, f_g, f_i = (np.asarray(a, dtype=np.float32) for a in (f_b, f_g, f_i))
    if not (f_b.shape[0] == f_g.shape[0] == f_i.shape[0]):
        raise LengthMismatch(
            f"frame counts disagree: behavioral {f_b.shape[0]}, geometric {f_g.shape[0]}, identity {f_i.shape[0]}"
        )
    for arr, (name, lo, hi) in zip((f_b, f_g, f_i), BLOCKS):
        if arr.ndim != 2 or arr.shape[1] != hi - lo:
            raise DimensionMismatch(f"{name} block must be (N, {hi - lo}), got {arr.shape}")
    return np.hstack([f_b, f_g, f_i])


def slice_count(n_frames: int, window: int = WINDOW, stride: int = STRIDE, pad_mode: str = "off") -> int:
    """Number of slices produced for an n_frames video."""
    if pad_mode == "repeat_last" and 0 < n_frames < window:
        return 1
    return max(0, (n_frames - window) // stride + 1)


def slice_features(
    fv: np.ndarray,
    window: int = WINDOW,
    stride: int = STRIDE,
    pad_mode: str = "off",
    video_id: str = "",
    label: str | None = None,
    start_offset: int = 0,
) -> list[DBaGSlice]:
    """Window an (N, D) feature matrix into overlapping slices.

    Videos shorter than the window yield no slices by default; with
    pad_mode="repeat_last" they yield a single slice whose final row is
    repeated to fill the window. start_offset shifts recorded start_frame
    values when fv is itself a sub-range of a longer video.
    """
    if window <= 0:
        raise ValueError("window must be positive")
    if not 0 < stride <= window:
        raise ValueError("stride must be in (0, window]")
    if pad_mode not in PAD_MODES:
        raise ValueError(f"pad_mode must be one of {PAD_MODES}")
    fv = np.asarray(fv, dtype=np.float32)
    n = fv.shape[0]
    slices = []
    for start in range(0, n - window + 1, stride):
        slices.append(
            DBaGSlice(
                matrix=fv[start : start + window].copy(),
                start_frame=start_offset + start,
                video_id=video_id,
                label=label,
            )
        )
    if not slices and pad_mode == "repeat_last" and n > 0:
        pad = np.repeat(fv[-1:], window - n, axis=0)
        slices.append(
            DBaGSlice(
                matrix=np.vstack([fv, pad]),
                start_frame=start_offset,
                video_id=video_id,
                label=label,
            )
        )
    return slices


@dataclass(frozen=True)
class FeatureStats:
    """Per-block scalar standardization statistics (z-score at inference).

    One mean/std pair per feature block; blocks have wildly different native
    scales (blendshape activations in [0,1] versus raw landmark distances), so
    this equalizes their influence before the network.
    """

    means: tuple[float, float, float]
    stds: tuple[float, float, float]

    @classmethod
    def from_rows(cls, rows: np.ndarray) -> "FeatureStats":
        rows = np.asarray(rows, dtype=np.float64)
        if rows.ndim != 2 or rows.shape[1] != FRAME_DIM:
            raise DimensionMismatch(f"stats need (N, {FRAME_DIM}) rows, got {rows.shape}")
        if rows.shape[0] == 0:
            raise ValueError("cannot compute stats from zero rows")
        means, stds = [], []
        for _, lo, hi in BLOCKS:
            block = rows[:, lo:hi]
            means.append(float(block.mean()))
            stds.append(max(float(block.std()), 1e-6))
        return cls(means=tuple(means), stds=tuple(stds))

    def apply(self, matrix: np.ndarray) -> np.ndarray:
        matrix = np.asarray(matrix, dtype=np.float32)
        if matrix.shape[-1] != FRAME_DIM:
            raise DimensionMismatch(f"expected trailing dim {FRAME_DIM}, got {matrix.shape}")
        out = np.empty_like(matrix)
        for (_, lo, hi), mean, std in zip(BLOCKS, self.means, self.stds):
            out[..., lo:hi] = (matrix[..., lo:hi] - mean) / std
        return out

    def to_dict(self) -> dict:
        return {"block_names": [b[0] for b in BLOCKS], "means": list(self.means), "stds": list(self.stds)}

    @classmethod
    def from_dict(cls, d: dict) -> "FeatureStats":
        return cls(means=tuple(d["means"]), stds=tuple(d["stds"]))

    @property
    def stats_hash(self) -> str:
        return hash_json(self.to_dict())


@dataclass
class VideoFeatures:
    """Fused per-frame features for one video plus extraction provenance."""

    features: np.ndarray
    landmarks: np.ndarray
    source_indices: list[int]
    coverage: float


def extract_video_features(
    video: VideoFrames,
    registry,
    region_spec: RegionSpec,
    min_face: int = 120,
) -> VideoFeatures:
    """Full single-video path: detect, crop, landmark, featurize, fuse."""
    if region_spec.feature_dim != GEOMETRIC_DIM:
        raise DimensionMismatch(
            f"region spec yields {region_spec.feature_dim} geometric dims, pipeline needs {GEOMETRIC_DIM}"
        )
    track = detect_faces(video, min_face=min_face, registry=registry)
    faces = crop_and_resize(video, track)
    landmark_frames, kept = extract_landmarks(faces, registry)
    if not kept:
        return VideoFeatures(
            features=np.empty((0, FRAME_DIM), dtype=np.float32),
            landmarks=np.empty((0, 478, 3), dtype=np.float32),
            source_indices=[],
            coverage=track.coverage,
        )
    faces = FaceFrames(
        crops=faces.crops[kept], source_indices=[faces.source_indices[p] for p in kept]
    )
    f_g = geometric_features_sequence(landmark_frames, region_spec)
    f_b = behavioral_features(faces, registry)
    f_i = identity_features(faces, registry)
    fv = fuse(f_b, f_g, f_i)
    return VideoFeatures(
        features=fv,
        landmarks=np.stack([lm.points for lm in landmark_frames]),
        source_indices=faces.source_indices,
        coverage=track.coverage,
    )
