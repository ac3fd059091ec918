"""Seeded synthetic feature generator and the committed end-to-end benchmark.

The generator fabricates fused 600-dim per-frame features for two classes that
share a static Gaussian base profile but differ in temporal drift: each class
carries a plaid wave (a sinusoid over time multiplied by a smooth sinusoid
over the feature axis) at class-specific time and feature frequencies, and
fakes additionally get a small static smooth offset. Per-entry noise dominates
any single value, so separation requires aggregating the 2-D texture a slice
exposes; the smooth feature-axis waves keep that signal local enough for small
convolution kernels.

For video i with label y (t indexes frames, j feature columns):

    frame[t, j] = base[j] + offset_i[j]
                  + A * sin(2*pi*f_y*t/120 + phase_i) * sin(2*pi*g_y*j/600)
                  + [y == fake] * gap * cos(2*pi*g_gap*j/600)
                  + noise_std * eps[t, j]

with time frequencies f_real=1.0, f_fake=2.5 cycles per 120 frames, feature
frequencies g_real=2, g_fake=5, g_gap=3 cycles per 600 columns, a per-video
Gaussian identity offset, a uniform random time phase per video, and i.i.d.
Gaussian noise. All randomness comes from one seed, so the generated caches
are bit-reproducible.

The benchmark trains a compact network (the production-default widths are
sized for GPU training and are far too slow for a CPU smoke benchmark) with
the default training configuration on 200 train videos of 240 frames and
scores 50 held-out videos.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .cache import write_feature_cache
from .descriptor import FRAME_DIM
from .evalharness import EvalReport, ExperimentSpec, ManifestRecord, run_experiment, write_manifest
from .hashing import hash_json
from .inference import InferenceConfig
from .network import ModelConfig
from .trainer import TrainConfig


@dataclass(frozen=True)
class SyntheticConfig:
    n_train_videos: int = 200
    n_test_videos: int = 50
    n_frames: int = 240
    seed: int = 2024
    noise_std: float = 1.0
    drift_amplitude: float = 0.6
    mean_gap: float = 0.3
    identity_std: float = 0.02
    real_frequency: float = 1.0
    fake_frequency: float = 2.5
    real_col_frequency: float = 2.0
    fake_col_frequency: float = 5.0
    gap_col_frequency: float = 3.0

    def to_dict(self) -> dict:
        return {
            "n_train_videos": self.n_train_videos,
            "n_test_videos": self.n_test_videos,
            "n_frames": self.n_frames,
            "seed": self.seed,
            "noise_std": self.noise_std,
            "drift_amplitude": self.drift_amplitude,
            "mean_gap": self.mean_gap,
            "identity_std": self.identity_std,
            "real_frequency": self.real_frequency,
            "fake_frequency": self.fake_frequency,
            "real_col_frequency": self.real_col_frequency,
            "fake_col_frequency": self.fake_col_frequency,
            "gap_col_frequency": self.gap_col_frequency,
        }

    @property
    def config_hash(self) -> str:
        return hash_json(self.to_dict())


# Compact benchmark network: five SE-residual stages, small widths, trainable
# on a 4-core CPU inside the benchmark's wall-clock budget.
BENCHMARK_MODEL_CONFIG = ModelConfig(
    stem_channels=4,
    stage_channels=(4, 8, 16, 32, 32),
    se_reduction_ratio=4,
    embedding_dim=32,
    fc_hidden=64,
)

BENCHMARK_SEED = 7


def benchmark_train_config() -> TrainConfig:
    return TrainConfig(seed=BENCHMARK_SEED, num_threads=min(4, os.cpu_count() or 1))


def _class_patterns(cfg: SyntheticConfig) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    rng = np.random.default_rng([cfg.seed, 0])
    base = rng.normal(0.0, 1.0, FRAME_DIM)
    j = np.arange(FRAME_DIM)
    col_real = np.sin(2.0 * np.pi * cfg.real_col_frequency * j / FRAME_DIM)
    col_fake = np.sin(2.0 * np.pi * cfg.fake_col_frequency * j / FRAME_DIM)
    col_gap = np.cos(2.0 * np.pi * cfg.gap_col_frequency * j / FRAME_DIM)
    return base, col_real, col_fake, col_gap


def generate_video_features(cfg: SyntheticConfig, video_index: int, label: str) -> np.ndarray:
    """Deterministic (n_frames, 600) feature matrix for one synthetic video."""
    base, col_real, col_fake, col_gap = _class_patterns(cfg)
    rng = np.random.default_rng([cfg.seed, 1, video_index])
    col_wave = col_fake if label == "fake" else col_real
    freq = cfg.fake_frequency if label == "fake" else cfg.real_frequency
    mean = base + (cfg.mean_gap * col_gap if label == "fake" else 0.0)
    offset = rng.normal(0.0, cfg.identity_std, FRAME_DIM)
    phase = rng.uniform(0.0, 2.0 * np.pi)
    t = np.arange(cfg.n_frames)
    time_wave = cfg.drift_amplitude * np.sin(2.0 * np.pi * freq * t / 120.0 + phase)
    noise = rng.normal(0.0, cfg.noise_std, (cfg.n_frames, FRAME_DIM))
    return (mean + offset + time_wave[:, None] * col_wave[None, :] + noise).astype(np.float32)


def _balanced_labels(n: int) -> list[str]:
    return ["real" if i % 2 == 0 else "fake" for i in range(n)]


def write_synthetic_dataset(root: str | Path, cfg: SyntheticConfig | None = None) -> dict:
    """Write feature caches plus train/test manifests; returns the paths."""
    cfg = cfg or SyntheticConfig()
    root = Path(root)
    cache_dir = root / "cache"
    cache_dir.mkdir(parents=True, exist_ok=True)

    def emit(split: str, count: int, index_base: int) -> list[ManifestRecord]:
        records = []
        labels = _balanced_labels(count)
        for i, label in enumerate(labels):
            video_index = index_base + i
            video_id = f"syn-{split}-{video_index:04d}"
            features = generate_video_features(cfg, video_index, label)
            path = cache_dir / f"{video_id}.feat.dbag"
            write_feature_cache(
                path,
                features,
                meta={
                    "video_id": video_id,
                    "label": label,
                    "dataset": "synthetic",
                    "n_frames": int(features.shape[0]),
                    "n_source_frames": int(features.shape[0]),
                    "source_indices": list(range(features.shape[0])),
                    "backend_versions": {"generator": f"synthetic:{cfg.config_hash[:12]}"},
                    "region_spec_hash": "",
                },
            )
            # path is relative to the manifest directory so manifests (and
            # the artifact hashes chained off them) are workdir-independent
            records.append(
                ManifestRecord(
                    video_id=video_id,
                    path=str(path.relative_to(root)),
                    label=label,
                    dataset_name="synthetic",
                )
            )
        return records

    train_records = emit("train", cfg.n_train_videos, 0)
    test_records = emit("test", cfg.n_test_videos, cfg.n_train_videos)
    train_manifest = write_manifest(root / "train_manifest.jsonl", train_records)
    test_manifest = write_manifest(root / "test_manifest.jsonl", test_records)
    return {
        "train_manifest": train_manifest,
        "test_manifest": test_manifest,
        "cache_dir": cache_dir,
        "config": cfg,
    }


def run_benchmark(
    workdir: str | Path,
    synthetic_cfg: SyntheticConfig | None = None,
    model_config: ModelConfig | None = None,
    train_config: TrainConfig | None = None,
    infer_config: InferenceConfig | None = None,
) -> tuple[EvalReport, dict]:
    """Generate the synthetic dataset (if absent) and run it end to end.

    Returns the evaluation report plus the artifact paths (checkpoint,
    reference set, report) for hash comparison across runs.
    """
    workdir = Path(workdir)
    synthetic_cfg = synthetic_cfg or SyntheticConfig()
    model_config = model_config or BENCHMARK_MODEL_CONFIG
    train_config = train_config or benchmark_train_config()
    infer_config = infer_config or InferenceConfig()

    data_dir = workdir / "data"
    if not (data_dir / "train_manifest.jsonl").exists():
        paths = write_synthetic_dataset(data_dir, synthetic_cfg)
    else:
        paths = {
            "train_manifest": data_dir / "train_manifest.jsonl",
            "test_manifest": data_dir / "test_manifest.jsonl",
            "cache_dir": data_dir / "cache",
            "config": synthetic_cfg,
        }
    out_dir = workdir / "artifacts"
    out_dir.mkdir(parents=True, exist_ok=True)
    report = run_experiment(
        train_spec=ExperimentSpec(
            manifest_path=paths["train_manifest"], cache_dir=paths["cache_dir"], split_mode="full"
        ),
        test_spec=ExperimentSpec(
            manifest_path=paths["test_manifest"], cache_dir=paths["cache_dir"], split_mode="full"
        ),
        model_config=model_config,
        train_config=train_config,
        infer_config=infer_config,
        out_dir=out_dir,
    )
    artifacts = {
        "checkpoint": out_dir / "checkpoint.dbag",
        "reference_set": out_dir / "reference_set.dbag",
        "report": out_dir / "eval_report.json",
        "history": out_dir / "train_history.jsonl",
    }
    return report, artifacts
