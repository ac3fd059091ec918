"""File-first pipeline configuration with flag overrides.

One JSON file describes an entire run: paths, backend names, the landmark
region spec, model/training/inference settings, and the split protocol. All
randomness funnels through the single top-level seed. Configs round-trip
losslessly through their serialized form, and the canonical-JSON hash is
stamped into every artifact a run produces.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

from .geometry import RegionSpec, default_region_spec
from .hashing import hash_json
from .inference import InferenceConfig
from .network import ModelConfig
from .trainer import TrainConfig

DEFAULT_BACKENDS = {
    "face_detector": "opencv-haar",
    "landmark_extractor": "intensity-grid",
    "behavioral_extractor": "intensity-hist",
    "identity_extractor": "pooled-pixels",
}


@dataclass
class PipelineConfig:
    cache_dir: str = "caches"
    artifacts_dir: str = "artifacts"
    backends: dict = field(default_factory=lambda: dict(DEFAULT_BACKENDS))
    region_spec: RegionSpec = field(default_factory=default_region_spec)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    inference: InferenceConfig = field(default_factory=InferenceConfig)
    split_mode: str = "random_80_20"
    seed: int = 0
    min_face: int = 120
    window: int = 120
    stride: int = 60
    pad_mode: str = "off"

    def to_dict(self) -> dict:
        return {
            "cache_dir": self.cache_dir,
            "artifacts_dir": self.artifacts_dir,
            "backends": dict(self.backends),
            "region_spec": self.region_spec.to_dict(),
            "model": self.model.to_dict(),
            "train": self.train.to_dict(),
            "inference": self.inference.to_dict(),
            "split_mode": self.split_mode,
            "seed": self.seed,
            "min_face": self.min_face,
            "window": self.window,
            "stride": self.stride,
            "pad_mode": self.pad_mode,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineConfig":
        return cls(
            cache_dir=d.get("cache_dir", "caches"),
            artifacts_dir=d.get("artifacts_dir", "artifacts"),
            backends=dict(d.get("backends", DEFAULT_BACKENDS)),
            region_spec=RegionSpec.from_dict(d["region_spec"]) if "region_spec" in d else default_region_spec(),
            model=ModelConfig.from_dict(d["model"]) if "model" in d else ModelConfig(),
            train=TrainConfig.from_dict(d["train"]) if "train" in d else TrainConfig(),
            inference=InferenceConfig.from_dict(d["inference"]) if "inference" in d else InferenceConfig(),
            split_mode=d.get("split_mode", "random_80_20"),
            seed=d.get("seed", 0),
            min_face=d.get("min_face", 120),
            window=d.get("window", 120),
            stride=d.get("stride", 60),
            pad_mode=d.get("pad_mode", "off"),
        )

    def save(self, path: str | Path) -> Path:
        path = Path(path)
        with open(path, "w", encoding="utf-8") as f:
            json.dump(self.to_dict(), f, sort_keys=True, indent=2)
            f.write("\n")
        return path

    @classmethod
    def load(cls, path: str | Path) -> "PipelineConfig":
        path = Path(path)
        with open(path, "r", encoding="utf-8") as f:
            return cls.from_dict(json.load(f))

    def with_overrides(
        self,
        seed: int | None = None,
        margin: float | None = None,
        m_neighbors: int | None = None,
        pad_mode: str | None = None,
    ) -> "PipelineConfig":
        """Apply CLI flag overrides; the seed flag re-seeds training too."""
        cfg = self
        if seed is not None:
            cfg = replace(cfg, seed=seed, train=replace(cfg.train, seed=seed))
        if margin is not None:
            cfg = replace(cfg, train=replace(cfg.train, margin=margin))
        if m_neighbors is not None:
            cfg = replace(cfg, inference=replace(cfg.inference, m_neighbors=m_neighbors))
        if pad_mode is not None:
            cfg = replace(cfg, pad_mode=pad_mode)
        return cfg

    @property
    def config_hash(self) -> str:
        return hash_json(self.to_dict())

    def extract_chain(self, backend_versions: dict) -> dict:
        """Provenance stamped into feature caches; drives idempotent re-runs."""
        return {
            "backend_versions": dict(backend_versions),
            "region_spec_hash": self.region_spec.spec_hash,
            "min_face": self.min_face,
        }
