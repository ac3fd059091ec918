"""Triplet construction, embedding-network training, and reference-set export.

Triplets are sampled uniformly (no hard mining): every slice whose class has a
second member serves as an anchor once per epoch (times triplets_per_anchor),
paired with a random distinct same-label positive and a random other-label
negative. Sampling, weight init, and the optimizer all run off one seed, so a
(seed, data, config) triple fully determines the final weights in
single-process mode.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from . import cache
from .descriptor import BLOCKS, DBaGSlice, FeatureStats, FRAME_DIM
from .errors import DivergenceDetected, InsufficientClassSamples
from .hashing import hash_file, hash_json
from .network import DBaGNet, ModelConfig, embed_slices, triplet_loss

CHECKPOINT_FORMAT = "dbag-checkpoint-v1"

# sqrt guard used only inside the training loop; keeps gradients finite if the
# embedding momentarily collapses (distance ~0 between anchor and positive)
TRAIN_DISTANCE_EPS = 1e-8


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    batch_size: int = 32
    learning_rate: float = 1e-3
    margin: float = 1.0
    seed: int = 0
    optimizer: str = "adam"
    triplets_per_anchor: int = 1
    # optional feature-space augmentation hooks, off by default
    augment_noise_std: float = 0.0
    augment_time_jitter: int = 0
    num_threads: int | None = None

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1 or self.triplets_per_anchor < 1:
            raise ValueError("epochs, batch_size, triplets_per_anchor must be positive")
        if self.learning_rate < 0 or self.margin <= 0:
            raise ValueError("learning_rate must be >= 0 and margin > 0")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.augment_noise_std < 0 or self.augment_time_jitter < 0:
            raise ValueError("augmentation settings must be non-negative")

    def to_dict(self) -> dict:
        return {
            "epochs": self.epochs,
            "batch_size": self.batch_size,
            "learning_rate": self.learning_rate,
            "margin": self.margin,
            "seed": self.seed,
            "optimizer": self.optimizer,
            "triplets_per_anchor": self.triplets_per_anchor,
            "augment_noise_std": self.augment_noise_std,
            "augment_time_jitter": self.augment_time_jitter,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return cls(**d)

    @property
    def config_hash(self) -> str:
        return hash_json(self.to_dict())


@dataclass
class Triplet:
    anchor: DBaGSlice
    positive: DBaGSlice
    negative: DBaGSlice


def _group_by_label(slices: list[DBaGSlice]) -> dict[str, list[int]]:
    groups: dict[str, list[int]] = {}
    for idx, s in enumerate(slices):
        if s.label is None:
            raise ValueError(f"slice {idx} ({s.video_id}) has no label; training needs labeled slices")
        groups.setdefault(s.label, []).append(idx)
    return groups


def build_triplets(slices: list[DBaGSlice], config: TrainConfig, epoch: int = 0) -> list[Triplet]:
    """One epoch's triplets, deterministic in (config.seed, epoch).

    Anchors are slices whose class holds at least one other member; slices of
    singleton classes still serve as negatives.
    """
    groups = _group_by_label(slices)
    if len(groups) < 2:
        raise InsufficientClassSamples(f"triplets need two classes, found {sorted(groups)}")
    anchors = [i for label, idxs in groups.items() if len(idxs) >= 2 for i in idxs]
    if not anchors:
        raise InsufficientClassSamples("no class has at least two samples")
    anchors.sort()
    rng = np.random.default_rng([config.seed, epoch])
    triplets = []
    for a in rng.permutation(anchors):
        label = slices[a].label
        same = groups[label]
        others = [i for lab, idxs in groups.items() if lab != label for i in idxs]
        for _ in range(config.triplets_per_anchor):
            j = int(rng.integers(len(same) - 1))
            pos = same[j] if same[j] != a else same[-1]
            neg = others[int(rng.integers(len(others)))]
            triplets.append(Triplet(anchor=slices[a], positive=slices[pos], negative=slices[neg]))
    return triplets


@dataclass
class TrainResult:
    model: DBaGNet
    stats: FeatureStats
    history: list[dict]
    model_config: ModelConfig
    train_config: TrainConfig


def compute_stats(slices: list[DBaGSlice]) -> FeatureStats:
    """Block stats accumulated over every row of every slice (float64 sums)."""
    if not slices:
        raise ValueError("cannot compute stats from zero slices")
    sums = np.zeros(len(BLOCKS))
    sqsums = np.zeros(len(BLOCKS))
    counts = np.zeros(len(BLOCKS))
    for s in slices:
        m = np.asarray(s.matrix, dtype=np.float64)
        if m.shape[1] != FRAME_DIM:
            raise ValueError(f"slice has {m.shape[1]} dims, expected {FRAME_DIM}")
        for bi, (_, lo, hi) in enumerate(BLOCKS):
            block = m[:, lo:hi]
            sums[bi] += block.sum()
            sqsums[bi] += (block ** 2).sum()
            counts[bi] += block.size
    means = sums / counts
    variances = np.maximum(sqsums / counts - means ** 2, 0.0)
    stds = np.maximum(np.sqrt(variances), 1e-6)
    return FeatureStats(means=tuple(float(v) for v in means), stds=tuple(float(v) for v in stds))


def _make_optimizer(model: DBaGNet, config: TrainConfig) -> torch.optim.Optimizer:
    if config.optimizer == "sgd":
        return torch.optim.SGD(model.parameters(), lr=config.learning_rate)
    return torch.optim.Adam(model.parameters(), lr=config.learning_rate)


def _augment(mats: np.ndarray, config: TrainConfig, rng: np.random.Generator) -> np.ndarray:
    if config.augment_time_jitter > 0:
        j = config.augment_time_jitter
        shifts = rng.integers(-j, j + 1, size=mats.shape[0])
        mats = np.stack([np.roll(m, int(s), axis=0) for m, s in zip(mats, shifts)])
    if config.augment_noise_std > 0:
        mats = mats + rng.normal(0.0, config.augment_noise_std, size=mats.shape).astype(np.float32)
    return mats


def train(
    slices: list[DBaGSlice],
    model_config: ModelConfig | None = None,
    config: TrainConfig | None = None,
    stats: FeatureStats | None = None,
) -> TrainResult:
    """Train a fresh network on labeled slices; returns model, stats, history."""
    model_config = model_config or ModelConfig()
    config = config or TrainConfig()
    if config.num_threads is not None:
        torch.set_num_threads(config.num_threads)
    stats = stats or compute_stats(slices)

    torch.manual_seed(config.seed)
    model = DBaGNet(model_config)
    optimizer = _make_optimizer(model, config)
    history: list[dict] = []
    model.train()
    for epoch in range(config.epochs):
        triplets = build_triplets(slices, config, epoch=epoch)
        aug_rng = np.random.default_rng([config.seed, epoch, 1])
        total = 0.0
        for start in range(0, len(triplets), config.batch_size):
            batch = triplets[start : start + config.batch_size]
            mats = np.stack(
                [stats.apply(t.anchor.matrix) for t in batch]
                + [stats.apply(t.positive.matrix) for t in batch]
                + [stats.apply(t.negative.matrix) for t in batch]
            )
            if config.augment_noise_std > 0 or config.augment_time_jitter > 0:
                mats = _augment(mats, config, aug_rng)
            emb = model(torch.from_numpy(mats))
            a, p, n = emb.split(len(batch))
            loss = triplet_loss(a, p, n, config.margin, eps=TRAIN_DISTANCE_EPS).mean()
            if not torch.isfinite(loss):
                raise DivergenceDetected(f"non-finite loss at epoch {epoch}")
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            total += loss.item() * len(batch)
        history.append({"epoch": epoch, "mean_loss": total / len(triplets), "n_triplets": len(triplets)})
    return TrainResult(
        model=model, stats=stats, history=history, model_config=model_config, train_config=config
    )


@dataclass
class Checkpoint:
    """A loaded checkpoint: the eval-ready model plus provenance."""

    model: DBaGNet
    stats: FeatureStats
    model_config: ModelConfig
    meta: dict
    path: Path | None = None

    @property
    def stats_hash(self) -> str:
        return self.stats.stats_hash

    @property
    def file_hash(self) -> str:
        return self.meta.get("_file_hash", "")


def save_checkpoint(path: str | Path, result: TrainResult, extra_hashes: dict | None = None) -> Path:
    """Serialize weights + configs + stats into one self-describing container."""
    path = Path(path)
    tensors = {k: v.detach().cpu().numpy() for k, v in result.model.state_dict().items()}
    hashes = {
        "model_config": result.model_config.config_hash,
        "train_config": result.train_config.config_hash,
        "stats": result.stats.stats_hash,
    }
    hashes.update(extra_hashes or {})
    meta = {
        "format": CHECKPOINT_FORMAT,
        "model_config": result.model_config.to_dict(),
        "train_config": result.train_config.to_dict(),
        "stats": result.stats.to_dict(),
        "hashes": hashes,
        "final_loss": result.history[-1]["mean_loss"] if result.history else None,
    }
    cache.write_checkpoint(path, tensors, meta)
    return path


def load_checkpoint(path: str | Path) -> Checkpoint:
    path = Path(path)
    tensors, meta = cache.read_checkpoint(path)
    model_config = ModelConfig.from_dict(meta["model_config"])
    model = DBaGNet(model_config)
    state = {k: torch.from_numpy(v) for k, v in tensors.items()}
    model.load_state_dict(state)
    model.eval()
    stats = FeatureStats.from_dict(meta["stats"])
    meta = dict(meta)
    meta["_file_hash"] = hash_file(path)
    return Checkpoint(model=model, stats=stats, model_config=model_config, meta=meta, path=path)


def write_history(path: str | Path, history: list[dict]) -> Path:
    """Training history as line-delimited JSON records."""
    path = Path(path)
    with open(path, "w", encoding="utf-8") as f:
        for record in history:
            f.write(json.dumps(record, sort_keys=True) + "\n")
    return path


@dataclass
class ReferenceSet:
    """Labeled embedding bank built from the training slices."""

    embeddings: np.ndarray
    labels: list[str]
    checkpoint_hash: str = ""
    manifest_hash: str = ""

    def __post_init__(self):
        if self.embeddings.ndim != 2 or self.embeddings.shape[0] != len(self.labels):
            raise ValueError(
                f"embeddings {self.embeddings.shape} do not align with {len(self.labels)} labels"
            )

    def __len__(self) -> int:
        return int(self.embeddings.shape[0])

    def save(self, path: str | Path) -> Path:
        meta = {"checkpoint_hash": self.checkpoint_hash, "manifest_hash": self.manifest_hash}
        return cache.write_reference_set(path, self.embeddings, self.labels, meta)

    @classmethod
    def load(cls, path: str | Path) -> "ReferenceSet":
        emb, labels, meta = cache.read_reference_set(path)
        return cls(
            embeddings=emb,
            labels=labels,
            checkpoint_hash=meta.get("checkpoint_hash", ""),
            manifest_hash=meta.get("manifest_hash", ""),
        )


def build_reference_set(
    checkpoint: Checkpoint,
    slices: list[DBaGSlice],
    manifest_hash: str = "",
    batch_size: int = 64,
    subsample: int | None = None,
    seed: int = 0,
) -> ReferenceSet:
    """Embed labeled slices in inference mode, in input order.

    subsample optionally caps the bank size (seeded uniform choice without
    replacement) for memory-bound deployments; default keeps every slice.
    """
    labels = []
    for s in slices:
        if s.label is None:
            raise ValueError(f"reference slice from {s.video_id} has no label")
        labels.append(s.label)
    if subsample is not None and subsample < len(slices):
        rng = np.random.default_rng(seed)
        keep = np.sort(rng.choice(len(slices), size=subsample, replace=False))
        slices = [slices[i] for i in keep]
        labels = [labels[i] for i in keep]
    emb = embed_slices(checkpoint.model, checkpoint.stats, slices, batch_size=batch_size)
    return ReferenceSet(
        embeddings=emb,
        labels=labels,
        checkpoint_hash=checkpoint.file_hash,
        manifest_hash=manifest_hash,
    )
