"""Embedding network over 120 x 600 feature slices.

The slice is treated as a single-channel 2-D input (time x feature). A 7x7
stride-2 stem with batch norm and 3x3 max pooling feeds five residual stages;
each stage holds residual blocks of two 3x3 convolutions with batch norm and a
squeeze-and-excitation gate after the second convolution, downsampling by 2 at
the entry of stages 2-5. Adaptive average pooling and two leaky-ReLU fully
connected layers produce the embedding. All spatial reductions use
ceiling-mode arithmetic (3x3 kernels with unit padding), so every downsample
maps a side of length d to ceil(d / 2).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .errors import DimensionMismatch, ShapeError
from .hashing import hash_json

INPUT_ROWS = 120
INPUT_COLS = 600

N_STAGES = 5


@dataclass(frozen=True)
class ModelConfig:
    stem_channels: int = 64
    stage_channels: tuple[int, ...] = (64, 128, 256, 512, 512)
    blocks_per_stage: int = 1
    se_reduction_ratio: int = 16
    embedding_dim: int = 128
    fc_hidden: int = 256
    leaky_relu_slope: float = 0.01
    margin: float = 1.0

    def __post_init__(self):
        if len(self.stage_channels) != N_STAGES:
            raise ValueError(f"exactly {N_STAGES} stages required, got {len(self.stage_channels)}")
        if min(self.stage_channels) < 1 or self.stem_channels < 1:
            raise ValueError("channel widths must be positive")
        if self.blocks_per_stage < 1:
            raise ValueError("blocks_per_stage must be >= 1")
        if self.embedding_dim < 1 or self.fc_hidden < 1:
            raise ValueError("embedding_dim and fc_hidden must be positive")
        if self.se_reduction_ratio < 1:
            raise ValueError("se_reduction_ratio must be >= 1")
        if self.margin <= 0:
            raise ValueError("margin must be positive")

    def to_dict(self) -> dict:
        return {
            "stem_channels": self.stem_channels,
            "stage_channels": list(self.stage_channels),
            "blocks_per_stage": self.blocks_per_stage,
            "se_reduction_ratio": self.se_reduction_ratio,
            "embedding_dim": self.embedding_dim,
            "fc_hidden": self.fc_hidden,
            "leaky_relu_slope": self.leaky_relu_slope,
            "margin": self.margin,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        d["stage_channels"] = tuple(d["stage_channels"])
        return cls(**d)

    @property
    def config_hash(self) -> str:
        return hash_json(self.to_dict())


class SqueezeExcite(nn.Module):
    """Channel recalibration: global average pool, reduce/expand, sigmoid gate."""

    def __init__(self, channels: int, reduction_ratio: int):
        super().__init__()
        hidden = max(1, channels // reduction_ratio)
        self.reduce = nn.Linear(channels, hidden)
        self.expand = nn.Linear(hidden, channels)

    def scale_factors(self, x: torch.Tensor) -> torch.Tensor:
        squeezed = x.mean(dim=(2, 3))
        return torch.sigmoid(self.expand(torch.relu(self.reduce(squeezed))))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return x * self.scale_factors(x)[:, :, None, None]


class ResidualBlock(nn.Module):
    def __init__(self, in_channels: int, out_channels: int, stride: int, se_ratio: int):
        super().__init__()
        self.conv1 = nn.Conv2d(in_channels, out_channels, 3, stride=stride, padding=1, bias=False)
        self.bn1 = nn.BatchNorm2d(out_channels)
        self.conv2 = nn.Conv2d(out_channels, out_channels, 3, stride=1, padding=1, bias=False)
        self.bn2 = nn.BatchNorm2d(out_channels)
        self.se = SqueezeExcite(out_channels, se_ratio)
        if stride != 1 or in_channels != out_channels:
            self.shortcut = nn.Sequential(
                nn.Conv2d(in_channels, out_channels, 1, stride=stride, bias=False),
                nn.BatchNorm2d(out_channels),
            )
        else:
            self.shortcut = nn.Identity()

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        out = torch.relu(self.bn1(self.conv1(x)))
        out = self.se(self.bn2(self.conv2(out)))
        return torch.relu(out + self.shortcut(x))


class DBaGNet(nn.Module):
    """Maps standardized (B, 120, 600) slices to (B, embedding_dim) vectors."""

    def __init__(self, config: ModelConfig | None = None):
        super().__init__()
        self.config = config or ModelConfig()
        cfg = self.config
        self.stem = nn.Sequential(
            nn.Conv2d(1, cfg.stem_channels, 7, stride=2, padding=3, bias=False),
            nn.BatchNorm2d(cfg.stem_channels),
            nn.ReLU(inplace=True),
        )
        self.pool = nn.MaxPool2d(3, stride=2, padding=1)
        stages = []
        in_ch = cfg.stem_channels
        for stage_idx, out_ch in enumerate(cfg.stage_channels):
            blocks = []
            for block_idx in range(cfg.blocks_per_stage):
                stride = 2 if (stage_idx > 0 and block_idx == 0) else 1
                blocks.append(ResidualBlock(in_ch, out_ch, stride, cfg.se_reduction_ratio))
                in_ch = out_ch
            stages.append(nn.Sequential(*blocks))
        self.stages = nn.ModuleList(stages)
        self.head_pool = nn.AdaptiveAvgPool2d(1)
        self.fc1 = nn.Linear(in_ch, cfg.fc_hidden)
        self.fc2 = nn.Linear(cfg.fc_hidden, cfg.embedding_dim)
        self.act = nn.LeakyReLU(cfg.leaky_relu_slope)

    def _check_input(self, x: torch.Tensor) -> torch.Tensor:
        if x.dim() == 3:
            x = x[:, None, :, :]
        if x.dim() != 4 or x.shape[1] != 1 or x.shape[2] != INPUT_ROWS or x.shape[3] != INPUT_COLS:
            raise ShapeError(
                f"expected (B, {INPUT_ROWS}, {INPUT_COLS}) slices, got tensor of shape {tuple(x.shape)}"
            )
        return x

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = self._check_input(x)
        x = self.pool(self.stem(x))
        for stage in self.stages:
            x = stage(x)
        x = self.head_pool(x).flatten(1)
        x = self.act(self.fc1(x))
        return self.act(self.fc2(x))

    @torch.no_grad()
    def downsample_trace(self, rows: int = INPUT_ROWS, cols: int = INPUT_COLS) -> list[tuple[int, int]]:
        """Actual spatial dims after stem, pool, and each stage (eval-mode probe)."""
        was_training = self.training
        self.eval()
        try:
            x = torch.zeros(1, 1, rows, cols)
            trace = []
            x = self.stem(x)
            trace.append((x.shape[2], x.shape[3]))
            x = self.pool(x)
            trace.append((x.shape[2], x.shape[3]))
            for stage in self.stages:
                x = stage(x)
                trace.append((x.shape[2], x.shape[3]))
            return trace
        finally:
            self.train(was_training)


def pairwise_distance(u: torch.Tensor, v: torch.Tensor, eps: float = 0.0) -> torch.Tensor:
    """Euclidean norm of u - v over the last dimension.

    eps, when positive, is added under the square root: the value barely moves
    but the gradient stays bounded as u approaches v. The default is the exact
    formula (distance 0 at u == v).
    """
    u, v = torch.as_tensor(u), torch.as_tensor(v)
    if u.shape[-1] != v.shape[-1]:
        raise DimensionMismatch(f"embedding dims differ: {u.shape[-1]} vs {v.shape[-1]}")
    return torch.sqrt(((u - v) ** 2).sum(dim=-1) + eps)


def triplet_loss(
    anchor: torch.Tensor,
    positive: torch.Tensor,
    negative: torch.Tensor,
    margin: float = 1.0,
    eps: float = 0.0,
) -> torch.Tensor:
    """Hinge on the anchor-positive vs anchor-negative distance gap.

    Elementwise over leading dims: max(D(a, p) - D(a, n) + margin, 0). Callers
    average over the batch for the training objective; training passes a small
    eps so a collapsing embedding cannot produce NaN gradients.
    """
    gap = (
        pairwise_distance(anchor, positive, eps)
        - pairwise_distance(anchor, negative, eps)
        + margin
    )
    return torch.clamp(gap, min=0.0)


def embed_slices(model: DBaGNet, stats, slices, batch_size: int = 64) -> np.ndarray:
    """Eval-mode embeddings for DBaGSlice sequences, standardized with stats."""
    model.eval()
    out = []
    with torch.no_grad():
        for i in range(0, len(slices), batch_size):
            batch = slices[i : i + batch_size]
            mats = np.stack([stats.apply(s.matrix) for s in batch])
            if mats.shape[1] != INPUT_ROWS or mats.shape[2] != INPUT_COLS:
                raise ShapeError(f"slices must be {INPUT_ROWS}x{INPUT_COLS}, got {mats.shape[1:]}")
            emb = model(torch.from_numpy(mats))
            out.append(emb.numpy().astype(np.float32))
    if not out:
        return np.empty((0, model.config.embedding_dim), dtype=np.float32)
    return np.concatenate(out)
