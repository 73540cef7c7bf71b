"""Multi-channel joint MOS + room-acoustics network.

Per segment a small CNN maps the (channels, 48 bands, 15 frames) patch to a
d-dim embedding; the sequence of segment embeddings (plus sinusoidal
positions) goes through a pre-norm transformer encoder, is mean-pooled, and
five two-layer heads each emit one value per channel.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn
from torch.nn import functional as F

from ..config import ModelConfig

METRICS = ("mos", "sti", "t60_s", "drr_db", "c50_db")
LOSS_WEIGHTS = (2.0, 0.2, 0.2, 0.2, 0.2)


class ShapeError(ValueError):
    pass


def _pooled(n: int, times: int) -> int:
    for _ in range(times):
        n //= 2
    return n


class SegmentCNN(nn.Module):
    """3x3 conv + ReLU + 2x2 max-pool, three times, then a linear projection."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        widths = (cfg.in_channels, *cfg.cnn_channels)
        self.convs = nn.ModuleList(
            nn.Conv2d(a, b, kernel_size=3, padding=1) for a, b in zip(widths[:-1], widths[1:])
        )
        h = _pooled(cfg.n_bands, len(self.convs))
        w = _pooled(cfg.segment_frames, len(self.convs))
        if h < 1 or w < 1:
            raise ShapeError("segment too small for the pooling stack")
        self.proj = nn.Linear(widths[-1] * h * w, cfg.d_model)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        for conv in self.convs:
            x = F.max_pool2d(F.relu(conv(x)), 2)
        return self.proj(x.flatten(1))


def positional_encoding(n: int, d: int, dtype=torch.float32) -> torch.Tensor:
    pos = torch.arange(n, dtype=torch.float64)[:, None]
    div = torch.exp(torch.arange(0, d, 2, dtype=torch.float64) * (-math.log(10000.0) / d))
    pe = torch.zeros(n, d, dtype=torch.float64)
    pe[:, 0::2] = torch.sin(pos * div)
    pe[:, 1::2] = torch.cos(pos * div)[:, : d // 2]
    return pe.to(dtype)


class MultiHeadAttention(nn.Module):
    def __init__(self, d: int, n_heads: int):
        super().__init__()
        if d % n_heads:
            raise ShapeError("d_model must be divisible by n_heads")
        self.n_heads = n_heads
        self.qkv = nn.Linear(d, 3 * d)
        self.out = nn.Linear(d, d)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        b, s, d = x.shape
        q, k, v = self.qkv(x).view(b, s, 3, self.n_heads, d // self.n_heads).permute(2, 0, 3, 1, 4)
        att = torch.softmax(q @ k.transpose(-1, -2) / math.sqrt(d // self.n_heads), dim=-1)
        return self.out((att @ v).transpose(1, 2).reshape(b, s, d))


class EncoderBlock(nn.Module):
    """Pre-norm: x + attn(ln(x)), then x + ff(ln(x))."""

    def __init__(self, d: int, n_heads: int, d_ff: int):
        super().__init__()
        self.ln1 = nn.LayerNorm(d)
        self.attn = MultiHeadAttention(d, n_heads)
        self.ln2 = nn.LayerNorm(d)
        self.ff1 = nn.Linear(d, d_ff)
        self.ff2 = nn.Linear(d_ff, d)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = x + self.attn(self.ln1(x))
        return x + self.ff2(F.gelu(self.ff1(self.ln2(x))))


class MosraNet(nn.Module):
    """Input ``[batch, channels, segments, bands, frames]``;
    output ``[batch, 5 metrics, n_outputs]`` on the normalized scale."""

    def __init__(self, cfg: ModelConfig | None = None):
        super().__init__()
        self.cfg = cfg = cfg or ModelConfig()
        self.cnn = SegmentCNN(cfg)
        self.blocks = nn.ModuleList(
            EncoderBlock(cfg.d_model, cfg.n_heads, cfg.d_ff) for _ in range(cfg.n_layers)
        )
        self.norm = nn.LayerNorm(cfg.d_model) if cfg.n_layers else nn.Identity()
        self.heads = nn.ModuleList(
            nn.Sequential(nn.Linear(cfg.d_model, cfg.head_hidden), nn.ReLU(), nn.Linear(cfg.head_hidden, cfg.n_outputs))
            for _ in METRICS
        )

    def embed(self, x: torch.Tensor) -> torch.Tensor:
        cfg = self.cfg
        if x.ndim != 5 or tuple(x.shape[1:2] + x.shape[3:]) != (cfg.in_channels, cfg.n_bands, cfg.segment_frames):
            raise ShapeError(
                f"expected [B, {cfg.in_channels}, S, {cfg.n_bands}, {cfg.segment_frames}], got {list(x.shape)}"
            )
        b, c, s, h, w = x.shape
        seg = x.permute(0, 2, 1, 3, 4).reshape(b * s, c, h, w)
        return self.cnn(seg).view(b, s, -1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        z = self.embed(x)
        z = z + positional_encoding(z.shape[1], z.shape[2], z.dtype)
        for block in self.blocks:
            z = block(z)
        pooled = self.norm(z).mean(dim=1)
        return torch.stack([head(pooled) for head in self.heads], dim=1)


def parameter_count(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters() if p.requires_grad)


def loss_terms(pred: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    """Per-metric MSE over batch and channels, shape [5]."""
    if pred.shape != target.shape:
        raise ShapeError(f"prediction {list(pred.shape)} vs target {list(target.shape)}")
    return ((pred - target) ** 2).mean(dim=(0, 2))


def loss(pred: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    """2 * MSE_MOS + 0.2 * (MSE_STI + MSE_T60 + MSE_DRR + MSE_C50)."""
    w = torch.tensor(LOSS_WEIGHTS, dtype=pred.dtype)
    return (w * loss_terms(pred, target)).sum()


@dataclass
class Normalizer:
    """Per-metric standardization fitted on training labels."""

    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64)
        self.std = np.asarray(self.std, dtype=np.float64)
        if np.any(self.std <= 0):
            raise ValueError("std must be positive")

    @classmethod
    def fit(cls, labels: np.ndarray) -> "Normalizer":
        """``labels`` has the metric axis last."""
        flat = np.asarray(labels, dtype=np.float64).reshape(-1, len(METRICS))
        std = flat.std(axis=0)
        return cls(flat.mean(axis=0), np.where(std > 1e-12, std, 1.0))

    def _shape(self, a: np.ndarray, axis: int):
        shape = [1] * a.ndim
        shape[axis] = len(METRICS)
        return self.mean.reshape(shape), self.std.reshape(shape)

    def normalize(self, a, axis: int = -1) -> np.ndarray:
        a = np.asarray(a, dtype=np.float64)
        m, s = self._shape(a, axis)
        return (a - m) / s

    def denormalize(self, a, axis: int = -1) -> np.ndarray:
        a = np.asarray(a, dtype=np.float64)
        m, s = self._shape(a, axis)
        return a * s + m

    def to_dict(self) -> dict:
        return {"metrics": list(METRICS), "mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "Normalizer":
        return cls(d["mean"], d["std"])


def flop_count(cfg: ModelConfig | None = None, n_segments: int = 247) -> dict[str, int]:
    """Analytic multiply-accumulate count of one forward pass (batch 1).

    Activations, pooling, softmax and normalization are ignored; the
    attention score/mix products are reported separately because they grow
    quadratically in ``n_segments``.
    """
    cfg = cfg or ModelConfig()
    h, w = cfg.n_bands, cfg.segment_frames
    cnn = 0
    widths = (cfg.in_channels, *cfg.cnn_channels)
    for a, b in zip(widths[:-1], widths[1:]):
        cnn += b * a * 9 * h * w
        h, w = h // 2, w // 2
    cnn += widths[-1] * h * w * cfg.d_model
    cnn *= n_segments
    d = cfg.d_model
    linear = cfg.n_layers * n_segments * (4 * d * d + 2 * d * cfg.d_ff)
    attention = cfg.n_layers * 2 * n_segments * n_segments * d
    heads = len(METRICS) * (d * cfg.head_hidden + cfg.head_hidden * cfg.n_outputs)
    return {
        "cnn": cnn,
        "transformer_linear": linear,
        "attention": attention,
        "heads": heads,
        "total": cnn + linear + attention + heads,
    }


def single_channel_config(cfg: ModelConfig | None = None) -> ModelConfig:
    """Same trunk, one input channel and one output per head."""
    from dataclasses import replace

    return replace(cfg or ModelConfig(), in_channels=1, n_outputs=1)
