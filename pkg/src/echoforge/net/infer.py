"""Inference helpers shared by ``predict``, evaluation and streaming."""
from __future__ import annotations

import numpy as np
import torch

from ..config import FeatureConfig
from ..features import extract
from .checkpoint import Checkpoint
from .model import METRICS


def tile_channels(n_available: int, n_slots: int = 5) -> list[int]:
    """Cyclic slot-to-channel mapping, e.g. 3 channels -> [0, 1, 2, 0, 1]."""
    if n_available < 1:
        raise ValueError("need at least one channel")
    if n_available > n_slots:
        raise ValueError(f"at most {n_slots} channels supported, got {n_available}")
    return [i % n_available for i in range(n_slots)]


def untile(values: np.ndarray, mapping: list[int], n_physical: int) -> np.ndarray:
    """Average slot outputs ``[..., slots]`` back onto physical channels."""
    values = np.asarray(values)
    out = np.zeros(values.shape[:-1] + (n_physical,))
    for ch in range(n_physical):
        slots = [s for s, c in enumerate(mapping) if c == ch]
        out[..., ch] = values[..., slots].mean(axis=-1)
    return out


@torch.no_grad()
def predict_tensor(ckpt: Checkpoint, tensor: np.ndarray) -> np.ndarray:
    """Denormalized predictions ``[5 metrics, channels]`` for one
    ``[channels, segments, bands, frames]`` feature tensor."""
    model = ckpt.model
    model.eval()
    dtype = next(model.parameters()).dtype
    x = torch.from_numpy(np.ascontiguousarray(tensor)).to(dtype)
    n_ch = x.shape[0]
    if model.cfg.in_channels == 1:
        out = model(x[:, None]).numpy()[:, :, 0].T
        return ckpt.normalizer.denormalize(out, axis=0)
    mapping = tile_channels(n_ch, model.cfg.in_channels)
    out = model(x[mapping][None]).numpy()[0]
    return untile(ckpt.normalizer.denormalize(out, axis=0), mapping, n_ch)


def predict_audio(ckpt: Checkpoint, channels: list[np.ndarray], cfg: FeatureConfig | None = None) -> dict:
    """Per-channel metric dictionaries for equal-length 32 kHz channels."""
    pred = predict_tensor(ckpt, extract(channels, cfg))
    return {
        "channels": [{m: float(pred[k, c]) for k, m in enumerate(METRICS)} for c in range(pred.shape[1])],
    }
