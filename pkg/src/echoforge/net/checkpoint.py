"""Checkpoint binary format (little-endian).

::

    b"EFCK"  u32 version  u32 meta_len  meta JSON (utf-8)
    u32 n_tensors
    per tensor: u16 name_len, name, u8 dtype (0=f32, 1=f64), u8 ndim,
                u32 dims[ndim], raw data
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
import torch

from ..config import SCHEMA_VERSION, ModelConfig, update
from .model import MosraNet, Normalizer

MAGIC = b"EFCK"
VERSION = 1
_DTYPES = {0: "<f4", 1: "<f8"}


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    model: MosraNet
    normalizer: Normalizer
    meta: dict[str, Any] = field(default_factory=dict)

    @property
    def mode(self) -> str:
        return "single" if self.model.cfg.in_channels == 1 else "multi"


def save_checkpoint(path: str | Path, ckpt: Checkpoint) -> None:
    meta = {
        "schema": SCHEMA_VERSION,
        "model_config": _model_cfg_dict(ckpt.model.cfg),
        "normalizer": ckpt.normalizer.to_dict(),
        **ckpt.meta,
    }
    blob = json.dumps(meta, sort_keys=True).encode()
    state = ckpt.model.state_dict()
    with open(path, "wb") as fh:
        fh.write(MAGIC + struct.pack("<II", VERSION, len(blob)) + blob)
        fh.write(struct.pack("<I", len(state)))
        for name, t in state.items():
            arr = t.detach().cpu().numpy()
            code = 1 if arr.dtype == np.float64 else 0
            arr = np.ascontiguousarray(arr, dtype=_DTYPES[code])
            raw = name.encode()
            fh.write(struct.pack("<H", len(raw)) + raw)
            fh.write(struct.pack("<BB", code, arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(arr.tobytes())


def load_checkpoint(path: str | Path) -> Checkpoint:
    data = Path(path).read_bytes()
    try:
        return _parse(path, data)
    except (struct.error, ValueError, KeyError, RuntimeError, UnicodeDecodeError) as exc:
        if isinstance(exc, CheckpointError):
            raise
        raise CheckpointError(f"{path}: corrupt checkpoint ({exc})") from exc


def _parse(path: str | Path, data: bytes) -> Checkpoint:
    if data[:4] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint")
    version, n = struct.unpack_from("<II", data, 4)
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    pos = 12
    meta = json.loads(data[pos : pos + n])
    pos += n
    (count,) = struct.unpack_from("<I", data, pos)
    pos += 4
    state = {}
    for _ in range(count):
        (ln,) = struct.unpack_from("<H", data, pos)
        pos += 2
        name = data[pos : pos + ln].decode()
        pos += ln
        code, ndim = struct.unpack_from("<BB", data, pos)
        pos += 2
        shape = struct.unpack_from(f"<{ndim}I", data, pos)
        pos += 4 * ndim
        dtype = np.dtype(_DTYPES[code])
        size = int(np.prod(shape)) * dtype.itemsize
        state[name] = torch.from_numpy(np.frombuffer(data, dtype, count=size // dtype.itemsize, offset=pos).reshape(shape).copy())
        pos += size
    if pos != len(data):
        raise CheckpointError(f"{path}: {len(data) - pos} trailing bytes")
    cfg = update(ModelConfig(), meta.pop("model_config"), "checkpoint.model_config")
    model = MosraNet(cfg)
    if any(t.dtype == torch.float64 for t in state.values()):
        model = model.double()
    model.load_state_dict(state)
    model.eval()
    normalizer = Normalizer.from_dict(meta.pop("normalizer"))
    return Checkpoint(model, normalizer, meta)


def _model_cfg_dict(cfg: ModelConfig) -> dict:
    from ..config import to_dict

    return to_dict(cfg)
