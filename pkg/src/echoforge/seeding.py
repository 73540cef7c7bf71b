"""Named child RNG streams derived from one root seed."""
from __future__ import annotations

import zlib

import numpy as np


def _key(name) -> int:
    if isinstance(name, (int, np.integer)):
        return int(name) & 0xFFFFFFFF
    return zlib.crc32(str(name).encode("utf-8"))


def seed_sequence(root: int, *names) -> np.random.SeedSequence:
    return np.random.SeedSequence(int(root), spawn_key=tuple(_key(n) for n in names))


def derive_seed(root: int, *names) -> int:
    """A 64-bit seed that depends only on ``root`` and the stream names."""
    lo, hi = seed_sequence(root, *names).generate_state(2, dtype=np.uint32)
    return (int(hi) << 32) | int(lo)


def child_rng(root: int, *names) -> np.random.Generator:
    return np.random.default_rng(seed_sequence(root, *names))
