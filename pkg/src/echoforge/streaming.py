"""Sliding-window multi-channel inference over a ring buffer.

Audio arrives in blocks; every ``hop_s`` after ``warmup_s`` the most recent
``buffer_s`` seconds are featurized and scored. Fewer than five physical
channels are tiled cyclically into the model's slots and the slot outputs
are averaged back per physical channel. Each tick also emits scores
standardized across channels.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from scipy import signal

from .audio import prepare_source, synth_noise, synth_speech
from .config import SCHEMA_VERSION, Config, FeatureConfig, StreamConfig
from .features import FeatureError, extract, frame_count, segment_count
from .net.checkpoint import Checkpoint
from .net.infer import predict_tensor, tile_channels, untile
from .net.model import METRICS
from .rir import hybrid_rirs
from .scene import MicSlot, Pose, sample_scene
from .seeding import child_rng

CSV_COLUMNS = ("time_s", "channel", "metric", "value", "standardized")

__all__ = [
    "CSV_COLUMNS",
    "RingBuffer",
    "StreamProcessor",
    "batch_windows",
    "crossfade_fixture",
    "run_stream",
    "standardize_across_channels",
    "tile_channels",
    "untile",
    "write_trace",
]


class RingBuffer:
    """Fixed-capacity per-channel sample store; reads are time-ordered."""

    def __init__(self, n_channels: int, capacity: int):
        if n_channels < 1 or capacity < 1:
            raise ValueError("need at least one channel and positive capacity")
        self.capacity = capacity
        self._data = np.zeros((n_channels, capacity))
        self._write = 0
        self.fill = 0

    @property
    def n_channels(self) -> int:
        return self._data.shape[0]

    def push(self, frames: np.ndarray) -> int:
        frames = np.atleast_2d(np.asarray(frames, dtype=np.float64))
        if frames.shape[0] != self.n_channels:
            raise ValueError(f"expected {self.n_channels} channels, got {frames.shape[0]}")
        n = frames.shape[1]
        if n >= self.capacity:
            self._data[:] = frames[:, n - self.capacity :]
            self._write = 0
        else:
            end = self._write + n
            if end <= self.capacity:
                self._data[:, self._write : end] = frames
            else:
                k = self.capacity - self._write
                self._data[:, self._write :] = frames[:, :k]
                self._data[:, : n - k] = frames[:, k:]
            self._write = end % self.capacity
        self.fill = min(self.capacity, self.fill + n)
        return self.fill

    def read(self) -> np.ndarray:
        if self.fill < self.capacity:
            return self._data[:, : self.fill].copy()
        return np.concatenate([self._data[:, self._write :], self._data[:, : self._write]], axis=1)


def standardize_across_channels(scores: np.ndarray) -> np.ndarray:
    """Z-score over the last axis (channels); zeros where std < 1e-9."""
    s = np.asarray(scores, dtype=np.float64)
    mean = s.mean(axis=-1, keepdims=True)
    std = s.std(axis=-1, keepdims=True)
    safe = np.where(std < 1e-9, 1.0, std)
    return np.where(std < 1e-9, 0.0, (s - mean) / safe)


def tick_samples(n_samples: int, fs: int, cfg: StreamConfig) -> list[int]:
    """Sample positions of the ticks: warmup + k * hop for k = 1..K."""
    hop = int(round(cfg.hop_s * fs))
    warm = int(round(cfg.warmup_s * fs))
    k = (n_samples - warm) // hop if n_samples > warm else 0
    return [warm + i * hop for i in range(1, k + 1)]


def _score(ckpt: Checkpoint, window: np.ndarray, fcfg: FeatureConfig) -> np.ndarray | None:
    if segment_count(frame_count(window.shape[1], fcfg), fcfg) < 1:
        return None
    return predict_tensor(ckpt, extract(list(window), fcfg))


def _rows(t: float, pred: np.ndarray) -> list[tuple]:
    z = standardize_across_channels(pred)
    return [
        (t, c, m, float(pred[k, c]), float(z[k, c]))
        for c in range(pred.shape[1])
        for k, m in enumerate(METRICS)
    ]


class StreamProcessor:
    """Single consumer owning the ring buffer; call :meth:`feed` with each block."""

    def __init__(self, ckpt: Checkpoint, n_channels: int, fs: int = 32000,
                 cfg: StreamConfig | None = None, fcfg: FeatureConfig | None = None):
        self.ckpt, self.fs = ckpt, fs
        self.cfg = cfg or StreamConfig()
        self.fcfg = fcfg or FeatureConfig()
        tile_channels(n_channels, ckpt.model.cfg.in_channels if ckpt.model.cfg.in_channels > 1 else 5)
        self.ring = RingBuffer(n_channels, int(round(self.cfg.buffer_s * fs)))
        self.hop = int(round(self.cfg.hop_s * fs))
        self.next_tick = int(round(self.cfg.warmup_s * fs)) + self.hop
        self.consumed = 0
        self.skipped = 0

    def feed(self, block: np.ndarray) -> list[tuple]:
        """Ingest a block and return rows for every tick it completes."""
        block = np.atleast_2d(np.asarray(block, dtype=np.float64))
        rows = []
        pos = 0
        while pos < block.shape[1]:
            take = min(block.shape[1] - pos, self.next_tick - self.consumed)
            self.ring.push(block[:, pos : pos + take])
            pos += take
            self.consumed += take
            if self.consumed == self.next_tick:
                pred = _score(self.ckpt, self.ring.read(), self.fcfg)
                if pred is None:
                    self.skipped += 1
                else:
                    rows.extend(_rows(self.consumed / self.fs, pred))
                self.next_tick += self.hop
        return rows


def run_stream(ckpt: Checkpoint, channels: list[np.ndarray], fs: int = 32000,
               cfg: StreamConfig | None = None, fcfg: FeatureConfig | None = None,
               block_s: float = 0.1) -> list[tuple]:
    """Stream equal-length channels through :class:`StreamProcessor` in blocks."""
    x = np.stack([np.asarray(c, dtype=np.float64) for c in channels])
    proc = StreamProcessor(ckpt, x.shape[0], fs, cfg, fcfg)
    step = max(1, int(round(block_s * fs)))
    rows = []
    for start in range(0, x.shape[1], step):
        rows.extend(proc.feed(x[:, start : start + step]))
    return rows


def batch_windows(ckpt: Checkpoint, channels: list[np.ndarray], fs: int = 32000,
                  cfg: StreamConfig | None = None, fcfg: FeatureConfig | None = None) -> list[tuple]:
    """Reference: score each tick's window sliced directly from the full signal."""
    cfg = cfg or StreamConfig()
    fcfg = fcfg or FeatureConfig()
    x = np.stack([np.asarray(c, dtype=np.float64) for c in channels])
    cap = int(round(cfg.buffer_s * fs))
    rows = []
    for n in tick_samples(x.shape[1], fs, cfg):
        pred = _score(ckpt, x[:, max(0, n - cap) : n], fcfg)
        if pred is not None:
            rows.extend(_rows(n / fs, pred))
    return rows


def write_trace(path: str | Path, rows: list[tuple], meta: dict | None = None) -> None:
    """CSV trace plus a ``.json`` sidecar with schema, config and seed."""
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_COLUMNS)
        for t, c, m, v, z in rows:
            w.writerow([f"{t:.3f}", c, m, repr(float(v)), repr(float(z))])
    side = {"schema": SCHEMA_VERSION, "columns": list(CSV_COLUMNS), "metrics": list(METRICS), **(meta or {})}
    path.with_name(path.name + ".json").write_text(json.dumps(side, indent=2, sort_keys=True))


def argmax_track(rows: list[tuple], metric: str = "mos") -> tuple[np.ndarray, np.ndarray]:
    """Tick times and the channel with the highest standardized ``metric``."""
    by_t: dict[float, dict[int, float]] = {}
    for t, c, m, _, z in rows:
        if m == metric:
            by_t.setdefault(t, {})[c] = z
    times = np.array(sorted(by_t))
    best = np.array([max(by_t[t], key=by_t[t].get) for t in times])
    return times, best


@dataclass
class CrossfadeFixture:
    channels: list[np.ndarray]
    fs: int
    transitions_s: list[float]
    active: list[int]  # channel nearest the talker in each section


def crossfade_fixture(seed: int = 0, cfg: Config | None = None, n_channels: int = 3,
                      section_s: float = 7.0, fade_s: float = 1.0) -> CrossfadeFixture:
    """Talker moves between spots next to each device: 0 -> 1 -> 2 -> 0.

    One room, ``n_channels`` table devices spread along the long axis, one
    static noise source; the talker's dry signal is split between spots by
    raised-cosine crossfades centred at the section boundaries.
    """
    cfg = cfg or Config()
    fs = cfg.render.fs
    rng = child_rng(seed, "crossfade")
    base = sample_scene(seed, replace(cfg.scene, width_range=(5.0, 8.0)))
    dims = base.room.dims
    long_ax = 0 if dims[0] >= dims[1] else 1
    short_ax = 1 - long_ax

    def pose(along: float, across: float, z: float) -> Pose:
        xy = [0.0, 0.0]
        xy[long_ax], xy[short_ax] = along, across
        return Pose(xy[0], xy[1], z)

    along = np.linspace(0.15, 0.85, n_channels) * dims[long_ax]
    mid = 0.5 * dims[short_ax]
    mics = [MicSlot(pose(float(a), mid, 0.8), "table", None) for a in along]
    spots = [pose(float(a), mid + 0.5, 1.6) for a in along]
    noise_pos = pose(0.5 * dims[long_ax], 0.1 * dims[short_ax] + 0.1, 0.5)

    order = list(range(n_channels)) + [0]
    n_sections = len(order)
    duration = n_sections * section_s
    n = int(round(duration * fs))
    t = np.arange(n) / fs
    transitions = [section_s * (i + 1) for i in range(n_sections - 1)]

    # per-section weights with raised-cosine crossfades
    weights = np.zeros((n_sections, n))
    for i in range(n_sections):
        lo = 0.0 if i == 0 else transitions[i - 1]
        hi = duration if i == n_sections - 1 else transitions[i]
        up = np.clip((t - (lo - fade_s / 2)) / fade_s, 0, 1) if i else np.ones(n)
        down = np.clip(((hi + fade_s / 2) - t) / fade_s, 0, 1) if i < n_sections - 1 else np.ones(n)
        weights[i] = np.sin(0.5 * np.pi * np.minimum(up, down)) ** 2

    speech = prepare_source(synth_speech(rng, duration, cfg.render.source_fs), -10.0, fs, duration).samples
    noise = prepare_source(synth_noise(rng, duration, cfg.render.source_fs), -35.0, fs, duration).samples

    scene = replace(base, mics=mics, noises=[noise_pos])
    spot_rirs = {}
    for s in sorted(set(order)):
        spot_rirs[s] = hybrid_rirs(replace(scene, speech=spots[s]), 0, cfg.rir)
    noise_rirs = hybrid_rirs(scene, 1, cfg.rir)

    out = np.zeros((n_channels, n))
    for i, s in enumerate(order):
        dry = speech * weights[i]
        for m in range(n_channels):
            out[m] += signal.fftconvolve(dry, spot_rirs[s][m].samples)[:n]
    for m in range(n_channels):
        out[m] += signal.fftconvolve(noise, noise_rirs[m].samples)[:n]
    out *= 10 ** (-3 / 20) / np.max(np.abs(out))
    return CrossfadeFixture(list(out), fs, transitions, order)


def switch_times(times: np.ndarray, best: np.ndarray, fixture: CrossfadeFixture) -> list[float | None]:
    """First tick after the previous transition at which argmax equals the next section's channel."""
    found = []
    bounds = [0.0] + fixture.transitions_s + [np.inf]
    for i, tr in enumerate(fixture.transitions_s):
        target = fixture.active[i + 1]
        sel = (times > bounds[i]) & (times < bounds[i + 2]) & (best == target)
        found.append(float(times[sel][0]) if sel.any() else None)
    return found


__all__ += ["CrossfadeFixture", "argmax_track", "switch_times", "tick_samples", "FeatureError"]
