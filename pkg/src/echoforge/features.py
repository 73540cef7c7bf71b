"""Multi-channel log-mel segment tensors.

STFT (640-sample Hann window, 320-sample hop, 1024-point FFT at 32 kHz), 48
HTK mel bands up to 16 kHz on the power spectrum, natural log with a 1e-10
floor, then 15-frame segments with a hop of 4 frames.
"""
from __future__ import annotations

import struct
from functools import lru_cache
from pathlib import Path

import numpy as np

from .config import FeatureConfig

TENSOR_MAGIC = b"EFMT"
TENSOR_VERSION = 1


class FeatureError(ValueError):
    pass


def _window(n: int) -> np.ndarray:
    return 0.5 - 0.5 * np.cos(2 * np.pi * np.arange(n) / n)


def frame_count(n_samples: int, cfg: FeatureConfig | None = None) -> int:
    cfg = cfg or FeatureConfig()
    if n_samples < cfg.win_length:
        return 0
    return (n_samples - cfg.win_length) // cfg.hop_length + 1


def stft(audio: np.ndarray, cfg: FeatureConfig | None = None) -> np.ndarray:
    """Complex spectrogram, shape (frames, n_fft // 2 + 1)."""
    cfg = cfg or FeatureConfig()
    x = np.asarray(audio, dtype=np.float64)
    n_frames = frame_count(len(x), cfg)
    if n_frames < 1:
        raise FeatureError("too short")
    frames = np.lib.stride_tricks.sliding_window_view(x, cfg.win_length)[:: cfg.hop_length][:n_frames]
    return np.fft.rfft(frames * _window(cfg.win_length), cfg.n_fft, axis=1)


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m) / 2595.0) - 1.0)


@lru_cache(maxsize=8)
def mel_filterbank(n_mels: int = 48, n_fft: int = 1024, fs: int = 32000,
                   fmin: float = 0.0, fmax: float = 16000.0) -> np.ndarray:
    """Triangular HTK filters, shape (n_mels, n_fft // 2 + 1).

    The outer halves of the first and last triangles are held at 1 so the DC
    and Nyquist bins are not dead.
    """
    freqs = np.fft.rfftfreq(n_fft, 1.0 / fs)
    edges = mel_to_hz(np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_mels + 2))
    fb = np.zeros((n_mels, len(freqs)))
    for i in range(n_mels):
        lo, mid, hi = edges[i], edges[i + 1], edges[i + 2]
        rise = (freqs - lo) / (mid - lo)
        fall = (hi - freqs) / (hi - mid)
        if i == 0:
            rise = np.where(freqs <= mid, 1.0, rise)
        if i == n_mels - 1:
            fall = np.where(freqs >= mid, 1.0, fall)
        fb[i] = np.clip(np.minimum(rise, fall), 0.0, None)
    fb.setflags(write=False)
    return fb


def mel_spectrogram(spec: np.ndarray, cfg: FeatureConfig | None = None) -> np.ndarray:
    """Log-mel frames, shape (n_mels, frames)."""
    cfg = cfg or FeatureConfig()
    fb = mel_filterbank(cfg.n_mels, cfg.n_fft, cfg.fs, cfg.fmin, cfg.fmax)
    power = np.abs(spec) ** 2
    return np.log(power @ fb.T + cfg.log_floor).T


def log_mel(audio: np.ndarray, cfg: FeatureConfig | None = None) -> np.ndarray:
    return mel_spectrogram(stft(audio, cfg), cfg)


def segment_count(n_frames: int, cfg: FeatureConfig | None = None) -> int:
    cfg = cfg or FeatureConfig()
    if n_frames < cfg.segment_frames:
        return 0
    return (n_frames - cfg.segment_frames) // cfg.segment_hop + 1


def segment_frames(mel: np.ndarray | list[np.ndarray], cfg: FeatureConfig | None = None) -> np.ndarray:
    """Stack channels and cut 15-frame segments: (channels, segments, bands, 15)."""
    cfg = cfg or FeatureConfig()
    mel = np.stack(mel) if isinstance(mel, (list, tuple)) else np.asarray(mel)
    if mel.ndim == 2:
        mel = mel[None]
    n_seg = segment_count(mel.shape[-1], cfg)
    if n_seg < 1:
        raise FeatureError(f"need at least {cfg.segment_frames} mel frames, got {mel.shape[-1]}")
    win = np.lib.stride_tricks.sliding_window_view(mel, cfg.segment_frames, axis=2)
    return np.ascontiguousarray(win[:, :, :: cfg.segment_hop][:, :, :n_seg].transpose(0, 2, 1, 3))


def extract(channels: list[np.ndarray], cfg: FeatureConfig | None = None) -> np.ndarray:
    """Audio channels (equal length) -> MelSegmentTensor."""
    lengths = {len(c) for c in channels}
    if len(lengths) != 1:
        raise FeatureError("all channels must have equal length")
    return segment_frames([log_mel(c, cfg) for c in channels], cfg)


def write_tensor(path: str | Path, tensor: np.ndarray) -> None:
    """Little-endian: magic 'EFMT', u32 version, u32 ndim, u32 dims..., f32 data."""
    t = np.ascontiguousarray(tensor, dtype="<f4")
    with open(path, "wb") as fh:
        fh.write(TENSOR_MAGIC)
        fh.write(struct.pack("<II", TENSOR_VERSION, t.ndim))
        fh.write(struct.pack(f"<{t.ndim}I", *t.shape))
        fh.write(t.tobytes())


def read_tensor(path: str | Path) -> np.ndarray:
    data = Path(path).read_bytes()
    if data[:4] != TENSOR_MAGIC:
        raise FeatureError("not a tensor file")
    version, ndim = struct.unpack_from("<II", data, 4)
    if version != TENSOR_VERSION:
        raise FeatureError(f"unsupported tensor version {version}")
    shape = struct.unpack_from(f"<{ndim}I", data, 12)
    offset = 12 + 4 * ndim
    return np.frombuffer(data, dtype="<f4", offset=offset).reshape(shape).copy()
