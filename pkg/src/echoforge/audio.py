"""Audio buffers, WAV I/O, resampling and the built-in synthetic sources."""
from __future__ import annotations

from dataclasses import dataclass
from math import gcd
from pathlib import Path

import numpy as np
from scipy import signal
from scipy.io import wavfile


class SilentSourceError(ValueError):
    pass


@dataclass
class AudioBuffer:
    samples: np.ndarray
    sample_rate_hz: int

    def __post_init__(self):
        if self.sample_rate_hz <= 0:
            raise ValueError("sample rate must be positive")

    @property
    def duration_s(self) -> float:
        return len(self.samples) / self.sample_rate_hz


def read_wav(path: str | Path) -> AudioBuffer:
    fs, data = wavfile.read(str(path))
    if np.issubdtype(data.dtype, np.integer):
        info = np.iinfo(data.dtype)
        data = data.astype(np.float64) / max(abs(info.min), info.max)
    data = np.asarray(data, dtype=np.float64)
    if data.ndim == 2:
        data = data.mean(axis=1)
    return AudioBuffer(data, int(fs))


def write_wav(path: str | Path, samples: np.ndarray, fs: int) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    wavfile.write(str(path), int(fs), np.asarray(samples, dtype=np.float32))


def resample(x: np.ndarray, fs_in: int, fs_out: int) -> np.ndarray:
    """Windowed-sinc polyphase resampling."""
    if fs_in == fs_out:
        return np.asarray(x, dtype=np.float64)
    g = gcd(int(fs_in), int(fs_out))
    return signal.resample_poly(x, fs_out // g, fs_in // g)


def peak_dbfs(x: np.ndarray) -> float:
    peak = np.max(np.abs(x))
    return float(20 * np.log10(peak)) if peak > 0 else -np.inf


def prepare_source(
    audio: AudioBuffer, target_dbfs: float, fs: int = 32000, duration_s: float = 10.0
) -> AudioBuffer:
    """Resample to ``fs``, loop/truncate to ``duration_s`` and set the peak level."""
    if audio.samples.size == 0 or not np.any(audio.samples):
        raise SilentSourceError("silent source")
    x = resample(audio.samples, audio.sample_rate_hz, fs)
    n = int(round(duration_s * fs))
    x = np.tile(x, -(-n // len(x)))[:n]
    peak = np.max(np.abs(x))
    if peak == 0:
        raise SilentSourceError("silent source")
    return AudioBuffer(x * (10 ** (target_dbfs / 20) / peak), fs)


# vowel formants (F1, F2, F3) in Hz
_VOWELS = np.array([
    [730, 1090, 2440],
    [270, 2290, 3010],
    [530, 1840, 2480],
    [570, 840, 2410],
    [300, 870, 2240],
    [660, 1720, 2410],
    [490, 1350, 1690],
])


def _resonator(f: float, bw: float, fs: int):
    r = np.exp(-np.pi * bw / fs)
    theta = 2 * np.pi * f / fs
    return [1 - r], [1.0, -2 * r * np.cos(theta), r * r]


def synth_speech(rng: np.random.Generator, duration_s: float = 6.0, fs: int = 16000) -> AudioBuffer:
    """Speech-like test signal: glottal pulse train through vowel formants,
    4 Hz syllabic amplitude modulation and pauses between word groups."""
    n = int(duration_s * fs)
    t = np.arange(n) / fs
    f0 = rng.uniform(90, 220) * (1 + 0.08 * np.sin(2 * np.pi * rng.uniform(0.2, 0.6) * t))
    phase = np.cumsum(f0) / fs
    pulses = np.diff(np.floor(phase), prepend=0.0)
    excitation = pulses + 0.05 * rng.standard_normal(n)

    out = np.zeros(n)
    syl = int(0.25 * fs)
    for start in range(0, n, syl):
        seg = excitation[start : start + syl]
        formants = _VOWELS[rng.integers(len(_VOWELS))] * rng.uniform(0.9, 1.1)
        y = seg
        for f, bw in zip(formants, (80, 100, 140)):
            b, a = _resonator(min(f, 0.45 * fs), bw, fs)
            y = signal.lfilter(b, a, y)
        out[start : start + syl] = y

    envelope = np.sin(np.pi * rng.uniform(3.6, 4.4) * t + rng.uniform(0, np.pi)) ** 2
    gate = np.ones(n)
    pos = int(rng.uniform(0.3, 1.0) * fs)
    while pos < n:
        gap = int(rng.uniform(0.15, 0.5) * fs)
        gate[pos : pos + gap] = 0.0
        pos += gap + int(rng.uniform(0.8, 2.0) * fs)
    gate = signal.lfilter([0.01], [1, -0.99], gate)
    out = out * envelope * gate
    return AudioBuffer(out / (np.max(np.abs(out)) + 1e-12), fs)


def synth_noise(rng: np.random.Generator, duration_s: float = 4.0, fs: int = 16000) -> AudioBuffer:
    """Colored noise (random 1/f^beta slope, rolled off below ~50 Hz) with slow
    level fluctuation and an occasional mains hum."""
    n = int(duration_s * fs)
    spec = rng.standard_normal(n // 2 + 1) + 1j * rng.standard_normal(n // 2 + 1)
    f = np.fft.rfftfreq(n, 1 / fs)
    f[0] = f[1]
    spec *= f ** (-rng.uniform(0.0, 1.2) / 2) / np.sqrt(1 + (50.0 / f) ** 4)
    x = np.fft.irfft(spec, n)
    t = np.arange(n) / fs
    x *= 1 + rng.uniform(0, 0.5) * np.sin(2 * np.pi * rng.uniform(0.1, 1.0) * t)
    if rng.random() < 0.3:
        hum = rng.choice([50.0, 60.0])
        x += 0.1 * np.std(x) * np.sin(2 * np.pi * hum * t)
    return AudioBuffer(x / np.max(np.abs(x)), fs)
