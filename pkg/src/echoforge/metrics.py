"""Room-acoustic labels from impulse responses: EDC, T60, C50, DRR, STI, SNR."""
from __future__ import annotations

from dataclasses import asdict, dataclass
from functools import lru_cache

import numpy as np
from scipy import signal

from .config import MetricsConfig
from .rir import Rir

STI_BANDS = (125.0, 250.0, 500.0, 1000.0, 2000.0, 4000.0, 8000.0)
MODULATION_FREQS = (0.63, 0.8, 1.0, 1.25, 1.6, 2.0, 2.5, 3.15, 4.0, 5.0, 6.3, 8.0, 10.0, 12.5)
STI_WEIGHTS = (0.13, 0.14, 0.11, 0.12, 0.19, 0.17, 0.14)


class SilentRirError(ValueError):
    pass


class InsufficientDecayError(ValueError):
    pass


@dataclass
class EnergyDecayCurve:
    values_db: np.ndarray
    sample_rate_hz: int

    @property
    def times(self) -> np.ndarray:
        return np.arange(len(self.values_db)) / self.sample_rate_hz


@dataclass
class AcousticLabels:
    sti: float
    t60_s: float
    c50_db: float
    drr_db: float
    snr_db: float
    mos: float

    def to_dict(self) -> dict[str, float]:
        return {k: float(v) for k, v in asdict(self).items()}


def _as_array(rir, fs):
    if isinstance(rir, Rir):
        return np.asarray(rir.samples, dtype=np.float64), rir.sample_rate_hz
    return np.asarray(rir, dtype=np.float64), fs


def _ratio_db(num: float, den: float, clamp: float) -> float:
    if den <= 0:
        return clamp
    if num <= 0:
        return -clamp
    return float(np.clip(10 * np.log10(num / den), -clamp, clamp))


def energy_decay_curve(rir: Rir | np.ndarray, fs: int = 32000) -> EnergyDecayCurve:
    """Schroeder backward integral, normalized to 0 dB at t = 0."""
    h, fs = _as_array(rir, fs)
    cum = np.cumsum((h**2)[::-1])[::-1]
    if cum.size == 0 or cum[0] == 0:
        raise SilentRirError("silent RIR")
    with np.errstate(divide="ignore"):
        values = 10 * np.log10(cum / cum[0])
    return EnergyDecayCurve(values, fs)


def estimate_t60(edc: EnergyDecayCurve) -> float:
    """T30 line fit (-5 to -35 dB), falling back to T20 (-5 to -25 dB)."""
    v = edc.values_db
    lowest = v.min()
    if lowest <= -35:
        stop = -35.0
    elif lowest <= -25:
        stop = -25.0
    else:
        raise InsufficientDecayError("insufficient decay")
    sel = (v <= -5.0) & (v >= stop)
    if sel.sum() < 2:
        raise InsufficientDecayError("insufficient decay")
    slope, _ = np.polyfit(edc.times[sel], v[sel], 1)
    if slope >= 0:
        raise InsufficientDecayError("insufficient decay")
    return float(-60.0 / slope)


def clarity_c50(
    rir: Rir | np.ndarray, fs: int = 32000, t0: int | None = None, cfg: MetricsConfig | None = None
) -> float:
    cfg = cfg or MetricsConfig()
    h, fs = _as_array(rir, fs)
    if t0 is None:
        t0 = int(np.argmax(np.abs(h)))
    e = h**2
    split = t0 + int(round(cfg.c50_window_ms * 1e-3 * fs)) + 1
    return _ratio_db(e[t0:split].sum(), e[split:].sum(), cfg.clamp_db)


def drr(rir: Rir | np.ndarray, fs: int = 32000, cfg: MetricsConfig | None = None) -> float:
    cfg = cfg or MetricsConfig()
    h, fs = _as_array(rir, fs)
    e = h**2
    peak = int(np.argmax(np.abs(h)))
    w = int(round(cfg.drr_window_ms * 1e-3 * fs))
    lo, hi = max(0, peak - w), peak + w + 1
    return _ratio_db(e[lo:hi].sum(), e[:lo].sum() + e[hi:].sum(), cfg.clamp_db)


@lru_cache(maxsize=32)
def _octave_sos(fc: float, fs: int):
    return signal.butter(3, [fc / np.sqrt(2), fc * np.sqrt(2)], btype="bandpass", fs=fs, output="sos")


_PHASORS: dict[int, np.ndarray] = {}


def _phasors(fs: int, n: int) -> np.ndarray:
    table = _PHASORS.get(fs)
    if table is None or table.shape[1] < n:
        size = max(n, 2 * fs)
        t = np.arange(size) / fs
        table = np.exp(-2j * np.pi * np.asarray(MODULATION_FREQS)[:, None] * t)
        _PHASORS[fs] = table
    return table[:, :n]


def _mtf(energy: np.ndarray, fs: int) -> np.ndarray:
    total = energy.sum()
    if total <= 0:
        return np.zeros(len(MODULATION_FREQS))
    return np.abs(_phasors(fs, len(energy)) @ energy) / total


@lru_cache(maxsize=32)
def _filter_mtf(fc: float, fs: int, n: int) -> np.ndarray:
    impulse = np.zeros(n)
    impulse[0] = 1.0
    return _mtf(signal.sosfilt(_octave_sos(fc, fs), impulse) ** 2, fs)


def modulation_transfer(
    rir: Rir | np.ndarray, fs: int = 32000, snr_per_band=None
) -> np.ndarray:
    """MTF matrix (7 octave bands x 14 modulation frequencies) in [0, 1].

    Each band's MTF is divided by the MTF of the octave filter's own impulse
    response so the filterbank does not smear the envelope.
    """
    h, fs = _as_array(rir, fs)
    pad = fs // 2
    x = np.concatenate([h, np.zeros(pad)])
    m = np.empty((len(STI_BANDS), len(MODULATION_FREQS)))
    for k, fc in enumerate(STI_BANDS):
        hk = signal.sosfilt(_octave_sos(fc, fs), x)
        with np.errstate(divide="ignore", invalid="ignore"):
            m[k] = _mtf(hk**2, fs) / _filter_mtf(fc, fs, pad + 1)
    m = np.clip(np.nan_to_num(m, nan=0.0), 0.0, 1.0)
    if snr_per_band is not None:
        snr = np.broadcast_to(np.asarray(snr_per_band, dtype=np.float64), (len(STI_BANDS),))
        m = m / (1.0 + 10 ** (-snr[:, None] / 10))
    return m


def sti_from_mtf(m: np.ndarray, weights=STI_WEIGHTS) -> float:
    with np.errstate(divide="ignore"):
        app_snr = 10 * np.log10(m / (1.0 - m))
    app_snr = np.clip(np.nan_to_num(app_snr, nan=-15.0, posinf=15.0, neginf=-15.0), -15.0, 15.0)
    ti = (app_snr + 15.0) / 30.0
    return float(np.dot(np.asarray(weights), ti.mean(axis=1)))


def sti_from_rir(
    rir: Rir | np.ndarray, fs: int = 32000, snr_per_band=None, weights=STI_WEIGHTS
) -> float:
    """Indirect STI (no redundancy correction) with optional per-band noise."""
    return sti_from_mtf(modulation_transfer(rir, fs, snr_per_band), weights)


def snr_from_signals(speech_wet: np.ndarray, noise_wet: np.ndarray, clamp_db: float = 60.0) -> float:
    if len(speech_wet) != len(noise_wet):
        raise ValueError("speech and noise must have equal lengths")
    return _ratio_db(float(np.sum(np.square(speech_wet))), float(np.sum(np.square(noise_wet))), clamp_db)


def band_snr(speech_wet: np.ndarray, noise_wet: np.ndarray, fs: int, clamp_db: float = 60.0) -> np.ndarray:
    """SNR per STI octave band from the spectra of separately rendered stems."""
    f = np.fft.rfftfreq(len(speech_wet), 1 / fs)
    ps = np.abs(np.fft.rfft(speech_wet)) ** 2
    pn = np.abs(np.fft.rfft(noise_wet)) ** 2
    out = []
    for fc in STI_BANDS:
        sel = (f >= fc / np.sqrt(2)) & (f < fc * np.sqrt(2))
        out.append(_ratio_db(ps[sel].sum(), pn[sel].sum(), clamp_db))
    return np.array(out)


def pseudo_mos(sti: float, snr_db: float) -> float:
    """Deterministic stand-in for a teacher MOS model."""
    clamp01 = lambda v: min(1.0, max(0.0, v))  # noqa: E731
    return 1.0 + 4.0 * clamp01(0.6 * sti + 0.4 * clamp01((snr_db + 5.0) / 35.0))


def compute_labels(
    rir: Rir,
    speech_wet: np.ndarray | None = None,
    noise_wet: np.ndarray | None = None,
    cfg: MetricsConfig | None = None,
) -> AcousticLabels:
    """All labels for one speech-to-mic path."""
    cfg = cfg or MetricsConfig()
    fs = rir.sample_rate_hz
    if speech_wet is not None and noise_wet is not None:
        snr = snr_from_signals(speech_wet, noise_wet, cfg.clamp_db)
        per_band = band_snr(speech_wet, noise_wet, fs, cfg.clamp_db) if cfg.sti_noise_aware else None
    else:
        snr, per_band = cfg.clamp_db, None
    sti = sti_from_rir(rir, fs, per_band, cfg.sti_weights)
    t60 = estimate_t60(energy_decay_curve(rir))
    c50 = clarity_c50(rir, fs, rir.direct_delay_samples, cfg)
    d = drr(rir, fs, cfg)
    return AcousticLabels(sti, t60, c50, d, snr, pseudo_mos(sti, snr))
