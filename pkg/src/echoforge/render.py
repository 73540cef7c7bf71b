"""Scene rendering: sources -> RIR convolution -> mixtures -> degradations -> labels."""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from typing import Any

import numpy as np
from scipy import signal

from .audio import AudioBuffer, prepare_source
from .config import Config
from .metrics import AcousticLabels, band_snr, compute_labels, pseudo_mos
from .rir import Rir, hybrid_rirs
from .scene import SceneSpec, sample_dbfs
from .seeding import child_rng, derive_seed

DEGRADATIONS = ("identity", "spectral_subtraction", "lowpass_10k")


class DegradationError(ValueError):
    pass


@dataclass
class RenderedScene:
    mics: list[AudioBuffer]
    labels: list[AcousticLabels]
    scene: SceneSpec
    mixtures: np.ndarray  # (n_mics, n) after master gain, before degradation
    speech_wet: np.ndarray
    noise_wet: np.ndarray
    rirs: list[Rir]
    info: dict[str, Any] = field(default_factory=dict)


@lru_cache(maxsize=4)
def _lowpass_sos(fs: int, fc: float):
    return signal.butter(10, fc, btype="lowpass", fs=fs, output="sos")


def spectral_subtraction_gains(
    x: np.ndarray, fs: int, nperseg: int = 512, over: float = 2.0, floor: float = 0.1
) -> np.ndarray:
    """Time-frequency gains of a power spectral subtraction denoiser.

    The noise PSD is the per-bin mean over the quietest 10% of frames.
    """
    _, _, z = signal.stft(x, fs, nperseg=nperseg)
    power = np.abs(z) ** 2
    frame_energy = power.sum(axis=0)
    quiet = np.argsort(frame_energy, kind="stable")[: max(1, power.shape[1] // 10)]
    noise = power[:, quiet].mean(axis=1, keepdims=True)
    with np.errstate(divide="ignore", invalid="ignore"):
        gain = np.sqrt(np.maximum(1.0 - over * noise / power, floor**2))
    return np.nan_to_num(gain, nan=floor)


def apply_gains(x: np.ndarray, gains: np.ndarray, fs: int, nperseg: int = 512) -> np.ndarray:
    _, _, z = signal.stft(x, fs, nperseg=nperseg)
    _, y = signal.istft(z * gains, fs, nperseg=nperseg)
    return y[: len(x)]


def degrade(audio: AudioBuffer, variant: str, seed: int = 0) -> AudioBuffer:
    """Stand-in for an on-device denoiser. Deterministic per (variant, seed)."""
    x, fs = audio.samples, audio.sample_rate_hz
    if variant == "identity":
        return AudioBuffer(x, fs)
    if variant == "lowpass_10k":
        return AudioBuffer(signal.sosfiltfilt(_lowpass_sos(fs, 10000.0), x), fs)
    if variant == "spectral_subtraction":
        return AudioBuffer(apply_gains(x, spectral_subtraction_gains(x, fs), fs), fs)
    raise DegradationError(f"unknown degradation variant {variant!r}")


def render_scene(
    scene: SceneSpec,
    speech_audio: AudioBuffer,
    noise_audios: list[AudioBuffer],
    cfg: Config | None = None,
) -> RenderedScene:
    """Render the five device recordings and their labels for one scene."""
    cfg = cfg or Config()
    rc = cfg.render
    fs = rc.fs
    if not 1 <= len(noise_audios) <= 2:
        raise ValueError("expected one or two noise buffers")
    if len(noise_audios) != len(scene.noises):
        raise ValueError("noise buffer count does not match scene noise sources")
    rng = child_rng(scene.seed, "levels")
    speech_dbfs, _ = sample_dbfs(rng, cfg.scene)
    noise_dbfs = [sample_dbfs(rng, cfg.scene)[1] for _ in noise_audios]
    master_dbfs = float(rng.uniform(*rc.master_dbfs))

    speech = prepare_source(speech_audio, speech_dbfs, fs, rc.duration_s).samples
    noises = [prepare_source(a, d, fs, rc.duration_s).samples for a, d in zip(noise_audios, noise_dbfs)]

    rir_cfg = cfg.rir
    speech_rirs = hybrid_rirs(scene, 0, rir_cfg)
    noise_rirs = [hybrid_rirs(scene, i + 1, rir_cfg) for i in range(len(noises))]
    n_rir = max(len(r) for r in speech_rirs + [r for rs in noise_rirs for r in rs])

    def stack(rirs):
        out = np.zeros((len(rirs), n_rir))
        for i, r in enumerate(rirs):
            out[i, : len(r)] = r.samples
        return out

    n = len(speech)  # recordings keep the source duration; the reverb tail past it is cut
    speech_wet = signal.fftconvolve(speech[None, :], stack(speech_rirs), axes=1)[:, :n]
    noise_wet = np.zeros_like(speech_wet)
    for src, rirs in zip(noises, noise_rirs):
        noise_wet += signal.fftconvolve(src[None, :], stack(rirs), axes=1)[:, :n]
    mixtures = speech_wet + noise_wet

    peak = np.max(np.abs(mixtures))
    gain = 10 ** (master_dbfs / 20) / peak if peak > 0 else 1.0
    mixtures = mixtures * gain
    speech_wet = speech_wet * gain
    noise_wet = noise_wet * gain

    labels = []
    for m, rir in enumerate(speech_rirs):
        lab = compute_labels(rir, speech_wet[m], noise_wet[m], cfg.metrics)
        labels.append(lab)

    variants = [rc.degradations[m % len(rc.degradations)] for m in range(len(scene.mics))]
    mics = [
        degrade(AudioBuffer(mixtures[m], fs), v, derive_seed(scene.seed, "degrade", m))
        for m, v in enumerate(variants)
    ]
    info = {
        "speech_dbfs": speech_dbfs,
        "noise_dbfs": noise_dbfs,
        "master_dbfs": master_dbfs,
        "master_gain": float(gain),
        "degradations": variants,
        "rir_length": int(n_rir),
        "n_rays": speech_rirs[0].meta["n_rays"],
    }
    return RenderedScene(mics, labels, scene, mixtures, speech_wet, noise_wet, speech_rirs, info)


__all__ = [
    "DEGRADATIONS",
    "RenderedScene",
    "apply_gains",
    "band_snr",
    "degrade",
    "pseudo_mos",
    "render_scene",
    "spectral_subtraction_gains",
]
