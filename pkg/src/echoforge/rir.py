"""Room impulse responses: image sources (specular, low order) + ray-traced diffuse tail."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Any, Sequence

import numpy as np
from scipy import signal

from . import kernels
from .config import RirConfig
from .scene import Pose, RoomSpec, SceneSpec, sabine_t60
from .seeding import child_rng, derive_seed

OCTAVE_CENTERS_8 = tuple(125.0 * 2**k for k in range(8))


class GeometryError(ValueError):
    pass


@dataclass
class ImageSource:
    position: np.ndarray
    order: int
    reflection_gain: np.ndarray
    indices: tuple[int, int, int] = (0, 0, 0)


@dataclass
class EnergyHistogram:
    bin_width_s: float
    energy: np.ndarray  # (n_bands, n_bins)
    n_rays: int = 0
    absorbed: np.ndarray | None = None  # (n_rays, n_bands)
    remaining: np.ndarray | None = None

    @property
    def duration_s(self) -> float:
        return self.energy.shape[-1] * self.bin_width_s


@dataclass
class Rir:
    samples: np.ndarray
    sample_rate_hz: int = 32000
    direct_delay_samples: int = 0
    meta: dict[str, Any] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.samples)


def _wall_counts(n: int) -> tuple[int, int]:
    """(near-wall, far-wall) bounce counts for lattice index ``n`` on one axis."""
    if n >= 0:
        return n // 2, (n + 1) // 2
    n = -n
    return (n + 1) // 2, n // 2


def _image_coord(n: int, length: float, s: float) -> float:
    return n * length + s if n % 2 == 0 else (n + 1) * length - s


def enumerate_image_sources(room: RoomSpec, source: Pose, max_order: int) -> list[ImageSource]:
    """All shoebox images with total reflection order <= ``max_order``."""
    if max_order < 0:
        raise ValueError("max_order must be >= 0")
    dims = room.dims
    src = source.array()
    refl = np.sqrt(1.0 - room.absorption_matrix())  # (6, n_bands)
    images = []
    for i in range(-max_order, max_order + 1):
        for j in range(-(max_order - abs(i)), max_order - abs(i) + 1):
            rest = max_order - abs(i) - abs(j)
            for k in range(-rest, rest + 1):
                pos = np.array([_image_coord(n, dims[a], src[a]) for a, n in enumerate((i, j, k))])
                gain = np.ones(refl.shape[1])
                for axis, n in enumerate((i, j, k)):
                    near, far = _wall_counts(n)
                    gain = gain * refl[2 * axis] ** near * refl[2 * axis + 1] ** far
                images.append(ImageSource(pos, abs(i) + abs(j) + abs(k), gain, (i, j, k)))
    return images


def band_partition(n_fft: int, fs: float, centers: Sequence[float] = OCTAVE_CENTERS_8) -> np.ndarray:
    """Octave-band weights over rfft bins that sum to one at every bin."""
    f = np.fft.rfftfreq(n_fft, 1.0 / fs)
    centers = np.asarray(centers, dtype=np.float64)
    w = np.zeros((len(centers), len(f)))
    w[0, f < centers[0]] = 1.0
    w[-1, f >= centers[-1]] = 1.0
    for b in range(len(centers) - 1):
        sel = (f >= centers[b]) & (f < centers[b + 1])
        x = np.log2(f[sel] / centers[b])
        w[b, sel] = np.cos(0.5 * np.pi * x) ** 2
        w[b + 1, sel] = np.sin(0.5 * np.pi * x) ** 2
    return w


def _combine_bands(per_band: np.ndarray, fs: float) -> np.ndarray:
    """Sum band signals after restricting each to its octave region."""
    if per_band.shape[0] == 1:
        return per_band[0]
    n = per_band.shape[1]
    n_fft = 1 << (n - 1).bit_length()
    centers = OCTAVE_CENTERS_8[: per_band.shape[0]]
    w = band_partition(n_fft, fs, centers)
    spec = np.fft.rfft(per_band, n_fft, axis=1)
    return np.fft.irfft((spec * w).sum(axis=0), n_fft)[:n]


def ism_rir(
    images: list[ImageSource],
    mic: Pose,
    fs: int = 32000,
    c: float = 343.0,
    taps: int = 81,
    length: int | None = None,
) -> Rir:
    """Render image sources at ``mic`` with Hann-windowed-sinc fractional delays."""
    mic_p = mic.array()
    pos = np.array([im.position for im in images])
    gains = np.array([im.reflection_gain for im in images])  # (n_img, n_bands)
    dist = np.linalg.norm(pos - mic_p, axis=1)
    if np.any(dist < 1e-3):
        raise GeometryError("degenerate geometry: microphone coincides with an image source")
    delays = dist / c * fs
    amps = gains / (4.0 * np.pi * dist[:, None])
    half = taps // 2
    needed = int(np.ceil(delays.max())) + half + 1
    n = max(length or 0, needed)

    centers = np.rint(delays).astype(np.int64)
    offs = np.arange(-half, half + 1)
    idx = centers[:, None] + offs[None, :]
    x = idx - delays[:, None]
    kernel = np.sinc(x) * 0.5 * (1.0 + np.cos(np.pi * x / (half + 1)))
    valid = (idx >= 0) & (idx < n)
    out = np.zeros((gains.shape[1], n))
    for b in range(gains.shape[1]):
        np.add.at(out[b], idx[valid], (kernel * amps[:, b : b + 1])[valid])
    samples = _combine_bands(out, fs)
    direct = int(dist[np.argmin([im.order for im in images])] / c * fs + 0.5)
    return Rir(samples, fs, direct, {"engine": "ism", "n_images": len(images)})


def auto_ray_count(room: RoomSpec, cfg: RirConfig | None = None) -> int:
    """Ray budget growing linearly with room volume, floored at ``min_rays``."""
    cfg = cfg or RirConfig()
    n = max(cfg.min_rays, math.ceil(cfg.rays_k * room.volume_m3 / cfg.receiver_radius**2))
    if cfg.max_rays is not None:
        n = min(n, cfg.max_rays)
    return int(n)


def _max_time(room: RoomSpec, cfg: RirConfig) -> float:
    sab = np.max(sabine_t60(room))
    target = room.target_t60_s or sab
    return cfg.time_factor * max(float(target), float(sab))


def trace_rays(
    room: RoomSpec,
    source: Pose,
    mics: Pose | Sequence[Pose],
    n_rays: int,
    seed: int,
    cfg: RirConfig | None = None,
    min_order: int = 0,
    max_time: float | None = None,
    accounting: bool = False,
) -> EnergyHistogram | list[EnergyHistogram]:
    """Stochastic ray tracing with a transparent spherical receiver per mic.

    Rays are shared across all receivers. Crossings are only recorded for
    rays that have undergone at least ``min_order`` reflections.
    """
    cfg = cfg or RirConfig()
    if n_rays < 1:
        raise ValueError("n_rays must be >= 1")
    single = isinstance(mics, Pose)
    mic_list = [mics] if single else list(mics)
    dims = room.dims
    for what, pt in [("source", source)] + [(f"mic {i}", m) for i, m in enumerate(mic_list)]:
        xyz = pt.array()
        if not (np.all(xyz >= 0.0) and np.all(xyz <= dims)):
            raise ValueError(f"{what} at {xyz.tolist()} lies outside the room {dims.tolist()}")
    max_time = _max_time(room, cfg) if max_time is None else max_time
    n_bins = int(math.ceil(max_time / cfg.bin_width_s))
    hist, absorbed, remaining = kernels.trace(
        np.ascontiguousarray(room.dims, dtype=np.float64),
        np.ascontiguousarray(room.absorption_matrix()),
        np.ascontiguousarray(room.scattering_vector()),
        np.ascontiguousarray(source.array()),
        np.ascontiguousarray(np.array([m.array() for m in mic_list])),
        float(cfg.receiver_radius),
        int(n_rays),
        int(seed) & 0xFFFFFFFFFFFFFFFF,
        float(cfg.c),
        float(cfg.bin_width_s),
        n_bins,
        float(max_time),
        float(cfg.energy_floor),
        int(min_order),
        bool(accounting),
        backend=cfg.backend,
    )
    out = [
        EnergyHistogram(cfg.bin_width_s, hist[m], int(n_rays), absorbed, remaining)
        for m in range(len(mic_list))
    ]
    return out[0] if single else out


def histogram_to_energy_scale(receiver_radius: float) -> float:
    """Factor turning deposited ray energy into squared-pressure RIR energy.

    A receiver of radius r at distance d intercepts r²/(4d²) of the emitted
    energy; the direct ISM impulse 1/(4πd) carries 1/(16π²d²).
    """
    return 1.0 / (4.0 * np.pi**2 * receiver_radius**2)


@lru_cache(maxsize=8)
def _highpass(fs: int, fc: float):
    return signal.butter(2, fc, btype="highpass", fs=fs, output="sos")


def synthesize_tail(
    hist: EnergyHistogram, fs: int, rng: np.random.Generator, cfg: RirConfig | None = None
) -> np.ndarray:
    """Noise whose per-bin energy matches the histogram (per band)."""
    cfg = cfg or RirConfig()
    bs = int(round(hist.bin_width_s * fs))
    n_bands, n_bins = hist.energy.shape
    target = hist.energy * histogram_to_energy_scale(cfg.receiver_radius)
    bands = np.empty((n_bands, n_bins * bs))
    for b in range(n_bands):
        bands[b] = rng.standard_normal(n_bins * bs)
    if n_bands > 1:
        bands = _filter_each_band(bands, fs)
    blocks = bands.reshape(n_bands, n_bins, bs)
    power = (blocks**2).sum(axis=2)
    with np.errstate(divide="ignore", invalid="ignore"):
        scale = np.where(power > 0, np.sqrt(target / power), 0.0)
    tail = (blocks * scale[:, :, None]).reshape(n_bands, -1).sum(axis=0)
    if cfg.tail_highpass_hz and cfg.tail_highpass_hz > 0:
        tail = signal.sosfilt(_highpass(fs, cfg.tail_highpass_hz), tail)
    return tail


def _filter_each_band(bands: np.ndarray, fs: int) -> np.ndarray:
    n = bands.shape[1]
    n_fft = 1 << (n - 1).bit_length()
    w = band_partition(n_fft, fs, OCTAVE_CENTERS_8[: bands.shape[0]])
    return np.fft.irfft(np.fft.rfft(bands, n_fft, axis=1) * w, n_fft, axis=1)[:, :n]


def source_pose(scene: SceneSpec, source_id: int) -> Pose:
    return scene.speech if source_id == 0 else scene.noises[source_id - 1]


def hybrid_rirs(
    scene: SceneSpec, source_id: int, cfg: RirConfig | None = None, mic_ids: Sequence[int] | None = None
) -> list[Rir]:
    """Hybrid RIRs from one source to several mics (one shared ray trace).

    Source ids: 0 is the speech source, 1.. are the noise sources.
    """
    cfg = cfg or RirConfig()
    room = scene.room
    fs = cfg.fs
    src = source_pose(scene, source_id)
    mic_ids = list(range(len(scene.mics))) if mic_ids is None else list(mic_ids)
    mics = [scene.mics[i].pose for i in mic_ids]
    images = enumerate_image_sources(room, src, cfg.ism_order)
    n_rays = auto_ray_count(room, cfg)
    ray_seed = derive_seed(scene.seed, "rays", source_id)
    hists = trace_rays(room, src, mics, n_rays, ray_seed, cfg, min_order=cfg.ism_order + 1)
    out = []
    for mic_id, mic, hist in zip(mic_ids, mics, hists):
        tail = synthesize_tail(hist, fs, child_rng(scene.seed, "tail", source_id, mic_id), cfg)
        ism = ism_rir(images, mic, fs, cfg.c, cfg.fd_taps, length=len(tail))
        samples = ism.samples.copy()
        samples[: len(tail)] += tail
        meta = {
            "engine": "hybrid",
            "scene_seed": int(scene.seed),
            "source_id": source_id,
            "mic_id": mic_id,
            "ism_order": cfg.ism_order,
            "n_rays": n_rays,
            "ray_seed": ray_seed,
            "backend": cfg.backend or kernels.BACKEND,
        }
        out.append(Rir(samples, fs, ism.direct_delay_samples, meta))
    return out


def hybrid_rir(scene: SceneSpec, source_id: int, mic_id: int, cfg: RirConfig | None = None) -> Rir:
    return hybrid_rirs(scene, source_id, cfg, [mic_id])[0]


def export_rir(rir: Rir, path: str | Path, settings: dict | None = None) -> tuple[Path, Path]:
    """Write ``rir`` as float32 WAV plus a JSON sidecar next to it."""
    from .audio import write_wav

    path = Path(path)
    write_wav(path, rir.samples, rir.sample_rate_hz)
    sidecar = path.with_suffix(".json")
    doc = {
        "schema": 1,
        "sample_rate_hz": rir.sample_rate_hz,
        "direct_delay_samples": rir.direct_delay_samples,
        "n_samples": len(rir.samples),
        "meta": rir.meta,
        "settings": settings or {},
    }
    sidecar.write_text(json.dumps(doc, indent=2, sort_keys=True))
    return path, sidecar
