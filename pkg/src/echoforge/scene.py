"""Random shoebox scenes: room, materials, speech/noise sources, five devices."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .config import SCHEMA_VERSION, SceneConfig
from .seeding import child_rng

SURFACE_NAMES = ("x0", "x1", "y0", "y1", "floor", "ceiling")
SABINE_K = 0.161


@dataclass
class SurfaceSpec:
    absorption: float | np.ndarray
    scattering: float = 0.0

    def absorption_bands(self) -> np.ndarray:
        return np.atleast_1d(np.asarray(self.absorption, dtype=np.float64))


@dataclass
class Pose:
    x: float
    y: float
    z: float

    def array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z], dtype=np.float64)

    @classmethod
    def from_array(cls, a) -> "Pose":
        return cls(float(a[0]), float(a[1]), float(a[2]))


@dataclass
class RoomSpec:
    width_m: float
    length_m: float
    height_m: float
    surfaces: list[SurfaceSpec]
    target_t60_s: float | None = None

    @property
    def dims(self) -> np.ndarray:
        return np.array([self.width_m, self.length_m, self.height_m])

    @property
    def volume_m3(self) -> float:
        return self.width_m * self.length_m * self.height_m

    @property
    def surface_areas(self) -> np.ndarray:
        w, l, h = self.width_m, self.length_m, self.height_m
        return np.array([l * h, l * h, w * h, w * h, w * l, w * l])

    @property
    def surface_area_m2(self) -> float:
        return float(self.surface_areas.sum())

    def absorption_matrix(self) -> np.ndarray:
        """Absorption as a (6, n_bands) array; scalars broadcast to one band."""
        bands = [s.absorption_bands() for s in self.surfaces]
        n = max(len(b) for b in bands)
        return np.stack([np.broadcast_to(b, (n,)) for b in bands]).astype(np.float64)

    def scattering_vector(self) -> np.ndarray:
        return np.array([s.scattering for s in self.surfaces], dtype=np.float64)

    def contains(self, pose: Pose, margin: float = 0.0) -> bool:
        p = pose.array()
        return bool(np.all(p >= margin) and np.all(p <= self.dims - margin))


@dataclass
class MicSlot:
    pose: Pose
    mount: str
    wall: int | None = None


@dataclass
class SceneSpec:
    room: RoomSpec
    speech: Pose
    noises: list[Pose]
    mics: list[MicSlot]
    seed: int
    target_t60_s: float
    meta: dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        room = self.room
        return {
            "schema": SCHEMA_VERSION,
            "seed": int(self.seed),
            "target_t60_s": self.target_t60_s,
            "room": {
                "width_m": room.width_m,
                "length_m": room.length_m,
                "height_m": room.height_m,
                "volume_m3": room.volume_m3,
                "surface_area_m2": room.surface_area_m2,
                "surfaces": [
                    {
                        "name": name,
                        "absorption": (s.absorption_bands().tolist() if np.ndim(s.absorption)
                                       else float(s.absorption)),
                        "scattering": float(s.scattering),
                    }
                    for name, s in zip(SURFACE_NAMES, room.surfaces)
                ],
            },
            "speech": _pose_dict(self.speech),
            "noises": [_pose_dict(p) for p in self.noises],
            "mics": [
                {**_pose_dict(m.pose), "mount": m.mount, "wall": m.wall} for m in self.mics
            ],
            **({"meta": self.meta} if self.meta else {}),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "SceneSpec":
        if d.get("schema") != SCHEMA_VERSION:
            raise ValueError(f"unsupported scene schema {d.get('schema')!r}")
        r = d["room"]
        surfaces = [
            SurfaceSpec(
                np.asarray(s["absorption"]) if isinstance(s["absorption"], list) else s["absorption"],
                s["scattering"],
            )
            for s in r["surfaces"]
        ]
        room = RoomSpec(r["width_m"], r["length_m"], r["height_m"], surfaces, d["target_t60_s"])
        return cls(
            room=room,
            speech=_pose(d["speech"]),
            noises=[_pose(p) for p in d["noises"]],
            mics=[MicSlot(_pose(m), m["mount"], m.get("wall")) for m in d["mics"]],
            seed=int(d["seed"]),
            target_t60_s=d["target_t60_s"],
            meta=d.get("meta", {}),
        )


def _pose_dict(p: Pose) -> dict[str, float]:
    return {"x": p.x, "y": p.y, "z": p.z}


def _pose(d) -> Pose:
    return Pose(float(d["x"]), float(d["y"]), float(d["z"]))


def sabine_absorption(volume: float, area: float, t60: float) -> float:
    """Mean absorption coefficient giving ``t60`` under Sabine's formula."""
    return SABINE_K * volume / (area * t60)


def sabine_t60(room: RoomSpec) -> np.ndarray | float:
    """Sabine reverberation time; one value per band for banded absorption."""
    a = room.absorption_matrix()
    eq_area = (room.surface_areas[:, None] * a).sum(axis=0)
    t = SABINE_K * room.volume_m3 / eq_area
    return float(t[0]) if t.size == 1 else t


def eyring_t60(room: RoomSpec) -> np.ndarray | float:
    a = room.absorption_matrix()
    s = room.surface_areas
    mean_alpha = (s[:, None] * a).sum(axis=0) / s.sum()
    t = SABINE_K * room.volume_m3 / (-s.sum() * np.log1p(-mean_alpha))
    return float(t[0]) if t.size == 1 else t


def sample_room(rng: np.random.Generator, cfg: SceneConfig | None = None) -> RoomSpec:
    cfg = cfg or SceneConfig()
    w = rng.uniform(*cfg.width_range)
    l = rng.uniform(*cfg.width_range)
    h = rng.uniform(*cfg.height_range)
    t60 = float(np.clip(rng.normal(cfg.t60_mean, cfg.t60_std), *cfg.t60_clip))
    volume = w * l * h
    area = 2 * (w * l + w * h + l * h)
    lo, hi = cfg.absorption_clip
    base = float(np.clip(sabine_absorption(volume, area, t60), lo, hi))
    surfaces = []
    for _ in SURFACE_NAMES:
        alpha = float(np.clip(base * rng.uniform(*cfg.absorption_jitter), lo, hi))
        surfaces.append(SurfaceSpec(alpha, float(rng.uniform(*cfg.scattering_range))))
    return RoomSpec(float(w), float(l), float(h), surfaces, t60)


def place_sources(
    room: RoomSpec, rng: np.random.Generator, cfg: SceneConfig | None = None
) -> tuple[Pose, list[Pose]]:
    cfg = cfg or SceneConfig()
    m = cfg.wall_margin
    w, l, h = room.width_m, room.length_m, room.height_m
    z_lo, z_hi = cfg.speech_height
    z_hi = min(z_hi, h - m)
    speech = Pose(rng.uniform(m, w - m), rng.uniform(m, l - m), rng.uniform(z_lo, z_hi))
    n_noises = 2 if rng.random() < cfg.two_noise_prob else 1
    noises = [
        Pose(rng.uniform(m, w - m), rng.uniform(m, l - m), rng.uniform(m, h - m))
        for _ in range(n_noises)
    ]
    return speech, noises


def _wall_mic(room: RoomSpec, rng, cfg: SceneConfig, wall: int) -> Pose:
    dims = room.dims
    m, s = cfg.wall_margin, cfg.wall_standoff
    z = rng.uniform(cfg.wall_mic_min_height, dims[2] - m)
    axis, along = wall // 2, 1 - wall // 2
    p = np.empty(3)
    p[axis] = s if wall % 2 == 0 else dims[axis] - s
    p[along] = rng.uniform(m, dims[along] - m)
    p[2] = z
    return Pose.from_array(p)


def _table_mic(room: RoomSpec, rng, cfg: SceneConfig) -> Pose:
    half = cfg.table_region / 2
    x = rng.uniform(room.width_m * (0.5 - half), room.width_m * (0.5 + half))
    y = rng.uniform(room.length_m * (0.5 - half), room.length_m * (0.5 + half))
    return Pose(x, y, rng.uniform(*cfg.table_height))


def place_microphones(
    room: RoomSpec,
    rng: np.random.Generator,
    cfg: SceneConfig | None = None,
    avoid: list[Pose] | None = None,
) -> list[MicSlot]:
    """Place ``cfg.n_mics`` devices, each independently wall- or table-mounted.

    Positions closer than ``min_source_mic_distance`` to any pose in ``avoid``
    are redrawn (mount type kept); after ``placement_attempts`` the candidate
    farthest from the sources is used.
    """
    cfg = cfg or SceneConfig()
    avoid_pts = np.array([p.array() for p in avoid]) if avoid else np.zeros((0, 3))
    mics = []
    for _ in range(cfg.n_mics):
        wall_mounted = rng.random() < cfg.wall_mount_prob
        wall = int(rng.integers(4)) if wall_mounted else None
        best, best_d = None, -1.0
        for _ in range(cfg.placement_attempts):
            pose = _wall_mic(room, rng, cfg, wall) if wall_mounted else _table_mic(room, rng, cfg)
            dmin = (np.linalg.norm(avoid_pts - pose.array(), axis=1).min()
                    if len(avoid_pts) else np.inf)
            if dmin > best_d:
                best, best_d = pose, dmin
            if dmin >= cfg.min_source_mic_distance:
                break
        mics.append(MicSlot(best, "wall" if wall_mounted else "table", wall))
    return mics


def sample_dbfs(rng: np.random.Generator, cfg: SceneConfig | None = None) -> tuple[float, float]:
    """Draw (speech_dbfs, noise_dbfs) from the scaled Beta(1.5, 1.5) laws."""
    cfg = cfg or SceneConfig()
    noise = rng.beta(cfg.beta_a, cfg.beta_b) * cfg.noise_dbfs_scale + cfg.noise_dbfs_offset
    speech = rng.beta(cfg.beta_a, cfg.beta_b) * cfg.speech_dbfs_scale + cfg.speech_dbfs_offset
    return float(speech), float(noise)


def sample_scene(seed: int, cfg: SceneConfig | None = None) -> SceneSpec:
    cfg = cfg or SceneConfig()
    rng = child_rng(seed, "scene")
    room = sample_room(rng, cfg)
    speech, noises = place_sources(room, rng, cfg)
    mics = place_microphones(room, rng, cfg, avoid=[speech, *noises])
    return SceneSpec(room, speech, noises, mics, int(seed), room.target_t60_s)
