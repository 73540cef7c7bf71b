"""Layered configuration: defaults < config file < ``ECHOFORGE_`` env < ``--set``.

Every section is a dataclass; unknown keys are rejected at each layer so a
typo never silently falls back to a default.
"""
from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

import yaml

SCHEMA_VERSION = 1
ENV_PREFIX = "ECHOFORGE_"


class ConfigError(ValueError):
    pass


@dataclass
class SceneConfig:
    width_range: tuple[float, float] = (2.1, 10.0)
    height_range: tuple[float, float] = (2.0, 4.0)
    t60_mean: float = 0.41
    t60_std: float = 0.18
    t60_clip: tuple[float, float] = (0.15, 1.2)
    absorption_clip: tuple[float, float] = (0.01, 0.95)
    absorption_jitter: tuple[float, float] = (0.8, 1.25)
    scattering_range: tuple[float, float] = (0.1, 0.4)
    wall_margin: float = 0.1
    speech_height: tuple[float, float] = (1.3, 2.0)
    two_noise_prob: float = 0.5
    n_mics: int = 5
    wall_mount_prob: float = 0.5
    wall_standoff: float = 0.02
    wall_mic_min_height: float = 1.0
    table_region: float = 0.3
    table_height: tuple[float, float] = (0.7, 0.9)
    min_source_mic_distance: float = 0.3
    placement_attempts: int = 100
    beta_a: float = 1.5
    beta_b: float = 1.5
    noise_dbfs_scale: float = -40.0
    noise_dbfs_offset: float = -20.0
    speech_dbfs_scale: float = -30.0
    speech_dbfs_offset: float = -10.0


@dataclass
class RirConfig:
    fs: int = 32000
    c: float = 343.0
    ism_order: int = 3
    fd_taps: int = 81
    receiver_radius: float = 0.25
    rays_k: float = 40.0
    min_rays: int = 10000
    max_rays: int | None = None
    bin_width_s: float = 0.001
    energy_floor: float = 1e-6
    time_factor: float = 2.0
    tail_highpass_hz: float = 20.0
    air_absorption: bool = False
    backend: str | None = None


@dataclass
class MetricsConfig:
    c50_window_ms: float = 50.0
    drr_window_ms: float = 2.5
    clamp_db: float = 60.0
    sti_weights: tuple[float, ...] = (0.13, 0.14, 0.11, 0.12, 0.19, 0.17, 0.14)
    sti_noise_aware: bool = True


@dataclass
class RenderConfig:
    fs: int = 32000
    duration_s: float = 10.0
    master_dbfs: tuple[float, float] = (-20.0, 0.0)
    dbfs_convention: str = "peak"
    degradations: tuple[str, ...] = ("identity", "spectral_subtraction", "lowpass_10k")
    split_fractions: tuple[float, float, float] = (0.8, 0.1, 0.1)
    synth_speech_s: float = 6.0
    synth_noise_s: float = 4.0
    source_fs: int = 16000


@dataclass
class FeatureConfig:
    fs: int = 32000
    win_length: int = 640
    hop_length: int = 320
    n_fft: int = 1024
    n_mels: int = 48
    fmin: float = 0.0
    fmax: float = 16000.0
    log_floor: float = 1e-10
    segment_frames: int = 15
    segment_hop: int = 4


@dataclass
class ModelConfig:
    in_channels: int = 5
    n_outputs: int = 5
    cnn_channels: tuple[int, int, int] = (16, 32, 64)
    d_model: int = 128
    n_layers: int = 2
    n_heads: int = 4
    d_ff: int = 256
    head_hidden: int = 64
    n_bands: int = 48
    segment_frames: int = 15


@dataclass
class TrainConfig:
    batch_size: int = 32
    lr: float = 5e-4
    epochs: int = 1000
    patience: int = 30
    lr_patience: int = 15
    lr_factor: float = 10.0
    mode: str = "multi"
    channel_sampling: str = "replacement"  # or "fixed": slots take devices in order
    crop_s: float | None = None
    seed: int = 0
    max_steps: int | None = None


@dataclass
class EvalConfig:
    bootstrap_reps: int = 1000
    ci_level: float = 0.95
    seed: int = 0


@dataclass
class StreamConfig:
    buffer_s: float = 4.0
    hop_s: float = 0.5
    warmup_s: float = 1.0


@dataclass
class Config:
    seed: int = 0
    workers: int = 1
    scene: SceneConfig = field(default_factory=SceneConfig)
    rir: RirConfig = field(default_factory=RirConfig)
    metrics: MetricsConfig = field(default_factory=MetricsConfig)
    render: RenderConfig = field(default_factory=RenderConfig)
    features: FeatureConfig = field(default_factory=FeatureConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    stream: StreamConfig = field(default_factory=StreamConfig)

    def to_dict(self) -> dict[str, Any]:
        return to_dict(self)


def to_dict(obj) -> dict[str, Any]:
    out = {}
    for f in dataclasses.fields(obj):
        v = getattr(obj, f.name)
        if dataclasses.is_dataclass(v):
            out[f.name] = to_dict(v)
        elif isinstance(v, tuple):
            out[f.name] = list(v)
        else:
            out[f.name] = v
    return out


def _coerce(current, value, where: str):
    if isinstance(current, tuple):
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{where}: expected a list, got {value!r}")
        return tuple(value)
    if isinstance(current, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{where}: expected a boolean, got {value!r}")
        return value
    if isinstance(current, float) and isinstance(value, int) and not isinstance(value, bool):
        return float(value)
    return value


def update(obj, values: Mapping[str, Any], where: str = "config"):
    """Return a copy of dataclass ``obj`` with ``values`` merged in (recursively)."""
    if not isinstance(values, Mapping):
        raise ConfigError(f"{where}: expected a mapping")
    names = {f.name for f in dataclasses.fields(obj)}
    changes = {}
    for key, value in values.items():
        if key not in names:
            raise ConfigError(f"{where}: unknown key {key!r}")
        current = getattr(obj, key)
        if dataclasses.is_dataclass(current):
            changes[key] = update(current, value, f"{where}.{key}")
        else:
            changes[key] = _coerce(current, value, f"{where}.{key}")
    return dataclasses.replace(obj, **changes)


def _dotted(path: str, value) -> dict:
    out: dict = {}
    node = out
    parts = path.split(".")
    for part in parts[:-1]:
        node = node.setdefault(part, {})
    node[parts[-1]] = value
    return out


def from_dict(values: Mapping[str, Any]) -> Config:
    return update(Config(), values)


def load_config(
    path: str | os.PathLike | None = None,
    overrides: list[str] | None = None,
    env: Mapping[str, str] | None = None,
) -> Config:
    """Build the effective configuration.

    ``overrides`` are ``section.key=value`` strings; values are parsed as YAML
    scalars/lists. Environment variables take the form
    ``ECHOFORGE_SECTION__KEY=value`` (double underscore separates levels).
    """
    cfg = Config()
    if path is not None:
        text = Path(path).read_text()
        data = yaml.safe_load(text) or {}
        cfg = update(cfg, data, str(path))
    env = os.environ if env is None else env
    for key in sorted(env):
        if not key.startswith(ENV_PREFIX) or key == "ECHOFORGE_NO_EXT":
            continue
        dotted = key[len(ENV_PREFIX):].lower().replace("__", ".")
        cfg = update(cfg, _dotted(dotted, yaml.safe_load(env[key])), f"env {key}")
    for item in overrides or []:
        if "=" not in item:
            raise ConfigError(f"override {item!r} must look like section.key=value")
        dotted, raw = item.split("=", 1)
        cfg = update(cfg, _dotted(dotted.strip(), yaml.safe_load(raw)), f"--set {dotted}")
    return cfg


def dumps(cfg: Config) -> str:
    return json.dumps(cfg.to_dict(), sort_keys=True)
