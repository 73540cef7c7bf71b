"""Dataset generation and the JSONL manifest spine.

Layout::

    out/
      dataset.json                  # schema, seed, effective config, counts
      manifest.jsonl                # one line per scene, ordered by id
      scenes/<id>/mic_{0..4}.wav    # float32, 32 kHz
      scenes/<id>/scene.json        # geometry, labels, levels, seeds
"""
from __future__ import annotations

import csv
import hashlib
import json
import logging
import multiprocessing
from pathlib import Path
from typing import Any, Iterable

import numpy as np

from .audio import AudioBuffer, read_wav, synth_noise, synth_speech, write_wav
from .config import SCHEMA_VERSION, Config, dumps, from_dict
from .render import RenderedScene, render_scene
from .scene import sample_scene
from .seeding import child_rng, derive_seed

log = logging.getLogger(__name__)

SPLITS = ("train", "val", "test")


def assign_splits(n: int, seed: int, fractions=(0.8, 0.1, 0.1)) -> list[str]:
    """Seeded split labels with exact counts floor(f*n) for train/val, rest test."""
    n_train = int(np.floor(fractions[0] * n + 1e-9))
    n_val = int(np.floor(fractions[1] * n + 1e-9))
    order = child_rng(seed, "split").permutation(n)
    labels = [""] * n
    for rank, idx in enumerate(order):
        labels[idx] = "train" if rank < n_train else "val" if rank < n_train + n_val else "test"
    return labels


def _list_wavs(d: str | Path | None) -> list[Path]:
    if d is None:
        return []
    files = sorted(Path(d).rglob("*.wav"))
    if not files:
        raise FileNotFoundError(f"no .wav files under {d}")
    return files


def pick_sources(scene_seed: int, n_noises: int, cfg: Config, speech_files=(), noise_files=()):
    """Choose speech/noise buffers for a scene; synthesize when no corpus is given."""
    rng = child_rng(scene_seed, "sources")
    rc = cfg.render
    if speech_files:
        path = speech_files[int(rng.integers(len(speech_files)))]
        speech, speech_name = read_wav(path), str(path)
    else:
        speech, speech_name = synth_speech(rng, rc.synth_speech_s, rc.source_fs), "synthetic"
    noises, noise_names = [], []
    for _ in range(n_noises):
        if noise_files:
            path = noise_files[int(rng.integers(len(noise_files)))]
            noises.append(read_wav(path))
            noise_names.append(str(path))
        else:
            noises.append(synth_noise(rng, rc.synth_noise_s, rc.source_fs))
            noise_names.append("synthetic")
    return speech, noises, speech_name, noise_names


def _distances(rendered: RenderedScene) -> list[float]:
    sp = rendered.scene.speech.array()
    return [float(np.linalg.norm(m.pose.array() - sp)) for m in rendered.scene.mics]


def write_scene(rendered: RenderedScene, out_dir: Path, scene_id: str, split: str,
                extra: dict[str, Any] | None = None) -> dict[str, Any]:
    """Write one scene's WAVs and scene.json; return its manifest entry."""
    rel = Path("scenes") / scene_id
    d = Path(out_dir) / rel
    try:
        d.mkdir(parents=True, exist_ok=True)
        wavs = []
        for m, buf in enumerate(rendered.mics):
            name = f"mic_{m}.wav"
            write_wav(d / name, buf.samples, buf.sample_rate_hz)
            wavs.append(str(rel / name))
        labels = [lab.to_dict() for lab in rendered.labels]
        doc = {
            "schema": SCHEMA_VERSION,
            "id": scene_id,
            "split": split,
            "scene": rendered.scene.to_dict(),
            "labels": labels,
            "distances_m": _distances(rendered),
            "levels": rendered.info,
            **(extra or {}),
        }
        (d / "scene.json").write_text(json.dumps(doc, indent=2, sort_keys=True))
    except OSError as exc:
        raise OSError(f"failed writing scene {scene_id} under {d}: {exc}") from exc
    return {
        "schema": SCHEMA_VERSION,
        "id": scene_id,
        "split": split,
        "seed": int(rendered.scene.seed),
        "wavs": wavs,
        "labels": labels,
        "distances_m": _distances(rendered),
        "target_t60_s": rendered.scene.target_t60_s,
    }


def write_dataset(rendered: Iterable[RenderedScene], out_dir: str | Path,
                  splits: list[str] | None = None, cfg: Config | None = None) -> list[dict]:
    """Write already-rendered scenes plus manifest.jsonl and dataset.json."""
    cfg = cfg or Config()
    rendered = list(rendered)
    splits = splits or assign_splits(len(rendered), cfg.seed, cfg.render.split_fractions)
    out_dir = Path(out_dir)
    entries = [write_scene(r, out_dir, f"{i:06d}", s) for i, (r, s) in enumerate(zip(rendered, splits))]
    _write_index(out_dir, entries, cfg)
    return entries


def _write_index(out_dir: Path, entries: list[dict], cfg: Config) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "manifest.jsonl", "w") as fh:
        for e in entries:
            fh.write(json.dumps(e, sort_keys=True) + "\n")
    counts = {s: sum(e["split"] == s for e in entries) for s in SPLITS}
    doc = {
        "schema": SCHEMA_VERSION,
        "seed": cfg.seed,
        "n_scenes": len(entries),
        "splits": counts,
        "config": cfg.to_dict(),
    }
    (out_dir / "dataset.json").write_text(json.dumps(doc, indent=2, sort_keys=True))


def _simulate_one(job):
    index, scene_seed, split, cfg_json, out_dir, speech_files, noise_files = job
    cfg = from_dict(json.loads(cfg_json))
    scene = sample_scene(scene_seed, cfg.scene)
    speech, noises, sname, nnames = pick_sources(scene_seed, len(scene.noises), cfg, speech_files, noise_files)
    rendered = render_scene(scene, speech, noises, cfg)
    extra = {
        "sources": {"speech": sname, "noises": nnames},
        "config_sha1": hashlib.sha1(cfg_json.encode()).hexdigest(),
    }
    return write_scene(rendered, Path(out_dir), f"{index:06d}", split, extra)


def simulate(
    n_scenes: int,
    seed: int,
    out_dir: str | Path,
    cfg: Config | None = None,
    speech_dir: str | Path | None = None,
    noise_dir: str | Path | None = None,
    split: str | None = None,
    workers: int = 1,
    progress: bool = False,
) -> list[dict]:
    """Sample, render and write ``n_scenes`` scenes.

    Output is independent of ``workers``: every scene derives its own seed
    from ``(seed, index)`` and the manifest is written in index order.
    """
    cfg = cfg or Config()
    if split is not None and split not in SPLITS:
        raise ValueError(f"split must be one of {SPLITS}")
    splits = [split] * n_scenes if split else assign_splits(n_scenes, seed, cfg.render.split_fractions)
    speech_files = [str(p) for p in _list_wavs(speech_dir)]
    noise_files = [str(p) for p in _list_wavs(noise_dir)]
    cfg_json = dumps(cfg)
    jobs = [
        (i, derive_seed(seed, "scene", i), splits[i], cfg_json, str(out_dir), speech_files, noise_files)
        for i in range(n_scenes)
    ]
    if workers > 1:
        with multiprocessing.get_context("spawn").Pool(workers) as pool:
            entries = list(pool.imap(_simulate_one, jobs))
    else:
        entries = []
        for job in jobs:
            entries.append(_simulate_one(job))
            if progress:
                log.info("scene %d/%d", len(entries), n_scenes)
    effective = from_dict({**cfg.to_dict(), "seed": seed})
    _write_index(Path(out_dir), entries, effective)
    return entries


def load_manifest(path: str | Path, split: str | None = None) -> list[dict]:
    """Read manifest.jsonl (or a dataset directory); WAV paths become absolute."""
    path = Path(path)
    if path.is_dir():
        path = path / "manifest.jsonl"
    root = path.parent
    entries = []
    with open(path) as fh:
        for line in fh:
            if not line.strip():
                continue
            e = json.loads(line)
            if split is not None and e["split"] != split:
                continue
            e["wavs"] = [str(root / w) for w in e["wavs"]]
            entries.append(e)
    return entries


def read_mos_table(path: str | Path) -> dict[str, float]:
    """Per-file MOS from a JSON object or a CSV with ``file`` and ``mos`` columns."""
    path = Path(path)
    if path.suffix == ".json":
        return {str(k): float(v) for k, v in json.loads(path.read_text()).items()}
    with open(path, newline="") as fh:
        return {row["file"]: float(row["mos"]) for row in csv.DictReader(fh)}


def apply_mos_table(out_dir: str | Path, table: dict[str, float]) -> int:
    """Replace pseudo-MOS labels with externally rated values.

    Keys are WAV paths relative to the dataset directory, as listed in the
    manifest. Both manifest.jsonl and each scene.json are rewritten; returns
    the number of recordings relabelled.
    """
    out_dir = Path(out_dir)
    lines = (out_dir / "manifest.jsonl").read_text().splitlines()
    entries = [json.loads(x) for x in lines if x.strip()]
    n = 0
    for e in entries:
        hits = [m for m, w in enumerate(e["wavs"]) if w in table]
        if not hits:
            continue
        for m in hits:
            e["labels"][m]["mos"] = table[e["wavs"][m]]
        n += len(hits)
        scene_path = out_dir / "scenes" / e["id"] / "scene.json"
        doc = json.loads(scene_path.read_text())
        doc["labels"] = e["labels"]
        doc["mos_source"] = "table"
        scene_path.write_text(json.dumps(doc, indent=2, sort_keys=True))
    with open(out_dir / "manifest.jsonl", "w") as fh:
        for e in entries:
            fh.write(json.dumps(e, sort_keys=True) + "\n")
    return n


def load_scene_audio(entry: dict) -> list[AudioBuffer]:
    return [read_wav(w) for w in entry["wavs"]]
