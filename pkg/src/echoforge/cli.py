"""``echoforge`` command line.

Exit codes: 0 success, 1 data/runtime error, 2 usage or configuration error.
Errors are printed to stderr as one JSON object.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import SCHEMA_VERSION, Config, ConfigError, load_config, update

log = logging.getLogger("echoforge")


class UsageError(Exception):
    pass


def _sha1(path: str | Path) -> str:
    return hashlib.sha1(Path(path).read_bytes()).hexdigest()


def _write_json(path: str | Path, doc) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _read_channels(paths: list[str], fs: int) -> list[np.ndarray]:
    from .audio import read_wav, resample

    chans = []
    for p in paths:
        buf = read_wav(p)
        chans.append(resample(buf.samples, buf.sample_rate_hz, fs))
    n = min(len(c) for c in chans)
    return [c[:n] for c in chans]


def cmd_sample(args, cfg: Config) -> int:
    from .scene import sample_scene
    from .seeding import derive_seed

    out = Path(args.out)
    if out.is_dir() or args.out.endswith(("/", "\\")):
        out = out / "scenes.jsonl"
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w") as fh:
        for i in range(args.n):
            scene = sample_scene(derive_seed(cfg.seed, "scene", i), cfg.scene)
            fh.write(json.dumps(scene.to_dict(), sort_keys=True) + "\n")
    return 0


def cmd_simulate(args, cfg: Config) -> int:
    from .dataset import simulate

    entries = simulate(
        args.scenes, cfg.seed, args.out, cfg, args.speech_dir, args.noise_dir,
        split=args.split, workers=args.workers or cfg.workers, progress=True,
    )
    if args.mos_table:
        from .dataset import apply_mos_table, read_mos_table

        n = apply_mos_table(args.out, read_mos_table(args.mos_table))
        log.info("replaced MOS for %d recordings from %s", n, args.mos_table)
    log.info("wrote %d scenes to %s", len(entries), args.out)
    return 0


def cmd_metrics(args, cfg: Config) -> int:
    from .audio import read_wav
    from .metrics import clarity_c50, drr, estimate_t60, energy_decay_curve, sti_from_rir

    buf = read_wav(args.rir)
    h, fs = buf.samples, buf.sample_rate_hz
    doc = {
        "schema": SCHEMA_VERSION,
        "rir": str(args.rir),
        "sti": sti_from_rir(h, fs, weights=cfg.metrics.sti_weights),
        "t60_s": estimate_t60(energy_decay_curve(h, fs)),
        "c50_db": clarity_c50(h, fs, None, cfg.metrics),
        "drr_db": drr(h, fs, cfg.metrics),
    }
    if args.out:
        _write_json(args.out, doc)
    else:
        print(json.dumps(doc, sort_keys=True))
    return 0


def cmd_features(args, cfg: Config) -> int:
    from .features import extract, write_tensor

    tensor = extract(_read_channels(args.wavs, cfg.features.fs), cfg.features)
    write_tensor(args.out, tensor)
    log.info("tensor %s -> %s", list(tensor.shape), args.out)
    return 0


def _entries(manifest: str, split: str | None) -> list[dict]:
    from .dataset import load_manifest

    entries = load_manifest(manifest, split)
    if not entries:
        raise ValueError(f"no scenes with split={split!r} in {manifest}")
    return entries


def cmd_train(args, cfg: Config) -> int:
    from .net import load_features, save_checkpoint, train

    overrides = {k: v for k, v in {"epochs": args.epochs, "mode": args.mode, "max_steps": args.max_steps}.items() if v is not None}
    cfg = update(cfg, {"train": {**overrides, "seed": cfg.seed}})
    train_data = load_features(_entries(args.manifest, "train"), cfg.features)
    try:
        val_entries = _entries(args.val_manifest or args.manifest, "val")
        val_data = load_features(val_entries, cfg.features)
    except ValueError:
        val_data = None
    result = train(train_data, val_data, cfg)
    result.checkpoint.meta["dataset"] = str(args.manifest)
    save_checkpoint(args.out, result.checkpoint)
    with open(str(args.out) + ".history.jsonl", "w") as fh:
        for rec in result.history:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
    return 0


def cmd_eval(args, cfg: Config) -> int:
    from .evaluation import evaluate, read_predictions

    entries = _entries(args.manifest, args.split)
    meta = {"config": cfg.to_dict(), "manifest": str(args.manifest), "split": args.split}
    if args.predictions:
        predictor = read_predictions(args.predictions)
        meta["predictions"] = str(args.predictions)
    else:
        if not args.ckpt:
            raise UsageError("eval needs --ckpt or --predictions")
        from .features import extract
        from .net import METRICS, load_checkpoint, predict_tensor

        ckpt = load_checkpoint(args.ckpt)
        meta.update(checkpoint=str(args.ckpt), checkpoint_sha1=_sha1(args.ckpt), mode=ckpt.mode)

        def predictor(e):
            pred = predict_tensor(ckpt, extract(_read_channels(e["wavs"], cfg.features.fs), cfg.features))
            return [{m: float(pred[k, c]) for k, m in enumerate(METRICS)} for c in range(pred.shape[1])]

    report = evaluate(predictor, entries, cfg.eval, meta)
    report.save(args.out)
    print(report.table(), file=sys.stderr)
    return 0


def cmd_predict(args, cfg: Config) -> int:
    from .net import load_checkpoint, predict_audio

    ckpt = load_checkpoint(args.ckpt)
    doc = predict_audio(ckpt, _read_channels(args.wavs, cfg.features.fs), cfg.features)
    doc = {"schema": SCHEMA_VERSION, "inputs": list(args.wavs), **doc}
    if args.out:
        _write_json(args.out, doc)
    else:
        print(json.dumps(doc, sort_keys=True))
    return 0


def cmd_stream(args, cfg: Config) -> int:
    from .net import load_checkpoint
    from .streaming import run_stream, write_trace

    if args.hop is not None:
        cfg = update(cfg, {"stream": {"hop_s": args.hop}})
    ckpt = load_checkpoint(args.ckpt)
    rows = run_stream(ckpt, _read_channels(args.wavs, cfg.features.fs), cfg.features.fs, cfg.stream, cfg.features)
    write_trace(args.out, rows, {
        "seed": cfg.seed, "config": cfg.to_dict(), "checkpoint": str(args.ckpt),
        "inputs": list(args.wavs),
    })
    return 0


_SCATTER_ALIASES = {"t60": "t60_s", "drr": "drr_db", "c50": "c50_db", "snr": "snr_db"}
_SCATTER_ALL = ("mos", "sti", "t60_s", "drr_db", "c50_db", "snr_db")


def _scatter_metrics(spec: str | None) -> tuple[str, ...]:
    if not spec:
        return _SCATTER_ALL
    names = tuple(_SCATTER_ALIASES.get(x.strip(), x.strip()) for x in spec.split(",") if x.strip())
    unknown = [n for n in names if n not in _SCATTER_ALL]
    if unknown or not names:
        raise UsageError(f"--scatter: unknown metric(s) {unknown}; choose from {', '.join(_SCATTER_ALL)}")
    return names


def cmd_inspect(args, cfg: Config) -> int:
    """Distance-vs-metric scatter data, one row per (scene, mic)."""
    entries = _entries(args.manifest, args.split)
    metrics = _scatter_metrics(args.scatter)
    rows = []
    for e in entries:
        for m, (lab, dist) in enumerate(zip(e["labels"], e["distances_m"])):
            rows.append([e["id"], e["split"], m, dist] + [lab[k] for k in metrics])
    with open(args.out, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["scene", "split", "mic", "distance_m", *metrics])
        w.writerows(rows)
    arr = np.array([r[3:] for r in rows], dtype=np.float64)
    summary = {
        "n": len(rows),
        "corr_with_distance": {
            k: float(np.corrcoef(arr[:, 0], arr[:, i + 1])[0, 1]) if len(rows) > 1 else None
            for i, k in enumerate(metrics)
        },
    }
    print(json.dumps(summary, sort_keys=True))
    return 0


def cmd_rir(args, cfg: Config) -> int:
    from .rir import export_rir, hybrid_rir
    from .scene import SceneSpec

    doc = json.loads(Path(args.scene).read_text())
    scene = SceneSpec.from_dict(doc.get("scene", doc))
    rir = hybrid_rir(scene, args.source, args.mic, cfg.rir)
    export_rir(rir, args.out, {"config": cfg.to_dict(), "seed": int(scene.seed)})
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML/JSON config file")
    common.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                        help="override a config value (repeatable)")
    common.add_argument("--seed", type=int, help="global seed (overrides config)")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="echoforge", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("sample", parents=[common], help="sample scene geometries to JSONL")
    s.add_argument("--count", "--n", dest="n", type=int, default=1)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_sample)

    s = sub.add_parser("simulate", parents=[common], help="render a dataset")
    s.add_argument("--scenes", type=int, required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--speech-dir")
    s.add_argument("--noise-dir")
    s.add_argument("--split", choices=("train", "val", "test"))
    s.add_argument("--workers", type=int)
    s.add_argument("--mos-table", help="CSV (file,mos) or JSON of external MOS ratings keyed by manifest WAV path")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("metrics", parents=[common], help="acoustic parameters of an RIR wav")
    s.add_argument("rir")
    s.add_argument("--out")
    s.set_defaults(func=cmd_metrics)

    s = sub.add_parser("features", parents=[common], help="write a mel segment tensor")
    s.add_argument("wavs", nargs="+")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_features)

    s = sub.add_parser("train", parents=[common], help="train a model")
    s.add_argument("--manifest", required=True)
    s.add_argument("--val-manifest")
    s.add_argument("--out", required=True)
    s.add_argument("--epochs", type=int)
    s.add_argument("--max-steps", type=int)
    s.add_argument("--mode", choices=("multi", "single"))
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("eval", parents=[common], help="evaluate a checkpoint or predictions")
    s.add_argument("--ckpt")
    s.add_argument("--predictions", help="JSONL of per-scene predictions instead of a checkpoint")
    s.add_argument("--manifest", required=True)
    s.add_argument("--split", default="test")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("predict", parents=[common], help="predict metrics for 1-5 wavs")
    s.add_argument("--ckpt", required=True)
    s.add_argument("wavs", nargs="+")
    s.add_argument("--out")
    s.set_defaults(func=cmd_predict)

    s = sub.add_parser("stream", parents=[common], help="sliding-window trace CSV")
    s.add_argument("--ckpt", required=True)
    s.add_argument("wavs", nargs="+")
    s.add_argument("--hop", type=float)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_stream)

    s = sub.add_parser("inspect", parents=[common], help="distance vs metric scatter CSV")
    s.add_argument("--manifest", required=True)
    s.add_argument("--split")
    s.add_argument("--scatter", help="comma-separated metrics, e.g. drr,t60 (default: all)")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_inspect)

    s = sub.add_parser("rir", parents=[common], help="export one hybrid RIR")
    s.add_argument("--scene", required=True, help="scene.json")
    s.add_argument("--source", type=int, default=0)
    s.add_argument("--mic", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_rir)
    return p


def _error(kind: str, exc: BaseException) -> None:
    print(json.dumps({"error": kind, "type": type(exc).__name__, "message": str(exc)}), file=sys.stderr)


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config, args.set)
        if args.seed is not None:
            cfg = update(cfg, {"seed": args.seed})
        return args.func(args, cfg)
    except (ConfigError, UsageError) as exc:
        _error("usage", exc)
        parser.print_usage(sys.stderr)
        return 2
    except (OSError, ValueError, RuntimeError, KeyError) as exc:
        _error("data", exc)
        return 1


if __name__ == "__main__":
    sys.exit(main())
