"""Time the compiled ray tracer against the numpy fallback.

Both backends trace the same rays for a furnished meeting room with five
receivers; the histograms must agree to rounding before timings are reported.

    python3 benchmarks/bench_raytrace.py --rays 20000 --repeat 3
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import time

import numpy as np

from echoforge import kernels
from echoforge.config import RirConfig, SceneConfig
from echoforge.rir import trace_rays
from echoforge.scene import sample_scene


def best_of(fn, repeat: int) -> tuple[float, object]:
    times, out = [], None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def main(argv: list[str] | None = None) -> int:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--rays", type=int, default=20000)
    p.add_argument("--repeat", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--json", action="store_true", help="print one JSON object instead of a table")
    args = p.parse_args(argv)

    scene = sample_scene(args.seed, SceneConfig())
    mics = [m.pose for m in scene.mics]
    results = {}
    hists = {}
    for backend in kernels.available_backends():
        cfg = dataclasses.replace(RirConfig(), backend=backend)
        secs, out = best_of(lambda: trace_rays(scene.room, scene.speech, mics, args.rays, args.seed, cfg), args.repeat)
        results[backend] = secs
        hists[backend] = np.stack([h.energy for h in out])
    # per-ray energies are bit-equal; histogram sums differ only in accumulation order
    if len(hists) == 2 and not np.allclose(hists["compiled"], hists["python"], rtol=1e-12, atol=1e-18):
        raise SystemExit("backends disagree; timings are meaningless")

    report = {
        "rays": args.rays,
        "room_m": [scene.room.length_m, scene.room.width_m, scene.room.height_m],
        "seconds": results,
        "rays_per_s": {k: args.rays / v for k, v in results.items()},
    }
    if "compiled" in results:
        report["speedup"] = results["python"] / results["compiled"]
    if args.json:
        print(json.dumps(report, indent=2))
    else:
        for k, v in results.items():
            print(f"{k:<9} {v:8.3f} s  {args.rays / v:12.0f} rays/s")
        if "speedup" in report:
            print(f"speedup   {report['speedup']:8.1f}x")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
