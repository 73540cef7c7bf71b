"""Regression metrics, percentile bootstrap CIs, cubic mapping and reports."""
from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Callable

import numpy as np

from .config import SCHEMA_VERSION, EvalConfig
from .seeding import child_rng

log = logging.getLogger(__name__)

RMSE_METRICS = ("sti", "t60_s", "drr_db", "c50_db", "mos")


class DegenerateError(ValueError):
    pass


def rmse(pred, true) -> float:
    p, t = np.asarray(pred, dtype=np.float64), np.asarray(true, dtype=np.float64)
    if p.shape != t.shape:
        raise ValueError(f"length mismatch: {p.shape} vs {t.shape}")
    if p.size == 0:
        raise ValueError("empty input")
    return float(np.sqrt(np.mean((p - t) ** 2)))


def pearson(pred, true) -> float:
    p, t = np.asarray(pred, dtype=np.float64), np.asarray(true, dtype=np.float64)
    if p.shape != t.shape:
        raise ValueError(f"length mismatch: {p.shape} vs {t.shape}")
    if p.size < 2:
        raise DegenerateError("degenerate: need at least two samples")
    dp, dt = p - p.mean(), t - t.mean()
    sp, st = np.sqrt(np.sum(dp * dp)), np.sqrt(np.sum(dt * dt))
    if sp <= 1e-12 * max(1.0, np.abs(p).max()) or st <= 1e-12 * max(1.0, np.abs(t).max()):
        raise DegenerateError("degenerate: zero variance")
    return float(np.clip(np.sum(dp * dt) / (sp * st), -1.0, 1.0))


def bootstrap_ci(
    pred,
    true,
    statistic: Callable[[np.ndarray, np.ndarray], float],
    reps: int = 1000,
    level: float = 0.95,
    seed: int = 0,
    max_skip_frac: float = 0.1,
) -> tuple[float, float, int]:
    """Percentile interval over pairs resampled with replacement.

    Resamples on which ``statistic`` raises :class:`DegenerateError` are
    redrawn; returns ``(low, high, n_skipped)``.
    """
    p, t = np.asarray(pred, dtype=np.float64), np.asarray(true, dtype=np.float64)
    n = len(p)
    if n < 2:
        raise ValueError("bootstrap needs at least two pairs")
    rng = child_rng(seed, "bootstrap")
    values, skipped = [], 0
    while len(values) < reps:
        idx = rng.integers(0, n, size=n)
        try:
            values.append(statistic(p[idx], t[idx]))
        except DegenerateError:
            skipped += 1
            if skipped > max_skip_frac * reps:
                raise DegenerateError(f"{skipped} degenerate resamples (> {max_skip_frac:.0%})")
    alpha = (1.0 - level) / 2.0
    low, high = np.quantile(np.asarray(values), [alpha, 1.0 - alpha])
    return float(low), float(high), skipped


def poly3_map(pred, true) -> tuple[np.ndarray, bool]:
    """Least-squares cubic from ``pred`` to ``true`` applied to ``pred``.

    Returns ``(mapped, fell_back)``; a rank-deficient design falls back to a
    linear fit.
    """
    p, t = np.asarray(pred, dtype=np.float64), np.asarray(true, dtype=np.float64)
    if p.size < 4:
        raise ValueError("cubic mapping needs at least four samples")
    # centre and scale for conditioning; the fit is invariant to this
    scale = p.std() or 1.0
    z = (p - p.mean()) / scale
    design = np.vander(z, 4)
    coef, _, rank, _ = np.linalg.lstsq(design, t, rcond=None)
    if rank < 4:
        design = np.vander(z, 2)
        coef, *_ = np.linalg.lstsq(design, t, rcond=None)
        return design @ coef, True
    return design @ coef, False


@dataclass
class MetricResult:
    name: str
    statistic: str
    estimate: float
    ci_low: float
    ci_high: float
    n: int
    skipped_resamples: int = 0

    def __post_init__(self):
        # percentile intervals can exclude a skewed point estimate; widen to keep the bracket
        self.ci_low = min(self.ci_low, self.estimate)
        self.ci_high = max(self.ci_high, self.estimate)


@dataclass
class EvalReport:
    results: list[MetricResult]
    meta: dict[str, Any] = field(default_factory=dict)
    schema: int = SCHEMA_VERSION

    def get(self, name: str, statistic: str = "rmse") -> MetricResult:
        for r in self.results:
            if r.name == name and r.statistic == statistic:
                return r
        raise KeyError((name, statistic))

    def to_dict(self) -> dict:
        return {"schema": self.schema, "results": [asdict(r) for r in self.results], "meta": self.meta}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "EvalReport":
        return cls([MetricResult(**r) for r in d["results"]], d.get("meta", {}), d.get("schema", SCHEMA_VERSION))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json())

    @classmethod
    def load(cls, path: str | Path) -> "EvalReport":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def table(self) -> str:
        lines = [f"{'metric':<8} {'stat':<14} {'value':>9}  CI"]
        for r in self.results:
            lines.append(f"{r.name:<8} {r.statistic:<14} {r.estimate:9.4f}  [{r.ci_low:.4f}, {r.ci_high:.4f}]")
        return "\n".join(lines)


def _pearson_mapped(p, t):
    return pearson(poly3_map(p, t)[0], t)


def evaluate_arrays(pred: dict[str, np.ndarray], true: dict[str, np.ndarray], cfg: EvalConfig | None = None,
                    meta: dict | None = None) -> EvalReport:
    """Report over flattened (scene x channel) pairs for every metric present."""
    cfg = cfg or EvalConfig()
    results = []
    for k, name in enumerate(RMSE_METRICS):
        if name not in pred:
            continue
        p = np.asarray(pred[name], dtype=np.float64).ravel()
        t = np.asarray(true[name], dtype=np.float64).ravel()
        seed = cfg.seed * 100 + k
        low, high, skipped = bootstrap_ci(p, t, rmse, cfg.bootstrap_reps, cfg.ci_level, seed)
        results.append(MetricResult(name, "rmse", rmse(p, t), low, high, len(p), skipped))
        if name == "mos":
            for stat, fn in (("pearson", pearson), ("pearson_poly3", _pearson_mapped)):
                try:
                    est = fn(p, t)
                    low, high, skipped = bootstrap_ci(p, t, fn, cfg.bootstrap_reps, cfg.ci_level, seed + 50)
                except DegenerateError as exc:
                    log.warning("MOS %s undefined: %s", stat, exc)
                    est = low = high = float("nan")
                    skipped = 0
                results.append(MetricResult(name, stat, est, low, high, len(p), skipped))
    info = {
        "bootstrap": {"reps": cfg.bootstrap_reps, "level": cfg.ci_level, "unit": "scene x channel", "method": "percentile"},
        "seed": cfg.seed,
        **(meta or {}),
    }
    return EvalReport(results, info)


def labels_from_manifest(entries: list[dict], metrics=RMSE_METRICS) -> tuple[dict[str, np.ndarray], list[str]]:
    """Ground-truth arrays ``[scenes, channels]`` keyed by metric name."""
    out = {m: np.array([[lab[m] for lab in e["labels"]] for e in entries], dtype=np.float64) for m in metrics}
    return out, [e["id"] for e in entries]


def read_predictions(path: str | Path) -> dict[str, list[dict]]:
    """JSONL with ``{"id": ..., "channels": [{metric: value}, ...]}`` per scene."""
    out = {}
    with open(path) as fh:
        for line in fh:
            if line.strip():
                d = json.loads(line)
                out[d["id"]] = d["channels"]
    return out


def evaluate(
    predict: Callable[[dict], list[dict]] | dict[str, list[dict]],
    entries: list[dict],
    cfg: EvalConfig | None = None,
    meta: dict | None = None,
) -> EvalReport:
    """Evaluate per-scene predictions (callable or id-keyed mapping) on manifest entries.

    Scenes without labels or predictions are skipped and counted.
    """
    preds = {m: [] for m in RMSE_METRICS}
    trues = {m: [] for m in RMSE_METRICS}
    skipped = 0
    for e in entries:
        labels = e.get("labels")
        chans = predict.get(e["id"]) if isinstance(predict, dict) else predict(e)
        if not labels or chans is None or len(chans) != len(labels):
            skipped += 1
            continue
        for m in RMSE_METRICS:
            preds[m].extend(float(c[m]) for c in chans)
            trues[m].extend(float(lab[m]) for lab in labels)
    if not preds["mos"]:
        raise ValueError("no scenes to evaluate")
    return evaluate_arrays(preds, trues, cfg, {"n_scenes": len(entries) - skipped, "skipped_scenes": skipped, **(meta or {})})
