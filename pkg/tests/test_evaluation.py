import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from echoforge.config import EvalConfig
from echoforge.evaluation import (
    RMSE_METRICS,
    DegenerateError,
    EvalReport,
    MetricResult,
    bootstrap_ci,
    evaluate,
    evaluate_arrays,
    labels_from_manifest,
    pearson,
    poly3_map,
    read_predictions,
    rmse,
)


def test_rmse_hand_cases():
    assert rmse([1, 2, 3], [1, 2, 3]) == 0.0
    assert rmse([0, 0], [3, 4]) == pytest.approx(np.sqrt(12.5))
    with pytest.raises(ValueError, match="length"):
        rmse([1, 2], [1])
    with pytest.raises(ValueError):
        rmse([], [])


def test_pearson_hand_cases():
    assert pearson([1, 2, 3], [2, 4, 6]) == pytest.approx(1.0)
    assert pearson([1, 2, 3], [3, 2, 1]) == pytest.approx(-1.0)
    assert pearson([1, 2, 3, 4], [1, 3, 2, 4]) == pytest.approx(0.8)
    with pytest.raises(DegenerateError):
        pearson([1, 1, 1], [1, 2, 3])
    with pytest.raises(DegenerateError):
        pearson([1], [1])


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-100, 100), min_size=3, max_size=30), st.floats(0.1, 10), st.floats(-5, 5))
def test_pearson_affine_invariant(xs, a, b):
    x = np.array(xs)
    y = np.sin(x) + 0.1 * x
    try:
        r = pearson(x, y)
    except DegenerateError:
        return
    assert pearson(a * x + b, y) == pytest.approx(r, abs=1e-9)
    assert -1 <= r <= 1


def test_bootstrap_zero_width_for_perfect_predictions():
    t = np.linspace(1, 5, 40)
    low, high, skipped = bootstrap_ci(t, t, rmse, reps=200)
    assert low == high == 0.0 and skipped == 0


def test_bootstrap_deterministic_and_seed_dependent():
    rng = np.random.default_rng(0)
    t = rng.normal(size=50)
    p = t + rng.normal(size=50)
    a = bootstrap_ci(p, t, rmse, reps=300, seed=4)
    assert a == bootstrap_ci(p, t, rmse, reps=300, seed=4)
    assert a != bootstrap_ci(p, t, rmse, reps=300, seed=5)


def test_bootstrap_degenerate_resamples():
    # two pairs: half the resamples repeat one pair and have zero variance
    with pytest.raises(DegenerateError):
        bootstrap_ci([1.0, 2.0], [1.0, 3.0], pearson, reps=200)
    t = np.arange(30.0)
    low, high, skipped = bootstrap_ci(t + np.sin(t), t, pearson, reps=200)
    assert skipped == 0 and low <= high <= 1


def test_bootstrap_coverage():
    # RMSE of N(0, 1) errors: the interval should cover sqrt(E[e^2]) = 1 near the nominal rate
    rng = np.random.default_rng(11)
    hits = 0
    trials = 200
    for i in range(trials):
        e = rng.normal(size=100)
        low, high, _ = bootstrap_ci(e, np.zeros(100), rmse, reps=400, seed=i)
        hits += low <= 1.0 <= high
    assert 0.88 <= hits / trials <= 0.99


def test_poly3_recovers_cubic():
    p = np.linspace(-2, 2, 30)
    t = 0.5 * p**3 - p + 2
    mapped, fell_back = poly3_map(p, t)
    assert not fell_back
    assert np.allclose(mapped, t)


def test_poly3_rank_deficient_falls_back():
    p = np.array([1.0, 1.0, 2.0, 2.0, 2.0])
    t = np.array([1.0, 1.2, 2.0, 2.1, 1.9])
    mapped, fell_back = poly3_map(p, t)
    assert fell_back
    assert np.allclose(mapped, [1.1, 1.1, 2.0, 2.0, 2.0])
    with pytest.raises(ValueError):
        poly3_map([1, 2, 3], [1, 2, 3])


def test_poly3_never_lowers_fit():
    rng = np.random.default_rng(2)
    p = rng.normal(size=60)
    t = np.tanh(p) + 0.1 * rng.normal(size=60)
    mapped, _ = poly3_map(p, t)
    assert pearson(mapped, t) >= pearson(p, t) - 1e-12


def test_metric_result_brackets_estimate():
    r = MetricResult("mos", "rmse", 0.5, 0.6, 0.9, 10)
    assert r.ci_low == 0.5 and r.ci_high == 0.9


def fake_entries(n=12, seed=0):
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n):
        labels = [{"sti": rng.uniform(0.3, 0.9), "t60_s": rng.uniform(0.2, 1.0), "drr_db": rng.normal(0, 5),
                   "c50_db": rng.normal(5, 5), "snr_db": 20.0, "mos": rng.uniform(1.5, 4.5)} for _ in range(3)]
        out.append({"id": f"{i:06d}", "labels": labels, "wavs": []})
    return out


def test_oracle_predictions_score_zero():
    entries = fake_entries()
    preds = {e["id"]: e["labels"] for e in entries}
    rep = evaluate(preds, entries, EvalConfig(bootstrap_reps=100))
    for m in RMSE_METRICS:
        r = rep.get(m)
        assert r.estimate == 0.0 and r.ci_low == r.ci_high == 0.0 and r.n == 36
    assert rep.get("mos", "pearson").estimate == pytest.approx(1.0)
    assert rep.meta["n_scenes"] == 12


def test_evaluate_skips_missing_and_report_roundtrip(tmp_path):
    entries = fake_entries()
    preds = {e["id"]: [{k: v + 0.1 for k, v in lab.items()} for lab in e["labels"]] for e in entries[1:]}
    rep = evaluate(preds, entries, EvalConfig(bootstrap_reps=100))
    assert rep.meta["skipped_scenes"] == 1
    assert rep.get("sti").estimate == pytest.approx(0.1)
    rep.save(tmp_path / "r.json")
    back = EvalReport.load(tmp_path / "r.json")
    assert back.to_dict() == json.loads(rep.to_json())
    assert "mos" in back.table()
    with pytest.raises(KeyError):
        rep.get("nope")


def test_read_predictions(tmp_path):
    entries = fake_entries(3)
    lines = [json.dumps({"id": e["id"], "channels": e["labels"]}) for e in entries]
    (tmp_path / "p.jsonl").write_text("\n".join(lines) + "\n\n")
    preds = read_predictions(tmp_path / "p.jsonl")
    assert list(preds) == ["000000", "000001", "000002"]
    arrs, ids = labels_from_manifest(entries)
    assert arrs["mos"].shape == (3, 3) and ids == list(preds)


def test_constant_predictions_mark_pearson_undefined():
    t = {"mos": np.linspace(1, 5, 20)}
    rep = evaluate_arrays({"mos": np.full(20, 3.0)}, t, EvalConfig(bootstrap_reps=50))
    assert np.isnan(rep.get("mos", "pearson").estimate)
    assert rep.get("mos").estimate > 0
