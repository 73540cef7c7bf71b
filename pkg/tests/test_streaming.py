import csv
import json

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from echoforge.config import ModelConfig, StreamConfig
from echoforge.net import Checkpoint, MosraNet, Normalizer
from echoforge.streaming import (
    CSV_COLUMNS,
    RingBuffer,
    StreamProcessor,
    argmax_track,
    batch_windows,
    run_stream,
    standardize_across_channels,
    tick_samples,
    write_trace,
)

FS = 32000


@pytest.fixture(scope="module")
def ckpt():
    torch.manual_seed(0)
    cfg = ModelConfig(cnn_channels=(3, 4, 4), d_model=8, n_layers=1, n_heads=2, d_ff=12, head_hidden=6)
    return Checkpoint(MosraNet(cfg).eval(), Normalizer([3, 0.5, 0.5, 0, 5], [1, 0.2, 0.3, 5, 5]))


def signals(n_ch, seconds, seed=0):
    rng = np.random.default_rng(seed)
    return list(rng.standard_normal((n_ch, int(seconds * FS))) * (0.05 + 0.05 * np.arange(n_ch)[:, None]))


def test_ring_buffer_wraps():
    rb = RingBuffer(2, 5)
    rb.push(np.array([[1, 2, 3], [4, 5, 6]]))
    assert rb.read().tolist() == [[1, 2, 3], [4, 5, 6]]
    rb.push(np.array([[7, 8, 9], [10, 11, 12]]))
    assert rb.read().tolist() == [[2, 3, 7, 8, 9], [5, 6, 10, 11, 12]]
    rb.push(np.arange(14).reshape(2, 7))
    assert rb.read().tolist() == [[2, 3, 4, 5, 6], [9, 10, 11, 12, 13]]
    with pytest.raises(ValueError):
        rb.push(np.zeros((3, 1)))


@settings(max_examples=40, deadline=None)
@given(st.lists(st.integers(1, 13), min_size=1, max_size=20), st.integers(1, 17))
def test_ring_buffer_matches_tail(sizes, cap):
    full = np.arange(sum(sizes), dtype=float)[None]
    rb = RingBuffer(1, cap)
    pos = 0
    for s in sizes:
        rb.push(full[:, pos : pos + s])
        pos += s
        assert np.array_equal(rb.read(), full[:, max(0, pos - cap) : pos])


def test_standardize_hand_case():
    z = standardize_across_channels(np.array([1.0, 2.0, 3.0]))
    assert np.allclose(z, [-1.2247449, 0.0, 1.2247449])
    assert standardize_across_channels(np.array([2.0, 2.0, 2.0])).tolist() == [0.0, 0.0, 0.0]


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(-10, 10), min_size=2, max_size=5), st.floats(0.01, 100), st.floats(-50, 50))
def test_standardized_argmax_invariant_to_affine(xs, a, b):
    x = np.array(xs)
    if x.std() < 1e-6 or len(set(np.round(x, 6))) < len(x):
        return
    assert np.argmax(standardize_across_channels(x)) == np.argmax(standardize_across_channels(a * x + b))


def test_tick_schedule():
    cfg = StreamConfig()
    ticks = tick_samples(10 * FS, FS, cfg)
    assert len(ticks) == 18
    assert ticks[0] == int(1.5 * FS) and ticks[-1] == 10 * FS
    assert tick_samples(FS, FS, cfg) == []


@pytest.mark.parametrize("n_ch", [1, 3, 5])
def test_stream_equals_batch_windows(ckpt, n_ch):
    x = signals(n_ch, 6.0, n_ch)
    rows = run_stream(ckpt, x)
    ref = batch_windows(ckpt, x)
    assert rows == ref
    assert len(rows) == len(tick_samples(6 * FS, FS, StreamConfig())) * n_ch * 5


def test_block_size_does_not_matter(ckpt):
    x = signals(3, 4.0, 7)
    assert run_stream(ckpt, x, block_s=0.1) == run_stream(ckpt, x, block_s=0.37)


def test_short_first_window_is_scored(ckpt):
    # warmup 0.1 s: the first window is below one segment and is skipped, later ones are scored
    cfg = StreamConfig(warmup_s=0.0, hop_s=0.1)
    proc = StreamProcessor(ckpt, 2, FS, cfg)
    rows = proc.feed(np.stack(signals(2, 1.0)))
    assert proc.skipped >= 1 and len(rows) > 0
    assert rows == batch_windows(ckpt, signals(2, 1.0), FS, cfg)


def test_constant_input_gives_constant_trace(ckpt):
    x = [np.full(6 * FS, 0.1), np.full(6 * FS, -0.2), np.full(6 * FS, 0.05)]
    rows = run_stream(ckpt, x)
    full = [r for r in rows if r[0] >= 4.0]  # buffer full from 4 s on
    assert len({r[0] for r in full}) == 5
    for c in range(3):
        for m in ("mos", "sti"):
            vals = {r[3] for r in full if r[1] == c and r[2] == m}
            assert len(vals) == 1


def test_identical_scores_standardize_to_zero():
    assert standardize_across_channels(np.full((5, 3), 2.5)).tolist() == [[0.0] * 3] * 5


def test_rejects_too_many_channels(ckpt):
    with pytest.raises(ValueError):
        StreamProcessor(ckpt, 6)


def test_write_trace_and_argmax(tmp_path, ckpt):
    rows = run_stream(ckpt, signals(3, 3.0))
    write_trace(tmp_path / "t.csv", rows, {"seed": 1})
    with open(tmp_path / "t.csv") as fh:
        data = list(csv.reader(fh))
    assert tuple(data[0]) == CSV_COLUMNS and len(data) == len(rows) + 1
    side = json.loads((tmp_path / "t.csv.json").read_text())
    assert side["seed"] == 1 and side["columns"] == list(CSV_COLUMNS)
    times, best = argmax_track(rows)
    assert len(times) == len(tick_samples(3 * FS, FS, StreamConfig()))
    assert set(best.tolist()) <= {0, 1, 2}
