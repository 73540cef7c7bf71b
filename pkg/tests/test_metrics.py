import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from echoforge.metrics import (
    MODULATION_FREQS,
    STI_WEIGHTS,
    EnergyDecayCurve,
    InsufficientDecayError,
    SilentRirError,
    band_snr,
    clarity_c50,
    compute_labels,
    drr,
    energy_decay_curve,
    estimate_t60,
    modulation_transfer,
    pseudo_mos,
    snr_from_signals,
    sti_from_mtf,
    sti_from_rir,
)
from echoforge.rir import Rir

FS = 32000


def exp_rir(t60, dur=None, fs=FS, noise=False, seed=0):
    dur = dur or 3 * t60
    t = np.arange(int(dur * fs)) / fs
    env = 10 ** (-3 * t / t60)  # amplitude: energy falls 60 dB at t60
    if noise:
        return np.random.default_rng(seed).standard_normal(len(t)) * env
    return env


def sti_oracle(t60, snr_db=None):
    """Closed-form MTF of an exponential decay, optionally with flat noise."""
    f = np.asarray(MODULATION_FREQS)
    m = 1.0 / np.sqrt(1.0 + (2 * np.pi * f * t60 / 13.8) ** 2)
    if snr_db is not None:
        m = m / (1 + 10 ** (-snr_db / 10))
    snr = np.clip(10 * np.log10(m / (1 - m)), -15, 15)
    ti = ((snr + 15) / 30).mean()
    return float(ti * sum(STI_WEIGHTS))


@pytest.mark.parametrize("t60", [0.2, 0.5, 1.2])
def test_t60_exponential(t60):
    assert estimate_t60(energy_decay_curve(exp_rir(t60))) == pytest.approx(t60, rel=0.01)


def test_t60_falls_back_to_t20():
    # linear decay bottoming out at -30 dB: only the T20 range exists
    t = np.arange(int(0.5 * FS)) / FS
    edc = EnergyDecayCurve(-60.0 * t / 1.0, FS)
    assert estimate_t60(edc) == pytest.approx(1.0, rel=1e-9)


def test_t60_insufficient_decay():
    t = np.arange(int(0.3 * FS)) / FS
    with pytest.raises(InsufficientDecayError):
        estimate_t60(EnergyDecayCurve(-60.0 * t / 1.0, FS))


def test_silent_rir():
    with pytest.raises(SilentRirError):
        energy_decay_curve(np.zeros(100))


def test_edc_starts_at_zero_and_decreases():
    edc = energy_decay_curve(exp_rir(0.5, noise=True))
    assert edc.values_db[0] == 0.0
    assert np.all(np.diff(edc.values_db) <= 1e-12)


def two_impulses(a, b, gap_ms, t0=100):
    h = np.zeros(FS)
    h[t0] = a
    h[t0 + int(round(gap_ms * FS / 1000))] = b
    return h


@pytest.mark.parametrize("a,b", [(1.0, 0.5), (1.0, 0.1), (0.8, 0.8)])
def test_c50_two_impulses(a, b):
    h = two_impulses(a, b, 80)
    assert clarity_c50(h, FS, t0=100) == pytest.approx(20 * np.log10(a / b), abs=0.02)


def test_c50_all_early_clamps():
    assert clarity_c50(two_impulses(1, 0.5, 20), FS, t0=100) == 60.0


@pytest.mark.parametrize("a,b", [(1.0, 0.5), (1.0, 0.2)])
def test_drr_two_impulses(a, b):
    h = two_impulses(a, b, 10)
    assert drr(h, FS) == pytest.approx(20 * np.log10(a / b), abs=0.02)


def test_drr_pure_impulse_clamps():
    h = np.zeros(1000)
    h[10] = 1
    assert drr(h, FS) == 60.0


def test_sti_delta_is_one():
    h = np.zeros(FS)
    h[0] = 1.0
    assert sti_from_rir(h, FS) == pytest.approx(1.0, abs=1e-6)


def test_sti_half_at_zero_db():
    h = np.zeros(FS)
    h[0] = 1.0
    assert sti_from_rir(h, FS, snr_per_band=0.0) == pytest.approx(0.5, abs=1e-6)


def test_sti_mtf_equal_one_saturates():
    assert sti_from_mtf(np.ones((7, 14))) == pytest.approx(1.0)
    assert sti_from_mtf(np.zeros((7, 14))) == pytest.approx(0.0)


@pytest.mark.parametrize("t60", [0.3, 0.6, 1.2])
def test_sti_matches_closed_form(t60):
    h = exp_rir(t60, dur=2.5 * t60 + 0.3, noise=True, seed=1)
    assert sti_from_rir(h, FS) == pytest.approx(sti_oracle(t60), abs=0.03)


def test_sti_monotone_in_t60():
    t60s = [0.2, 0.4, 0.8, 1.6]
    got = [sti_from_rir(exp_rir(t, dur=2.5 * t + 0.3, noise=True, seed=2), FS) for t in t60s]
    oracle = [sti_oracle(t) for t in t60s]
    assert all(x > y for x, y in zip(got, got[1:]))
    assert all(x > y for x, y in zip(oracle, oracle[1:]))


def test_mtf_shape_and_range():
    m = modulation_transfer(exp_rir(0.5, noise=True), FS)
    assert m.shape == (7, 14)
    assert np.all((m >= 0) & (m <= 1))


@settings(max_examples=20, deadline=None)
@given(st.floats(0.01, 100.0))
def test_metrics_scale_invariant(k):
    h = exp_rir(0.4, noise=True, seed=3)
    assert clarity_c50(k * h, FS) == pytest.approx(clarity_c50(h, FS), abs=1e-9)
    assert drr(k * h, FS) == pytest.approx(drr(h, FS), abs=1e-9)
    assert estimate_t60(energy_decay_curve(k * h)) == pytest.approx(estimate_t60(energy_decay_curve(h)), rel=1e-9)


def test_snr_and_band_snr():
    rng = np.random.default_rng(0)
    s = rng.standard_normal(FS)
    n = 0.1 * rng.standard_normal(FS)
    assert snr_from_signals(s, n) == pytest.approx(10 * np.log10(np.sum(s**2) / np.sum(n**2)))
    bands = band_snr(s, n, FS)
    assert bands.shape == (7,)
    assert np.all(np.abs(bands - 20) < 2)
    assert snr_from_signals(s, np.zeros(FS)) == 60.0
    with pytest.raises(ValueError):
        snr_from_signals(s, n[:-1])


def test_pseudo_mos_bounds_and_monotone():
    assert pseudo_mos(0.0, -100) == 1.0
    assert pseudo_mos(1.0, 100) == pytest.approx(1 + 4 * 1.0)
    assert pseudo_mos(0.5, 10) < pseudo_mos(0.6, 10) < pseudo_mos(0.6, 20)


def test_compute_labels_clean_path():
    h = exp_rir(0.5, dur=1.6, noise=True)
    h[:100] = 0
    h[100] = 5.0
    lab = compute_labels(Rir(h, FS, 100))
    assert lab.snr_db == 60.0
    assert 0 < lab.sti <= 1
    assert lab.t60_s == pytest.approx(0.5, rel=0.1)
    assert 1 <= lab.mos <= 5
    assert set(lab.to_dict()) == {"sti", "t60_s", "c50_db", "drr_db", "snr_db", "mos"}
