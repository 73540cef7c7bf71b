"""Pure-Python (numpy) fallback for the compiled ray tracer.

All rays advance in lockstep. Each ray keeps its own splitmix64 state and
consumes draws in the same order as the compiled kernel, so trajectories,
termination decisions and per-ray ledgers are identical; histograms differ
only by floating-point summation order.
"""
from __future__ import annotations

import numpy as np

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_RAY_MIX = np.uint64(0xD1B54A32D192ED03)
_INV_2_53 = 1.0 / 9007199254740992.0


def _uniform(state: np.ndarray, idx: np.ndarray) -> np.ndarray:
    z = state[idx] + _GOLDEN
    state[idx] = z
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    z = z ^ (z >> np.uint64(31))
    return (z >> np.uint64(11)).astype(np.float64) * _INV_2_53


def _disk(state: np.ndarray, idx: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Rejection-sample points in the unit disk; returns (x1, x2, x1²+x2²)."""
    x1 = np.empty(idx.size)
    x2 = np.empty(idx.size)
    s = np.empty(idx.size)
    pending = np.arange(idx.size)
    while pending.size:
        rays = idx[pending]
        a = 2.0 * _uniform(state, rays) - 1.0
        b = 2.0 * _uniform(state, rays) - 1.0
        ss = a * a + b * b
        ok = ss < 1.0
        x1[pending[ok]] = a[ok]
        x2[pending[ok]] = b[ok]
        s[pending[ok]] = ss[ok]
        pending = pending[~ok]
    return x1, x2, s


def trace(
    dims,
    absorption,
    scattering,
    source,
    receivers,
    radius,
    n_rays,
    seed,
    c,
    bin_width,
    n_bins,
    max_time,
    energy_floor,
    min_order,
    accounting,
    max_bounces=100000,
):
    dims = np.asarray(dims, dtype=np.float64)
    absorption = np.asarray(absorption, dtype=np.float64)
    scattering = np.asarray(scattering, dtype=np.float64)
    receivers = np.asarray(receivers, dtype=np.float64).reshape(-1, 3)
    if absorption.shape[0] != 6 or scattering.shape[0] != 6:
        raise ValueError("expected 6 surfaces")
    n_rays = int(n_rays)
    n_bins = int(n_bins)
    n_bands = absorption.shape[1]
    n_rec = receivers.shape[0]

    hist = np.zeros((n_rec, n_bands, n_bins))
    absorbed = np.zeros((n_rays, n_bands))
    remaining = np.zeros((n_rays, n_bands))

    e0 = 1.0 / n_rays
    r2 = radius * radius
    inv_c = 1.0 / c
    max_dist = max_time * c
    floor_abs = energy_floor * e0

    ray_ids = np.arange(n_rays, dtype=np.uint64)
    with np.errstate(over="ignore"):
        state = np.uint64(seed) ^ ((ray_ids + np.uint64(1)) * _RAY_MIX)

    all_rays = np.arange(n_rays)
    x1, x2, s = _disk(state, all_rays)
    f = 2.0 * np.sqrt(1.0 - s)
    d = np.stack([x1 * f, x2 * f, 1.0 - 2.0 * s], axis=1)
    p = np.tile(np.asarray(source, dtype=np.float64), (n_rays, 1))
    e = np.full((n_rays, n_bands), e0)
    dist = np.zeros(n_rays)
    order = np.zeros(n_rays, dtype=np.int64)
    active = all_rays

    while active.size:
        done = (dist[active] >= max_dist) | (order[active] >= max_bounces)
        if done.any():
            gone = active[done]
            remaining[gone] += e[gone]
            active = active[~done]
            if not active.size:
                break

        pa = p[active]
        da_ = d[active]
        t_hit = np.full(active.size, 1e300)
        wall = np.full(active.size, -1, dtype=np.int64)
        for a in range(3):
            pos = da_[:, a] > 0.0
            neg = da_[:, a] < 0.0
            t = np.full(active.size, np.inf)
            t[pos] = (dims[a] - pa[pos, a]) / da_[pos, a]
            t[neg] = -pa[neg, a] / da_[neg, a]
            better = t < t_hit
            t_hit = np.where(better, t, t_hit)
            wall = np.where(better & pos, 2 * a + 1, np.where(better & neg, 2 * a, wall))

        listening = order[active] >= min_order
        if listening.any():
            for m in range(n_rec):
                ox = receivers[m, 0] - pa[:, 0]
                oy = receivers[m, 1] - pa[:, 1]
                oz = receivers[m, 2] - pa[:, 2]
                b = ox * da_[:, 0] + oy * da_[:, 1] + oz * da_[:, 2]
                cc = ox * ox + oy * oy + oz * oz - r2
                disc = b * b - cc
                cand = listening & (cc > 0.0) & (b > 0.0) & (disc > 0.0)
                if not cand.any():
                    continue
                te = np.full(active.size, np.inf)
                te[cand] = b[cand] - np.sqrt(disc[cand])
                hit = cand & (te <= t_hit)
                if not hit.any():
                    continue
                tt = (dist[active][hit] + te[hit]) * inv_c
                k = (tt / bin_width).astype(np.int64)
                keep = (k >= 0) & (k < n_bins)
                rays = active[hit][keep]
                for band in range(n_bands):
                    np.add.at(hist[m, band], k[keep], e[rays, band])

        axis = wall // 2
        rows = np.arange(active.size)
        pa = np.stack([pa[:, a] + t_hit * da_[:, a] for a in range(3)], axis=1)
        pa = np.clip(pa, 0.0, dims)
        pa[rows, axis] = np.where(wall % 2 == 0, 0.0, dims[axis])
        p[active] = pa
        dist[active] = dist[active] + t_hit
        order[active] += 1

        alpha = absorption[wall]
        ea = e[active]
        absorbed[active] += ea * alpha
        ea = ea * (1.0 - alpha)
        e[active] = ea
        dead = ea.max(axis=1) < floor_abs
        if dead.any():
            gone = active[dead]
            remaining[gone] += e[gone]
        alive = ~dead
        active = active[alive]
        axis = axis[alive]
        wall = wall[alive]
        if not active.size:
            break

        u = _uniform(state, active)
        diffuse = u < scattering[wall]
        spec = ~diffuse
        if spec.any():
            rays = active[spec]
            d[rays, axis[spec]] = -d[rays, axis[spec]]
        if diffuse.any():
            rays = active[diffuse]
            ax = axis[diffuse]
            wl = wall[diffuse]
            x1, x2, s = _disk(state, rays)
            nn = np.sqrt(1.0 - s)
            d[rays, ax] = np.where(wl % 2 == 0, nn, -nn)
            d[rays, (ax + 1) % 3] = x1
            d[rays, (ax + 2) % 3] = x2

    if accounting:
        return hist, absorbed, remaining
    return hist, None, None
