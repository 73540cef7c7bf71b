# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled stochastic ray tracer for shoebox rooms.

Mirrors ``echoforge._raytrace_py`` operation for operation: every ray owns a
splitmix64 stream seeded from ``(seed, ray index)`` and direction sampling is
trig-free (Marsaglia sphere, Malley disk), so both paths follow identical
ray trajectories.
"""
import numpy as np

cimport numpy as cnp
from libc.math cimport sqrt
from libc.stdint cimport int64_t, uint64_t

cnp.import_array()

DEF MAX_BANDS = 16

cdef uint64_t RAY_MIX = 0xD1B54A32D192ED03ULL


cdef inline uint64_t _next(uint64_t* state) noexcept nogil:
    cdef uint64_t z
    state[0] = state[0] + 0x9E3779B97F4A7C15ULL
    z = state[0]
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL
    return z ^ (z >> 31)


cdef inline double _uniform(uint64_t* state) noexcept nogil:
    return <double>(_next(state) >> 11) * (1.0 / 9007199254740992.0)


def trace(
    double[::1] dims,
    double[:, ::1] absorption,
    double[::1] scattering,
    double[::1] source,
    double[:, ::1] receivers,
    double radius,
    int64_t n_rays,
    uint64_t seed,
    double c,
    double bin_width,
    int64_t n_bins,
    double max_time,
    double energy_floor,
    int64_t min_order,
    bint accounting,
    int64_t max_bounces=100000,
):
    """Trace ``n_rays`` rays and return ``(hist, absorbed, remaining)``.

    ``hist`` has shape (n_receivers, n_bands, n_bins). ``absorbed`` and
    ``remaining`` are per-ray, per-band ledgers (shape (n_rays, n_bands)) when
    ``accounting`` is set, else ``None``.
    """
    cdef Py_ssize_t n_rec = receivers.shape[0]
    cdef Py_ssize_t n_bands = absorption.shape[1]
    if n_bands > MAX_BANDS:
        raise ValueError(f"at most {MAX_BANDS} bands supported")
    if absorption.shape[0] != 6 or scattering.shape[0] != 6:
        raise ValueError("expected 6 surfaces")

    hist_arr = np.zeros((n_rec, n_bands, n_bins), dtype=np.float64)
    cdef double[:, :, ::1] hist = hist_arr
    if accounting:
        absorbed_arr = np.zeros((n_rays, n_bands), dtype=np.float64)
        remaining_arr = np.zeros((n_rays, n_bands), dtype=np.float64)
    else:
        absorbed_arr = np.zeros((0, n_bands), dtype=np.float64)
        remaining_arr = np.zeros((0, n_bands), dtype=np.float64)
    cdef double[:, ::1] absorbed = absorbed_arr
    cdef double[:, ::1] remaining = remaining_arr

    cdef double e0 = 1.0 / <double>n_rays
    cdef double r2 = radius * radius
    cdef double inv_c = 1.0 / c
    cdef double max_dist = max_time * c
    cdef double floor_abs = energy_floor * e0

    cdef double e[MAX_BANDS]
    cdef double p[3]
    cdef double d[3]
    cdef double x1, x2, s, f, t, t_hit, dist, ox, oy, oz, b, cc, disc, te, tt, emax, da, u, nn
    cdef int64_t i, bounces, order, k
    cdef Py_ssize_t m, band, a, wall, axis, a1, a2
    cdef uint64_t state
    cdef bint accepted

    with nogil:
        for i in range(n_rays):
            state = seed ^ (<uint64_t>(i + 1) * RAY_MIX)
            # uniform direction on the sphere (Marsaglia)
            while True:
                x1 = 2.0 * _uniform(&state) - 1.0
                x2 = 2.0 * _uniform(&state) - 1.0
                s = x1 * x1 + x2 * x2
                if s < 1.0:
                    break
            f = 2.0 * sqrt(1.0 - s)
            d[0] = x1 * f
            d[1] = x2 * f
            d[2] = 1.0 - 2.0 * s
            p[0] = source[0]
            p[1] = source[1]
            p[2] = source[2]
            for band in range(n_bands):
                e[band] = e0
            dist = 0.0
            order = 0
            bounces = 0

            while True:
                if dist >= max_dist or bounces >= max_bounces:
                    if accounting:
                        for band in range(n_bands):
                            remaining[i, band] += e[band]
                    break

                t_hit = 1e300
                wall = -1
                for a in range(3):
                    if d[a] > 0.0:
                        t = (dims[a] - p[a]) / d[a]
                        if t < t_hit:
                            t_hit = t
                            wall = 2 * a + 1
                    elif d[a] < 0.0:
                        t = -p[a] / d[a]
                        if t < t_hit:
                            t_hit = t
                            wall = 2 * a

                if order >= min_order:
                    for m in range(n_rec):
                        ox = receivers[m, 0] - p[0]
                        oy = receivers[m, 1] - p[1]
                        oz = receivers[m, 2] - p[2]
                        b = ox * d[0] + oy * d[1] + oz * d[2]
                        cc = ox * ox + oy * oy + oz * oz - r2
                        if cc > 0.0 and b > 0.0:
                            disc = b * b - cc
                            if disc > 0.0:
                                te = b - sqrt(disc)
                                if te <= t_hit:
                                    tt = (dist + te) * inv_c
                                    k = <int64_t>(tt / bin_width)
                                    if 0 <= k < n_bins:
                                        for band in range(n_bands):
                                            hist[m, band, k] += e[band]

                axis = wall // 2
                p[0] = p[0] + t_hit * d[0]
                p[1] = p[1] + t_hit * d[1]
                p[2] = p[2] + t_hit * d[2]
                for a in range(3):
                    if p[a] < 0.0:
                        p[a] = 0.0
                    elif p[a] > dims[a]:
                        p[a] = dims[a]
                if wall % 2 == 0:
                    p[axis] = 0.0
                else:
                    p[axis] = dims[axis]
                dist = dist + t_hit
                order += 1
                bounces += 1

                emax = 0.0
                for band in range(n_bands):
                    da = e[band] * absorption[wall, band]
                    e[band] = e[band] * (1.0 - absorption[wall, band])
                    if accounting:
                        absorbed[i, band] += da
                    if e[band] > emax:
                        emax = e[band]
                if emax < floor_abs:
                    if accounting:
                        for band in range(n_bands):
                            remaining[i, band] += e[band]
                    break

                u = _uniform(&state)
                if u < scattering[wall]:
                    # cosine-weighted about the inward normal (Malley)
                    while True:
                        x1 = 2.0 * _uniform(&state) - 1.0
                        x2 = 2.0 * _uniform(&state) - 1.0
                        s = x1 * x1 + x2 * x2
                        if s < 1.0:
                            break
                    nn = sqrt(1.0 - s)
                    a1 = (axis + 1) % 3
                    a2 = (axis + 2) % 3
                    if wall % 2 == 0:
                        d[axis] = nn
                    else:
                        d[axis] = -nn
                    d[a1] = x1
                    d[a2] = x2
                else:
                    d[axis] = -d[axis]

    if accounting:
        return hist_arr, absorbed_arr, remaining_arr
    return hist_arr, None, None
