"""Compiled numerical kernels.

Potentials are selected by an integer ``kind`` code plus a flat parameter
vector so that a single compiled Verlet loop serves every shipped system:

    HARMONIC  params = [omega]                 V = omega^2 |q|^2 / 2
    KEPLER    params = [alpha]                 V = -alpha / |q|
    NBODY     params = [G, m_1, ..., m_B]      all pairs i < j
    NBODY_SUN params = [G, m_1, ..., m_B]      only pairs (1, j)

All kernels release the GIL so that window batches can be split across
threads without changing a single bit of the result.
"""
import math

import numpy as np
from numba import njit

HARMONIC = 0
KEPLER = 1
NBODY = 2
NBODY_SUN = 3


@njit(cache=True, nogil=True)
def potential(kind, params, q):
    if kind == HARMONIC:
        w2 = params[0] * params[0]
        s = 0.0
        for i in range(q.shape[0]):
            s += q[i] * q[i]
        return 0.5 * w2 * s
    if kind == KEPLER:
        r = math.sqrt(q[0] * q[0] + q[1] * q[1])
        return -params[0] / r
    G = params[0]
    nb = params.shape[0] - 1
    v = 0.0
    last_i = nb if kind == NBODY else 1
    for i in range(last_i):
        for j in range(i + 1, nb):
            dx = q[3 * i] - q[3 * j]
            dy = q[3 * i + 1] - q[3 * j + 1]
            dz = q[3 * i + 2] - q[3 * j + 2]
            r = math.sqrt(dx * dx + dy * dy + dz * dz)
            v -= G * params[1 + i] * params[1 + j] / r
    return v


@njit(cache=True, nogil=True)
def grad_potential(kind, params, q, out):
    if kind == HARMONIC:
        w2 = params[0] * params[0]
        for i in range(q.shape[0]):
            out[i] = w2 * q[i]
        return
    if kind == KEPLER:
        r2 = q[0] * q[0] + q[1] * q[1]
        c = params[0] / (r2 * math.sqrt(r2))
        out[0] = c * q[0]
        out[1] = c * q[1]
        return
    G = params[0]
    nb = params.shape[0] - 1
    for i in range(out.shape[0]):
        out[i] = 0.0
    last_i = nb if kind == NBODY else 1
    for i in range(last_i):
        for j in range(i + 1, nb):
            dx = q[3 * i] - q[3 * j]
            dy = q[3 * i + 1] - q[3 * j + 1]
            dz = q[3 * i + 2] - q[3 * j + 2]
            r2 = dx * dx + dy * dy + dz * dz
            c = G * params[1 + i] * params[1 + j] / (r2 * math.sqrt(r2))
            out[3 * i] += c * dx
            out[3 * i + 1] += c * dy
            out[3 * i + 2] += c * dz
            out[3 * j] -= c * dx
            out[3 * j + 1] -= c * dy
            out[3 * j + 2] -= c * dz


@njit(cache=True, nogil=True)
def _verlet_inplace(kind, params, minv, q, p, h, m, g, g_new):
    """Advance (q, p) by ``m`` Verlet steps of size ``h``; returns False on blow-up.

    ``g`` must hold grad V(q) on entry and holds grad V at the final q on exit.
    """
    d = q.shape[0]
    half_h2 = 0.5 * h * h
    half_h = 0.5 * h
    for _ in range(m):
        for i in range(d):
            q[i] = q[i] + minv[i] * (h * p[i] - half_h2 * g[i])
        grad_potential(kind, params, q, g_new)
        for i in range(d):
            p[i] = p[i] - half_h * (g[i] + g_new[i])
            g[i] = g_new[i]
    for i in range(d):
        if not (math.isfinite(q[i]) and math.isfinite(p[i])):
            return False
    return True


@njit(cache=True, nogil=True)
def verlet_propagate(kind, params, minv, y, h, m):
    d = y.shape[0] // 2
    q = y[:d].copy()
    p = y[d:].copy()
    g = np.empty(d)
    g_new = np.empty(d)
    grad_potential(kind, params, q, g)
    ok = _verlet_inplace(kind, params, minv, q, p, h, m, g, g_new)
    out = np.empty(2 * d)
    out[:d] = q
    out[d:] = p
    return out, ok


@njit(cache=True, nogil=True)
def verlet_propagate_many(kind, params, minv, ys, h, m, out, ok):
    """Propagate each row of ``ys`` independently into ``out``; flags in ``ok``."""
    d = ys.shape[1] // 2
    q = np.empty(d)
    p = np.empty(d)
    g = np.empty(d)
    g_new = np.empty(d)
    for r in range(ys.shape[0]):
        for i in range(d):
            q[i] = ys[r, i]
            p[i] = ys[r, d + i]
        grad_potential(kind, params, q, g)
        ok[r] = _verlet_inplace(kind, params, minv, q, p, h, m, g, g_new)
        for i in range(d):
            out[r, i] = q[i]
            out[r, d + i] = p[i]


@njit(cache=True, nogil=True)
def verlet_trajectory(kind, params, minv, y0, h, steps_per_sample, n_samples):
    """Sequential run sampled every ``steps_per_sample`` steps (row 0 is ``y0``).

    Returns the samples and the index of the first non-finite sample (-1 if none).
    """
    d = y0.shape[0] // 2
    out = np.empty((n_samples + 1, 2 * d))
    out[0] = y0
    q = y0[:d].copy()
    p = y0[d:].copy()
    g = np.empty(d)
    g_new = np.empty(d)
    grad_potential(kind, params, q, g)
    for s in range(n_samples):
        ok = _verlet_inplace(kind, params, minv, q, p, h, steps_per_sample, g, g_new)
        out[s + 1, :d] = q
        out[s + 1, d:] = p
        if not ok:
            return out, s + 1
    return out, -1


@njit(cache=True, nogil=True)
def energies(kind, params, minv, ys, out):
    """H of every row of ``ys``."""
    d = ys.shape[1] // 2
    for r in range(ys.shape[0]):
        kin = 0.0
        for i in range(d):
            kin += minv[i] * ys[r, d + i] * ys[r, d + i]
        out[r] = 0.5 * kin + potential(kind, params, ys[r, :d])


@njit(cache=True, nogil=True)
def first_nonfinite_step(kind, params, minv, y, h, m):
    """Index (1-based) of the first step whose state is non-finite, -1 if none.

    Only used after a propagation has already been flagged, so the extra
    per-step test stays out of the hot loop.
    """
    d = y.shape[0] // 2
    q = y[:d].copy()
    p = y[d:].copy()
    g = np.empty(d)
    g_new = np.empty(d)
    grad_potential(kind, params, q, g)
    for s in range(m):
        if not _verlet_inplace(kind, params, minv, q, p, h, 1, g, g_new):
            return s + 1
    return -1
