"""Compiled integrators for ensembles of Fourier modes.

Every mode solves ``u'' + (xi**2 + M(t)) u = 0`` with complex ``u``, stored
as four real components ``(re u, im u, re u', im u')``.  All modes of an
ensemble advance with a common step, so ``M`` is evaluated once per stage.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit
from scipy.integrate._ivp import dop853_coefficients as _dop

_NS = _dop.N_STAGES
A = np.ascontiguousarray(_dop.A[:_NS, :_NS])
B = np.ascontiguousarray(_dop.B)
C = np.ascontiguousarray(_dop.C[:_NS])
E3 = np.ascontiguousarray(_dop.E3)
E5 = np.ascontiguousarray(_dop.E5)

OK, STIFF, TOO_MANY_STEPS = 0, 1, 2

_SAFETY = 0.9
_MIN_FACTOR = 0.2
_MAX_FACTOR = 10.0


@njit(cache=True)
def m_value(t, codes, params, tab_x, tab_c, ptr):
    """M(t) from the compiled layout of a potential."""
    total = 0.0
    for i in range(codes.shape[0]):
        c = codes[i]
        if c == 1:
            mu, nu = params[i, 0], params[i, 1]
            total += mu * mu * (1.0 + t) ** (-2.0 * nu)
        elif c == 2:
            beta, kappa = params[i, 0], params[i, 1]
            x = 1.0 + t
            ph = x ** kappa
            total += (kappa * x ** (-2.0 * beta) * math.cos(ph)
                      + (1.0 - 2.0 * beta - kappa) * x ** (-2.0 * beta - kappa) * math.sin(ph))
        elif c == 3:
            lo, hi = ptr[i, 0], ptr[i, 1]
            if t < tab_x[lo] or t > tab_x[hi - 1]:
                continue
            j = np.searchsorted(tab_x[lo:hi], t, side="right") - 1
            if j > hi - lo - 2:
                j = hi - lo - 2
            d = t - tab_x[lo + j]
            k = lo + j
            total += ((tab_c[0, k] * d + tab_c[1, k]) * d + tab_c[2, k]) * d + tab_c[3, k]
    return total


@njit(cache=True)
def carrier_rate(t, codes, params):
    """Largest local angular frequency ``kappa (1+t)^(kappa-1)`` among oscillatory parts."""
    r = 0.0
    for i in range(codes.shape[0]):
        if codes[i] == 2:
            kappa = params[i, 1]
            v = kappa * (1.0 + t) ** (kappa - 1.0)
            if v > r:
                r = v
    return r


@njit(cache=True)
def _rhs(y, m, xi2, out):
    """Right-hand side on flat states ``[re u, im u, re u', im u']`` per mode."""
    for i in range(xi2.shape[0]):
        k = xi2[i] + m
        b = 4 * i
        out[b] = y[b + 2]
        out[b + 1] = y[b + 3]
        out[b + 2] = -k * y[b]
        out[b + 3] = -k * y[b + 1]


@njit(cache=True)
def _combine(y, K, coef, count, h, out):
    """``out = y + h * sum_{j < count} coef[j] K[j]``."""
    m = y.shape[0]
    for q in range(m):
        out[q] = 0.0
    for j in range(count):
        a = coef[j]
        if a == 0.0:
            continue
        for q in range(m):
            out[q] += a * K[j, q]
    for q in range(m):
        out[q] = y[q] + h * out[q]


@njit(cache=True)
def _energy_sq(v, b, w):
    return w * (v[b] * v[b] + v[b + 1] * v[b + 1]) + v[b + 2] * v[b + 2] + v[b + 3] * v[b + 3]


@njit(cache=True)
def dop853_ensemble(xi, y0, t_out, tol, cap_fraction, max_steps, codes, params,
                    tab_x, tab_c, ptr, record):
    """Integrate all modes through the times ``t_out`` (monotone, either direction).

    The local error of each mode, measured in the norm
    ``sqrt((xi^2+1)|du|^2 + |du'|^2)`` relative to the same norm of the
    state, is kept below ``tol`` per unit step.  Steps are capped at
    ``cap_fraction * 2 pi / max(xi, carrier rate)``.

    Returns ``(states at t_out, status, steps, step boundaries)``; the last
    array holds every accepted step boundary when ``record`` is set.
    """
    n = xi.shape[0]
    nt = t_out.shape[0]
    ys = np.empty((nt, n, 4))
    xi2 = xi * xi
    w = xi2 + 1.0
    xmax = 0.0
    for i in range(n):
        if xi[i] > xmax:
            xmax = xi[i]
    direction = 1.0 if t_out[nt - 1] >= t_out[0] else -1.0
    y = y0.copy().reshape(4 * n)
    ytmp = np.empty_like(y)
    ynew = np.empty_like(y)
    zero = np.zeros_like(y)
    err5 = np.empty_like(y)
    err3 = np.empty_like(y)
    K = np.empty((_NS + 1, 4 * n))
    t = t_out[0]
    ys[0] = y0
    hist = np.empty(1024 if record else 1)
    nh = 0
    if record:
        hist[0] = t
        nh = 1
    _rhs(y, m_value(t, codes, params, tab_x, tab_c, ptr), xi2, K[0])
    rate = max(xmax, carrier_rate(t, codes, params))
    h = cap_fraction * 2.0 * math.pi / rate if rate > 0 else abs(t_out[nt - 1] - t)
    steps = 0
    k_out = 1
    while k_out < nt:
        target = t_out[k_out]
        rate = max(xmax, carrier_rate(t, codes, params))
        cap = cap_fraction * 2.0 * math.pi / rate if rate > 0 else np.inf
        hh = min(h, cap)
        remaining = (target - t) * direction
        hit = False
        if hh >= remaining * (1.0 - 1e-12):
            hh = remaining
            hit = True
        if hh <= 1e-14 * (1.0 + abs(t)):
            if hit:
                ys[k_out] = y.reshape(n, 4)
                k_out += 1
                continue
            return ys[:k_out], STIFF, steps, hist[:nh]
        hs = direction * hh
        for s in range(1, _NS):
            _combine(y, K, A[s], s, hs, ytmp)
            _rhs(ytmp, m_value(t + C[s] * hs, codes, params, tab_x, tab_c, ptr), xi2, K[s])
        _combine(y, K, B, _NS, hs, ynew)
        t_new = target if hit else t + hs
        _rhs(ynew, m_value(t_new, codes, params, tab_x, tab_c, ptr), xi2, K[_NS])

        _combine(zero, K, E5, _NS + 1, 1.0, err5)
        _combine(zero, K, E3, _NS + 1, 1.0, err3)
        worst = 0.0
        for i in range(n):
            b = 4 * i
            scale = max(_energy_sq(y, b, w[i]), _energy_sq(ynew, b, w[i]))
            if scale == 0.0:
                continue
            n5 = _energy_sq(err5, b, w[i]) / scale
            n3 = _energy_sq(err3, b, w[i]) / scale
            denom = n5 + 0.01 * n3
            err = hh * n5 / math.sqrt(denom) if denom > 0 else 0.0
            if err > worst:
                worst = err
        ratio = worst / (tol * hh)
        if ratio <= 1.0:
            t = t_new
            for q in range(4 * n):
                y[q] = ynew[q]
                K[0, q] = K[_NS, q]
            steps += 1
            if record:
                if nh == hist.shape[0]:
                    grown = np.empty(2 * nh)
                    grown[:nh] = hist
                    hist = grown
                hist[nh] = t
                nh += 1
            if hit:
                ys[k_out] = y.reshape(n, 4)
                k_out += 1
            factor = _MAX_FACTOR if ratio == 0.0 else min(_MAX_FACTOR, _SAFETY * ratio ** -0.125)
            if not hit:
                h = hh * factor
            elif factor < 1.0:
                h = min(h, hh * factor)
            if steps >= max_steps:
                return ys[:k_out], TOO_MANY_STEPS, steps, hist[:nh]
        else:
            h = hh * max(_MIN_FACTOR, _SAFETY * ratio ** -0.125)
    return ys, OK, steps, hist[:nh]


@njit(cache=True)
def rk4_replay(xi, y0, boundaries, sample_idx, substeps, codes, params, tab_x, tab_c, ptr):
    """Classical RK4 over recorded step boundaries, each split into ``substeps``.

    Returns the states at ``boundaries[sample_idx]``.
    """
    n = xi.shape[0]
    m = 4 * n
    xi2 = xi * xi
    y = y0.copy().reshape(m)
    k1 = np.empty_like(y)
    k2 = np.empty_like(y)
    k3 = np.empty_like(y)
    k4 = np.empty_like(y)
    tmp = np.empty_like(y)
    out = np.empty((sample_idx.shape[0], n, 4))
    q = 0
    if sample_idx.shape[0] > 0 and sample_idx[0] == 0:
        out[0] = y0
        q = 1
    for b in range(1, boundaries.shape[0]):
        t0 = boundaries[b - 1]
        h = (boundaries[b] - t0) / substeps
        for s in range(substeps):
            t = t0 + s * h
            _rhs(y, m_value(t, codes, params, tab_x, tab_c, ptr), xi2, k1)
            m_mid = m_value(t + 0.5 * h, codes, params, tab_x, tab_c, ptr)
            for p in range(m):
                tmp[p] = y[p] + 0.5 * h * k1[p]
            _rhs(tmp, m_mid, xi2, k2)
            for p in range(m):
                tmp[p] = y[p] + 0.5 * h * k2[p]
            _rhs(tmp, m_mid, xi2, k3)
            for p in range(m):
                tmp[p] = y[p] + h * k3[p]
            _rhs(tmp, m_value(t + h, codes, params, tab_x, tab_c, ptr), xi2, k4)
            for p in range(m):
                y[p] += h / 6.0 * (k1[p] + 2.0 * k2[p] + 2.0 * k3[p] + k4[p])
        while q < sample_idx.shape[0] and sample_idx[q] == b:
            out[q] = y.reshape(n, 4)
            q += 1
    return out
