"""Piecewise Gauss-Legendre grids.

A :class:`SpectralGrid` splits an interval into segments and places ``order``
Gauss-Legendre nodes in each.  Functions are stored as ``(nseg, order)``
arrays of node values; on every segment they are represented by their
interpolating polynomial, which is integrated, evaluated and searched for
roots exactly.
"""

from __future__ import annotations

import numpy as np
from numpy.polynomial import legendre as L


class SpectralGrid:
    def __init__(self, breaks, order: int = 24):
        breaks = np.asarray(breaks, dtype=float)
        if breaks.ndim != 1 or len(breaks) < 2 or np.any(np.diff(breaks) <= 0):
            raise ValueError("segment breaks must be strictly increasing")
        self.breaks = breaks
        self.order = p = int(order)
        self.a = breaks[:-1]
        self.h = np.diff(breaks)
        self.nseg = len(self.h)

        x, w = L.leggauss(p)
        self.x, self.w = x, w
        self.nodes = self.a[:, None] + 0.5 * (x[None, :] + 1.0) * self.h[:, None]

        # values -> Legendre coefficients (exact for degree < p)
        vander = L.legvander(x, p - 1)
        self._to_coef = (vander * w[:, None]).T * ((2 * np.arange(p) + 1) / 2.0)[:, None]
        # cumulative integral from -1 to each node, in local units
        anti = L.legint(np.eye(p), lbnd=-1, axis=0)
        self._cum = L.legvander(x, p) @ anti @ self._to_coef
        self._bary = (-1.0) ** np.arange(p) * np.sqrt((1 - x ** 2) * w)

    @property
    def t(self):
        return self.nodes.ravel()

    @property
    def size(self):
        return self.nodes.size

    @property
    def start(self):
        return self.breaks[0]

    @property
    def end(self):
        return self.breaks[-1]

    def evaluate(self, f):
        """Node values of a vectorized callable."""
        return np.asarray(f(self.nodes), dtype=float).reshape(self.nodes.shape)

    # -- integration ---------------------------------------------------------

    def seg_integrals(self, vals):
        return 0.5 * self.h * (vals @ self.w)

    def cumulative_head(self, vals, start_value=0.0):
        """``start_value + int_{start}^{t} f`` at every node."""
        seg = self.seg_integrals(vals)
        before = np.concatenate(([0.0], np.cumsum(seg)[:-1]))
        within = 0.5 * self.h[:, None] * (vals @ self._cum.T)
        return start_value + before[:, None] + within

    def cumulative_tail(self, vals, closure=0.0):
        """``int_t^{end} f + closure`` at every node."""
        seg = self.seg_integrals(vals)
        after = np.concatenate((np.cumsum(seg[::-1])[::-1][1:], [0.0]))
        within = seg[:, None] - 0.5 * self.h[:, None] * (vals @ self._cum.T)
        return closure + after[:, None] + within

    def coefficients(self, vals):
        """Legendre coefficients of each segment's interpolant."""
        return vals @ self._to_coef.T

    def error_estimate(self, vals):
        """Per-segment size of the unresolved spectral tail times segment length."""
        c = np.abs(self.coefficients(vals))
        return (c[:, -1] + c[:, -2]) * self.h

    # -- interpolation ------------------------------------------------------

    def locate(self, t):
        t = np.asarray(t, dtype=float)
        return np.clip(np.searchsorted(self.breaks, t, side="right") - 1, 0, self.nseg - 1)

    def local(self, t, seg):
        return 2.0 * (np.asarray(t, dtype=float) - self.a[seg]) / self.h[seg] - 1.0

    def interpolate(self, vals, t):
        """Barycentric interpolation at arbitrary points of the grid span."""
        t = np.asarray(t, dtype=float)
        if np.any(t < self.start - 1e-12 * (1 + abs(self.start))) or np.any(
                t > self.end + 1e-12 * (1 + abs(self.end))):
            raise ValueError("interpolation point outside the grid span")
        seg = self.locate(t)
        return self.poly_eval(vals, t, seg)

    def poly_eval(self, vals, t, seg):
        """Evaluate segment ``seg``'s interpolant at ``t`` (may lie slightly outside)."""
        t = np.asarray(t, dtype=float)
        shape = t.shape
        t = t.ravel()
        seg = np.broadcast_to(seg, shape).ravel()
        xl = self.local(t, seg)
        f = vals[seg]
        d = xl[:, None] - self.x[None, :]
        hit = d == 0.0
        d[hit] = 1.0
        q = self._bary[None, :] / d
        out = (q * f).sum(axis=1) / q.sum(axis=1)
        rows = hit.any(axis=1)
        if rows.any():
            out[rows] = f[rows][hit[rows]]
        return out.reshape(shape)

    # -- absolute values ------------------------------------------------------

    def _abs_parts(self, vals):
        """Legendre antiderivatives, sample abscissae and in-gap roots (NaN if none)."""
        coef = self.coefficients(vals)
        anti = L.legint(coef, lbnd=-1, axis=1)
        left = L.legval(-1.0, coef.T)
        right = L.legval(1.0, coef.T)
        samp = np.concatenate((left[:, None], vals, right[:, None]), axis=1)
        xs = np.concatenate(([-1.0], self.x, [1.0]))
        roots = np.full((self.nseg, self.order + 1), np.nan)
        fa, fb = samp[:, :-1], samp[:, 1:]
        seg_idx, gap_idx = np.nonzero(fa * fb < 0)
        if len(seg_idx):
            c = coef[seg_idx]
            lo = xs[gap_idx].copy()
            hi = xs[gap_idx + 1].copy()
            flo = fa[seg_idx, gap_idx]
            for _ in range(60):
                mid = 0.5 * (lo + hi)
                fm = _legval_rows(c, mid[:, None])[:, 0]
                same = np.sign(fm) == np.sign(flo)
                lo = np.where(same, mid, lo)
                hi = np.where(same, hi, mid)
            roots[seg_idx, gap_idx] = 0.5 * (lo + hi)
        return anti, xs, roots

    @staticmethod
    def _abs_piece(anti_rows, x0, x1, r):
        """``int_{x0}^{x1} |p|`` in local units given at most one root ``r`` (NaN if none)."""
        F0 = _legval_rows(anti_rows, x0[:, None])[:, 0]
        F1 = _legval_rows(anti_rows, x1[:, None])[:, 0]
        out = np.abs(F1 - F0)
        inside = np.isfinite(r) & (r > x0) & (r < x1)
        if inside.any():
            Fr = _legval_rows(anti_rows[inside], r[inside][:, None])[:, 0]
            out[inside] = np.abs(Fr - F0[inside]) + np.abs(F1[inside] - Fr)
        return out

    def abs_intervals(self, vals):
        """Integral of ``|f|`` over the gaps between consecutive sample points.

        Sample points of a segment are its left end, its nodes and its right
        end, so the result has shape ``(nseg, order + 1)``.  Roots of the
        interpolant inside a gap are located by bisection and the
        antiderivative is evaluated exactly on either side.
        """
        anti, xs, roots = self._abs_parts(vals)
        m = self.order + 1
        rows = np.repeat(anti, m, axis=0)
        x0 = np.tile(xs[:-1], self.nseg)
        x1 = np.tile(xs[1:], self.nseg)
        res = self._abs_piece(rows, x0, x1, roots.ravel()).reshape(self.nseg, m)
        return 0.5 * self.h[:, None] * res

    def abs_head(self, vals, start_value=0.0):
        """``start_value + int_start^t |f|`` at nodes, plus the total."""
        gaps = self.abs_intervals(vals)
        seg = gaps.sum(axis=1)
        before = np.concatenate(([0.0], np.cumsum(seg)[:-1]))
        within = np.cumsum(gaps[:, :-1], axis=1)
        return start_value + before[:, None] + within, start_value + seg.sum()

    def abs_head_at(self, vals, t):
        """``int_start^t |f|`` at arbitrary points of the span, exact for the interpolant."""
        t = np.asarray(t, dtype=float)
        shape = t.shape
        t = t.ravel()
        anti, xs, roots = self._abs_parts(vals)
        gaps = self.abs_intervals(vals)
        before = np.concatenate(([0.0], np.cumsum(gaps.sum(axis=1))[:-1]))
        cum_gaps = np.concatenate((np.zeros((self.nseg, 1)), np.cumsum(gaps, axis=1)), axis=1)
        seg = self.locate(t)
        x = np.clip(self.local(t, seg), -1.0, 1.0)
        g = np.clip(np.searchsorted(xs, x, side="right") - 1, 0, self.order)
        part = self._abs_piece(anti[seg], xs[g], x, roots[seg, g])
        out = before[seg] + cum_gaps[seg, g] + 0.5 * self.h[seg] * part
        return out.reshape(shape)

    def abs_tail(self, vals, closure=0.0):
        """``int_t^end |f| + closure`` at nodes."""
        head, total = self.abs_head(vals)
        return closure + (total - head)



def _legval_rows(coef, x):
    """Evaluate Legendre series row-wise: ``coef`` (m, k), ``x`` (m, q)."""
    x = np.asarray(x, dtype=float)
    k = coef.shape[1]
    b1 = np.zeros_like(x)
    b2 = np.zeros_like(x)
    for j in range(k - 1, 0, -1):
        # Clenshaw recurrence for Legendre polynomials
        alpha = (2 * j + 1) / (j + 1)
        beta_next = -(j + 1) / (j + 2)
        b0 = coef[:, j:j + 1] + alpha * x * b1 + beta_next * b2
        b2, b1 = b1, b0
    return coef[:, 0:1] + x * b1 - 0.5 * b2


def log_breaks(t0, t1, ratio=1.1):
    """Breaks geometric in ``1+t`` with the given ratio."""
    n = max(1, int(np.ceil(np.log((1 + t1) / (1 + t0)) / np.log(ratio))))
    return (1 + t0) * ((1 + t1) / (1 + t0)) ** (np.arange(n + 1) / n) - 1.0


def oscillation_breaks(t0, t1, hint=None, ratio=1.1, extra=()):
    """Breaks at half-periods of the carrier merged with log-spaced breaks."""
    b = log_breaks(t0, t1, ratio)
    parts = [b]
    if hint is not None:
        u0, u1 = hint.phase(t0), hint.phase(t1)
        k = np.arange(np.floor(u0 / np.pi) + 1, np.ceil(u1 / np.pi))
        parts.append(hint.inverse(np.pi * k))
    if len(extra):
        parts.append(np.asarray(extra, dtype=float))
    b = np.unique(np.concatenate(parts))
    b = b[(b >= t0) & (b <= t1)]
    b = np.unique(np.concatenate(([t0], b, [t1])))
    # drop slivers left by merging
    keep = np.concatenate(([True], np.diff(b) > 1e-9 * (1 + b[1:])))
    b = b[keep]
    b[-1] = t1
    return b
