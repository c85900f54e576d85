"""Nested improper tail integrals of a potential.

Two quadrature strategies are used for ``int_t^inf f``:

* Oscillatory integrands (an :class:`~kglab.potential.OscillationHint` is
  available) are integrated in the phase variable.  The tail is cut into
  full carrier periods; the period integrals ``c(nu)`` of the phase form are
  smooth in ``nu``, so after a few directly summed periods the remaining
  series is replaced by ``int c(nu) dnu`` plus Euler-Maclaurin corrections.
  That integral is evaluated on geometrically growing panels whose partial
  sums are extrapolated with Wynn's epsilon algorithm.
* Other integrands use adaptive Gauss-Legendre quadrature on panels that
  double in ``1+s``, closed the same way.

:func:`build_tail_table` combines both with a dense piecewise spectral grid
near the origin, where nested integrals are formed by exact cumulative
integration of the inner column.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy.interpolate import CubicSpline, PchipInterpolator

from .errors import DivergenceError
from .potential import (TWO_PI, OscillationHint, PhasedFunction, PotentialSpec,
                        closed_tail, envelope, phase_form)
from .spectral import SpectralGrid, oscillation_breaks

EPS = np.finfo(float).eps

# a panel-sum ratio at or above this means the tail is not summable
DIVERGENCE_RATIO = 2.0 ** -0.02
# fitted power-law decay at or below this exponent is treated as divergent
DIVERGENCE_EXPONENT = 1.02

_X16, _W16 = leggauss(16)
_X20, _W20 = leggauss(20)
_X30, _W30 = leggauss(30)
_X24, _W24 = leggauss(24)
_X32, _W32 = leggauss(32)

# one carrier period [0, 2pi] as two Gauss-Legendre halves
_XP = np.concatenate((np.pi * (_X24 + 1) / 2, np.pi + np.pi * (_X24 + 1) / 2))
_WP = np.concatenate((np.pi * _W24 / 2, np.pi * _W24 / 2))

COLUMNS = ("p1", "p2", "phi2", "psi3", "abs_p2_head", "abs_p2_tail")


# -- time grids ---------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class TimeGrid:
    """Strictly increasing, non-negative sample times."""

    nodes: np.ndarray

    def __post_init__(self):
        t = np.array(self.nodes, dtype=float)
        if t.ndim != 1 or len(t) < 3:
            raise ValueError("a time grid needs at least three nodes")
        if t[0] < 0 or not np.all(np.isfinite(t)):
            raise ValueError("time grid nodes must be finite and non-negative")
        if np.any(np.diff(t) <= 0):
            raise ValueError("time grid nodes must be strictly increasing")
        t.setflags(write=False)
        object.__setattr__(self, "nodes", t)

    @classmethod
    def log_spaced(cls, t_min: float = 0.0, t_max: float = 1e4, points: int = 200):
        """Nodes geometric in ``1+t``."""
        if not t_max > t_min >= 0:
            raise ValueError("need 0 <= t_min < t_max")
        k = np.arange(points) / (points - 1)
        nodes = (1 + t_min) * ((1 + t_max) / (1 + t_min)) ** k - 1.0
        nodes[0], nodes[-1] = t_min, t_max
        return cls(nodes)

    def __len__(self):
        return len(self.nodes)

    @property
    def start(self):
        return float(self.nodes[0])

    @property
    def end(self):
        return float(self.nodes[-1])


# -- oscillatory tails ----------------------------------------------------------


def _jacobian_form(fp: Callable, hint: OscillationHint) -> Callable:
    """Integrand in the phase variable: phase form times ``ds/du``."""
    return lambda nu, x: fp(nu, x) * hint.dsdu(TWO_PI * np.asarray(nu) + x)


def _period_integrals(F, nu):
    """Integral of ``F(nu, .)`` over one period, and of ``|F|``."""
    nu = np.asarray(nu, dtype=float)
    v = F(nu[..., None], _XP)
    return v @ _WP, np.abs(v) @ _WP


def _wynn(partial):
    """Wynn epsilon extrapolation of a sequence of partial sums.

    Returns the highest-order estimate and the spread of the last three even
    column entries as its uncertainty.
    """
    seq = np.asarray(partial, dtype=float)[-14:]
    n = len(seq)
    prev, cur = np.zeros(n + 1), seq.copy()
    est = [seq[-1]]
    with np.errstate(divide="ignore", invalid="ignore"):
        for j in range(1, n):
            d = cur[1:] - cur[:-1]
            nxt = prev[1:len(cur)] + 1.0 / d
            if not np.all(np.isfinite(nxt)):
                break
            prev, cur = cur, nxt
            if j % 2 == 0:
                est.append(cur[-1])
    if len(est) < 3:
        e = est[-1]
        return e, abs(seq[-1] - seq[-2]) if n >= 2 else np.inf
    e = est[-1]
    return e, abs(est[-1] - est[-2]) + abs(est[-1] - est[-3])


class _PanelSeries:
    """Running panel sums of one tail with convergence and divergence tests."""

    def __init__(self, tol):
        self.tol = tol
        self.S = []
        self.floor = []

    def push(self, s, floor):
        self.S.append(s)
        self.floor.append(floor)
        k = len(self.S)
        if k < 3:
            return None
        S = np.asarray(self.S)
        fl = np.asarray(self.floor)
        if np.all(np.abs(S[-3:]) <= fl[-3:]):
            # nothing above rounding noise is left
            return float(S.sum()), float(3 * fl[-3:].max())
        s1, s2 = S[-2], S[-1]
        if s1 != 0.0 and k >= 12 and not abs(s2 / s1) < DIVERGENCE_RATIO \
                and abs(s2) > 16 * fl[-1]:
            if np.all(np.abs(S[-6:]) > 16 * fl[-6:]) and np.all(
                    np.abs(S[-5:] / S[-6:-1]) >= DIVERGENCE_RATIO):
                raise _Diverged(float(S.sum()))
        est, unc = _wynn(np.cumsum(S))
        unc += fl.sum()
        if unc <= 0.25 * self.tol and abs(est - S.sum()) <= 1e6 * max(abs(s2), fl[-1]):
            return float(est), float(unc)
        return None


class _Diverged(Exception):
    def __init__(self, partial):
        self.partial = partial


def _em_sums(F, n0, tol, max_panels=64):
    """``sum_{m>=0} c(n0 + m)`` with ``c(nu) = int_0^{2pi} F(nu, x) dx``.

    Vectorized over the array of (possibly non-integer) starts ``n0``.
    Returns values, error estimates and a convergence flag.
    """
    n0 = np.atleast_1d(np.asarray(n0, dtype=float))
    B = len(n0)
    D = np.maximum(4, np.ceil(80 - n0)).astype(int)
    m = np.arange(D.max())
    c, cabs = _period_integrals(F, n0[:, None] + m[None, :])
    mask = m[None, :] < D[:, None]
    direct = np.where(mask, c, 0.0).sum(axis=1)
    err = 8 * EPS * np.where(mask, cabs, 0.0).sum(axis=1)

    a = n0 + D - 0.5
    st, _ = _period_integrals(F, a[:, None] + np.array([-2.0, -1.0, 1.0, 2.0]))
    cm2, cm1, cp1, cp2 = st.T
    d1 = (-cp2 + 8 * cp1 - 8 * cm1 + cm2) / 12.0
    d3 = (cp2 - 2 * cp1 + 2 * cm1 - cm2) / 2.0
    corr = d1 / 24.0 - 7.0 * d3 / 5760.0
    err += np.abs(7.0 * d3 / 5760.0)

    values = np.full(B, np.nan)
    ok = np.zeros(B, dtype=bool)
    tol_each = np.broadcast_to(np.asarray(tol, dtype=float), (B,))
    series = [_PanelSeries(tol_each[i]) for i in range(B)]
    lo = a.copy()
    active = np.arange(B)
    for k in range(max_panels):
        if len(active) == 0:
            break
        l, h = lo[active], 2 * lo[active]
        nodes = l[:, None] + 0.5 * (_X16[None, :] + 1) * (h - l)[:, None]
        cp, cpa = _period_integrals(F, nodes)
        S = 0.5 * (h - l) * (cp @ _W16)
        floor = 16 * EPS * 0.5 * (h - l) * (cpa @ _W16)
        keep = []
        for j, i in enumerate(active):
            try:
                res = series[i].push(S[j], floor[j])
            except _Diverged as exc:
                values[i] = exc.partial
                continue
            if res is None:
                keep.append(j)
                if k == max_panels - 1:
                    values[i] = np.sum(series[i].S)
            else:
                values[i], e = res
                err[i] += e
                ok[i] = True
        active = active[keep]
        lo[active] = 2 * lo[active]
    return direct + values + corr, err, ok


def _partial_period(F, n, x0, x1):
    """``int_{x0}^{x1} F(n, y) dy`` for arrays of period indices and limits."""
    n, x0, x1 = np.broadcast_arrays(*(np.asarray(v, dtype=float) for v in (n, x0, x1)))
    mid = 0.5 * (x0 + x1)
    out = np.zeros(n.shape)
    for a, b in ((x0, mid), (mid, x1)):
        y = a[..., None] + 0.5 * (_X32 + 1) * (b - a)[..., None]
        out += 0.5 * (b - a) * (F(n[..., None], y) @ _W32)
    return out


def _hinted_tails(f, t, hint: OscillationHint, tol):
    fp = phase_form(f, hint)
    F = _jacobian_form(fp, hint)
    n, x = hint.split(np.atleast_1d(np.asarray(t, dtype=float)))
    head = _partial_period(F, n, x, TWO_PI)
    rest, err, ok = _em_sums(F, n + 1, tol)
    return head + rest, err + 64 * EPS * np.abs(head), ok


# -- non-oscillatory tails --------------------------------------------------------


def _adaptive_gl(f, lo, hi, tol, max_intervals=4000):
    """Adaptive Gauss-Legendre on [lo, hi] comparing 20- and 30-point rules."""
    queue = [(lo, hi)]
    total, err, mag, used = 0.0, 0.0, 0.0, 0
    while queue:
        iv = np.array(queue)
        queue = []
        a, b = iv[:, 0], iv[:, 1]
        r = 0.5 * (b - a)
        m = 0.5 * (a + b)
        v20 = r * (np.asarray(f(m[:, None] + r[:, None] * _X20)) @ _W20)
        f30 = np.asarray(f(m[:, None] + r[:, None] * _X30))
        v30 = r * (f30 @ _W30)
        a30 = r * (np.abs(f30) @ _W30)
        diff = np.abs(v30 - v20)
        used += len(iv)
        share = tol * (b - a) / (hi - lo)
        good = (diff <= share) | (diff <= 1e-14 * np.abs(v30)) | (used > max_intervals)
        total += v30[good].sum()
        err += diff[good].sum()
        mag += a30[good].sum()
        for ai, mi, bi in zip(a[~good], m[~good], b[~good]):
            queue += [(ai, mi), (mi, bi)]
    return total, err, mag


def _plain_tail(f, t, tol, max_panels=90):
    """Tail on panels doubling in ``1+s``, closed by Wynn extrapolation."""
    series = _PanelSeries(tol)
    err = 0.0
    lo = t
    for k in range(max_panels):
        hi = 2 * (1 + lo) - 1
        v, e, mag = _adaptive_gl(f, lo, hi, 1e-3 * tol)
        err += e
        lo = hi
        try:
            res = series.push(v, 16 * EPS * mag + e)
        except _Diverged as exc:
            return exc.partial, np.inf, False
        if res is not None:
            return res[0], err + res[1], True
    return float(np.sum(series.S)), np.inf, False


def tail_integral(f: Callable, t: float, tol: float = 1e-10,
                  hint: Optional[OscillationHint] = None):
    """``int_t^inf f(s) ds`` with an error estimate.

    With a hint, ``f`` should be a :class:`~kglab.potential.PhasedFunction`
    (or a function that does not oscillate with the carrier).  Raises
    :class:`~kglab.errors.DivergenceError` when the tail does not settle.
    """
    if not tol > 0:
        raise ValueError("tol must be positive")
    if hint is None and isinstance(f, PhasedFunction):
        hint = f.hint
    if hint is not None:
        v, e, ok = _hinted_tails(f, t, hint, tol)
        v, e, ok = float(v[0]), float(e[0]), bool(ok[0])
    else:
        v, e, ok = _plain_tail(f, float(t), tol)
    if not ok:
        raise DivergenceError(f"tail integral from t={t} did not converge", partial=v)
    return v, e


def oracle_simpson(f: Callable, a: float, b: float, panels: int) -> float:
    """Composite Simpson rule, evaluated in chunks."""
    if not a < b:
        raise ValueError("need a < b")
    if panels < 2 or panels % 2:
        raise ValueError("panels must be even and positive")
    h = (b - a) / panels
    total = 0.0
    chunk = 1 << 18
    for start in range(0, panels + 1, chunk):
        k = np.arange(start, min(start + chunk, panels + 1))
        w = np.where(k % 2 == 1, 4.0, 2.0)
        w[k == 0] = 1.0
        w[k == panels] = 1.0
        total += np.dot(w, f(a + k * h))
    return total * h / 3.0


# -- nested phase tails and far-field densities --------------------------------------


class PhaseTail:
    """Continued tail ``G(nu, x)`` of an integrand given in phase form.

    ``G(nu, x) = int_x^{2pi} F(nu, y) dy + sum_{m>=1} c(nu + m)``; at
    integer ``nu`` this is the ordinary tail integral from the time with
    phase ``2*pi*nu + x``.
    """

    def __init__(self, fp: Callable, hint: OscillationHint, tol: float):
        self.hint = hint
        self.F = _jacobian_form(fp, hint)
        self.tol = tol

    def start(self, nu):
        return _em_sums(self.F, nu, self.tol)

    def at(self, nu, x):
        nu, x = np.broadcast_arrays(np.asarray(nu, float), np.asarray(x, float))
        g1, err, ok = self.start(nu.ravel() + 1)
        # integrate forward from x so that phases before the start are never sampled
        g = g1 + _partial_period(self.F, nu.ravel(), x.ravel(), TWO_PI)
        return g.reshape(nu.shape), err.reshape(nu.shape), ok.reshape(nu.shape)

    def at_times(self, t):
        n, x = self.hint.split(np.asarray(t, float))
        return self.at(n, x)

    def phased(self, nu, x):
        """Phase form of the tail itself, usable as an inner integrand."""
        return self.at(nu, x)[0]

    def local_grid(self, nu, g0, x_breaks, order=32):
        """Values of ``G`` on a spectral grid over one period for each ``nu``."""
        nb = len(x_breaks) - 1
        B = len(nu)
        breaks = (np.arange(B)[:, None] * TWO_PI + np.asarray(x_breaks)[None, :-1]).ravel()
        breaks = np.concatenate((breaks, [B * TWO_PI]))
        grid = SpectralGrid(breaks, order)
        xloc = grid.nodes - TWO_PI * np.repeat(np.arange(B), nb)[:, None]
        nus = np.repeat(nu, nb)[:, None]
        Fv = self.F(nus, xloc)
        cum = grid.cumulative_head(Fv)
        # restart the running integral at the beginning of every period
        start_idx = np.arange(B) * nb
        seg_int = grid.seg_integrals(Fv)
        offsets = np.concatenate(([0.0], np.cumsum(seg_int)[:-1]))[start_idx]
        G = np.repeat(g0, nb)[:, None] - (cum - np.repeat(offsets, nb)[:, None])
        return grid, xloc, nus, G


class FarDensity:
    """``int_t^inf g(G(s)) ds`` for ``t`` in the far field.

    ``G`` is a :class:`PhaseTail`; ``g`` is an optional pointwise transform
    and ``absolute`` selects ``|g(G)|``.  Period integrals of the continued
    phase form are sampled on a geometric grid in ``nu`` between ``nu_a``
    and ``nu_b``, interpolated as a log-log spline, summed by
    Euler-Maclaurin and closed by a fitted power law beyond ``nu_b``.
    """

    def __init__(self, inner: PhaseTail, nu_a: float, nu_b: float,
                 transform: Optional[Callable] = None, absolute: bool = False,
                 per_decade: int = 24):
        self.inner = inner
        self.hint = inner.hint
        self.transform = transform if transform is not None else (lambda v: v)
        self.absolute = absolute
        nu_a = max(float(nu_a), 30.0)
        nu_b = max(float(nu_b), 100 * nu_a)
        npts = int(np.ceil(per_decade * np.log10(nu_b / nu_a))) + 1
        self.nu = nu_a * (nu_b / nu_a) ** (np.arange(npts) / (npts - 1))
        self.c, c_err, ok = self.period_integrals(self.nu)
        self.ok = bool(np.all(ok))
        self.nu_a, self.nu_b = nu_a, nu_b
        c = self.c
        self.zero = bool(np.all(c == 0.0))
        self.divergent = False
        self.err_rel = 0.0
        if self.zero or not self.ok:
            return
        if np.any(c <= 0):
            raise ValueError("far-field density must be positive")
        lx, ly = np.log(self.nu), np.log(c)
        self._spline = CubicSpline(lx, ly)
        # the same spline on every other sample gauges the interpolation error
        half = np.unique(np.r_[np.arange(0, len(lx), 2), len(lx) - 1])
        coarse = CubicSpline(lx[half], ly[half])
        # power law over the last decade closes the sum beyond nu_b
        sel = self.nu >= self.nu_b / 10
        q = -np.polyfit(lx[sel], ly[sel], 1)[0]
        sel2 = self.nu >= self.nu_b / np.sqrt(10)
        q2 = -np.polyfit(lx[sel2], ly[sel2], 1)[0]
        self.q = q
        if q > DIVERGENCE_EXPONENT:
            self.closure = c[-1] * nu_b / (q - 1)
            self.closure_err = abs(self.closure - c[-1] * nu_b / (q2 - 1)) if q2 > 1 else np.inf
        else:
            # differences of unclosed tails stay meaningful below nu_b
            self.divergent = True
            self.closure, self.closure_err = np.inf, np.inf
        # cumulative integral of the spline from each sample to nu_b
        seg_s, seg_l = [], []
        for a, b in zip(lx[:-1], lx[1:]):
            z = a + 0.5 * (_X16 + 1) * (b - a)
            seg_s.append(0.5 * (b - a) * np.dot(_W16, np.exp(self._spline(z) + z)))
            seg_l.append(0.5 * (b - a) * np.dot(_W16, np.exp(coarse(z) + z)))
        seg_s, seg_l = np.array(seg_s), np.array(seg_l)
        self._cum = np.concatenate((np.cumsum(seg_s[::-1])[::-1], [0.0]))
        self._interp_err = np.concatenate((np.cumsum(np.abs(seg_s - seg_l)[::-1])[::-1], [0.0]))
        self.err_rel = 1e-12 + float(np.max(c_err / c))

    def period_integrals(self, nu):
        nu = np.asarray(nu, dtype=float)
        g0, err, ok = self.inner.start(nu)
        grid, xloc, nus, G = self.inner.local_grid(nu, g0, [0.0, np.pi, TWO_PI])
        vals = self.transform(G) * self.hint.dsdu(TWO_PI * nus + xloc)
        if self.absolute:
            gaps = grid.abs_intervals(vals)
            seg = gaps.sum(axis=1)
        else:
            seg = grid.seg_integrals(vals)
        c = seg.reshape(len(nu), -1).sum(axis=1)
        jac = self.hint.dsdu(TWO_PI * nus + xloc).reshape(len(nu), -1).max(axis=1)
        # an error in G shifts the period integral by at most err * 2pi * max ds/du
        # (the transforms used are at most 2-Lipschitz near zero)
        return c, 2 * np.abs(err) * jac * TWO_PI, ok

    def _density(self, nu):
        return np.exp(self._spline(np.log(nu)))

    def _integral_from(self, a, closed=True):
        """``int_a^inf c(nu) dnu`` for ``nu_a <= a``; returns value and error.

        With ``closed=False`` the integral stops at ``nu_b``.
        """
        a = np.asarray(a, dtype=float)
        lx = np.log(self.nu)
        za = np.log(a)
        idx = np.clip(np.searchsorted(lx, za, side="right"), 1, len(lx) - 1)
        zb = lx[idx]
        z = za[..., None] + 0.5 * (_X16 + 1) * (zb - za)[..., None]
        part = 0.5 * (zb - za) * (np.exp(self._spline(z) + z) @ _W16)
        val = part + self._cum[idx]
        err = self._interp_err[idx - 1]
        if closed:
            val, err = val + self.closure, err + self.closure_err
        return val, err

    def sum_from(self, n, closed=True):
        """``sum_{m>=n} c(m)`` over integers, ``n >= nu_a + 3``."""
        a = np.asarray(n, dtype=float) - 0.5
        I, err = self._integral_from(a, closed)
        h = 1.0
        dens = [self._density(a + k * h) for k in (-2, -1, 1, 2)]
        d1 = (-dens[3] + 8 * dens[2] - 8 * dens[1] + dens[0]) / 12.0
        d3 = (dens[3] - 2 * dens[2] + 2 * dens[1] - dens[0]) / 2.0
        return I + d1 / 24.0 - 7.0 * d3 / 5760.0, err + np.abs(7.0 * d3 / 5760.0)

    def tail(self, t, closed=True):
        """``int_t^inf g(G)`` at times whose phase lies beyond ``nu_a + 3`` periods.

        ``closed=False`` omits the contribution beyond ``nu_b``; differences
        of such values are finite integrals even when the tail diverges.
        """
        t = np.atleast_1d(np.asarray(t, dtype=float))
        if self.zero:
            return np.zeros_like(t), np.zeros_like(t)
        if not self.ok or (self.divergent and closed):
            return np.full_like(t, np.inf), np.full_like(t, np.inf)
        n, x = self.hint.split(t)
        if np.any(n + 1 < self.nu_a + 3):
            raise ValueError("far-field density used before its sampled range")
        g0, _, _ = self.inner.start(n)
        head = np.empty_like(t)
        for i in range(len(t)):
            br = [0.0, x[i], TWO_PI] if 0.0 < x[i] < TWO_PI else [0.0, np.pi, TWO_PI]
            grid, xloc, nus, G = self.inner.local_grid(n[i:i + 1], g0[i:i + 1], br)
            vals = self.transform(G) * self.hint.dsdu(TWO_PI * nus + xloc)
            if self.absolute:
                seg = grid.abs_intervals(vals).sum(axis=1)
            else:
                seg = grid.seg_integrals(vals)
            head[i] = seg[1] if 0.0 < x[i] < TWO_PI else (seg.sum() if x[i] == 0.0 else 0.0)
        rest, err = self.sum_from(n + 1, closed)
        total = head + rest
        return total, err + self.err_rel * np.abs(total)


# -- tail table -------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class TailIntegralTable:
    """Tail columns of a potential sampled on a time grid.

    ``status`` maps each column to ``"ok"``, ``"divergent"`` or
    ``"unavailable"``; columns that are not ``"ok"`` hold NaN.
    ``p1_env`` is the envelope of ``|P1|`` over one carrier period.
    """

    grid: TimeGrid
    columns: dict
    err: dict
    status: dict
    spec: PotentialSpec
    tol: float
    messages: dict = field(default_factory=dict)
    calculus: Optional["TailCalculus"] = None

    def __getattr__(self, name):
        cols = object.__getattribute__(self, "columns")
        if name in cols:
            return cols[name]
        raise AttributeError(name)

    @property
    def t(self):
        return self.grid.nodes

    def available(self, *names) -> bool:
        return all(self.status[n] == "ok" for n in names)

    def value(self, name: str, t):
        """Interpolate a column between nodes (log-log for positive columns)."""
        y = self.columns[name]
        x = np.log1p(self.t)
        t = np.asarray(t, dtype=float)
        if np.all(y > 0):
            return np.exp(PchipInterpolator(x, np.log(y))(np.log1p(t)))
        return PchipInterpolator(x, y)(np.log1p(t))

    def to_csv(self, path):
        names = list(COLUMNS) + ["p1_env"]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t"] + names + ["err_" + n for n in COLUMNS])
            for i, t in enumerate(self.t):
                row = [t] + [self.columns[n][i] for n in names] + [self.err[n][i] for n in COLUMNS]
                w.writerow([_fmt(v) for v in row])


def _fmt(v):
    return repr(float(v))


class TailCalculus:
    """Pointwise tail evaluations of one potential.

    Provides P1 (always closed form), and P2, Phi2 at arbitrary times, plus
    far-field integrals of transforms of P2 and of Phi2 for oscillatory
    potentials.
    """

    def __init__(self, spec: PotentialSpec, tol: float):
        self.spec = spec
        self.tol = tol
        self.hint = spec.hint
        self.p1 = spec.p1_function()
        if self.hint is not None:
            p1p = self.p1.phased
            self.p2_tail = PhaseTail(p1p, self.hint, tol)
            self.phi2_tail = PhaseTail(lambda nu, x: p1p(nu, x) ** 2, self.hint, tol)
        self._dens = {}

    def p2(self, t):
        t = np.atleast_1d(np.asarray(t, dtype=float))
        c = closed_tail(self.spec, 2, t)
        if c is not None:
            return c, 1e-15 * np.abs(c), np.isfinite(c)
        if self.hint is not None:
            return self.p2_tail.at_times(t)
        return _plain_many(self.p1, t, self.tol)

    def phi2(self, t):
        t = np.atleast_1d(np.asarray(t, dtype=float))
        if self.hint is not None:
            return self.phi2_tail.at_times(t)
        return _plain_many(lambda s: self.p1(s) ** 2, t, self.tol)

    def far_density(self, key, nu_a, nu_b):
        """Cached :class:`FarDensity` for ``psi3``, ``abs_p2`` or ``gap``."""
        k = (key, round(nu_a), round(nu_b))
        if k not in self._dens:
            if key == "psi3":
                d = FarDensity(self.phi2_tail, nu_a, nu_b)
            elif key == "abs_p2":
                d = FarDensity(self.p2_tail, nu_a, nu_b, absolute=True)
            elif key == "gap":
                # |1 - eta/a| with eta/a = exp(2 P2)
                d = FarDensity(self.p2_tail, nu_a, nu_b,
                               transform=lambda g: -np.expm1(2.0 * g), absolute=True)
            else:
                raise KeyError(key)
            self._dens[k] = d
        return self._dens[k]


def _plain_many(f, t, tol):
    vals, errs, oks = [], [], []
    for ti in np.atleast_1d(t):
        v, e, ok = _plain_tail(f, float(ti), tol)
        vals.append(v)
        errs.append(e)
        oks.append(ok)
    return np.array(vals), np.array(errs), np.array(oks)


def power_law_closure(t, y):
    """Fit ``y ~ C (1+t)^-r`` on the given samples and integrate it to infinity.

    Returns ``(closure, err, r)``; ``closure`` is ``inf`` when ``r`` does not
    exceed the divergence threshold.
    """
    t, y = np.asarray(t, float), np.asarray(y, float)
    if np.all(y == 0):
        return 0.0, 0.0, np.inf
    if np.any(y <= 0):
        return np.nan, np.inf, np.nan
    lx, ly = np.log1p(t), np.log(y)
    r = -np.polyfit(lx, ly, 1)[0]
    half = lx >= 0.5 * (lx[0] + lx[-1])
    r2 = -np.polyfit(lx[half], ly[half], 1)[0] if half.sum() >= 3 else r
    if not r > DIVERGENCE_EXPONENT:
        return np.inf, np.inf, r
    x1 = 1 + t[-1]
    val = y[-1] * x1 / (r - 1)
    alt = y[-1] * x1 / (r2 - 1) if r2 > 1 else np.inf
    return val, abs(val - alt), r


def _trailing_decay(spec: PotentialSpec):
    """Decay exponent of tabulated samples over their last decade, or None."""
    worst = None
    for c in spec.leaves():
        if c.kind != "tabulated":
            continue
        t, m = c.samples
        sel = (1 + t >= (1 + t[-1]) / 10) & (m != 0)
        if sel.sum() < 5:
            continue
        slope = np.polyfit(np.log1p(t[sel]), np.log(np.abs(m[sel])), 1)[0]
        worst = slope if worst is None else max(worst, slope)
    return worst


def build_tail_table(spec: PotentialSpec, grid: TimeGrid, tol: float = 1e-10,
                     half_period_budget: int = 40000, order: int = 24) -> TailIntegralTable:
    """Tail columns of ``spec`` on ``grid``.

    Columns are computed exactly on a dense spectral grid up to a horizon
    ``H`` (the grid end, or earlier for fast oscillations, limited by
    ``half_period_budget`` carrier half-periods) and pointwise beyond it.
    """
    if not tol > 0:
        raise ValueError("tol must be positive")
    calc = TailCalculus(spec, tol)
    hint = calc.hint
    t = grid.nodes
    G = len(t)
    cols = {n: np.full(G, np.nan) for n in COLUMNS + ("p1_env",)}
    err = {n: np.full(G, np.nan) for n in COLUMNS}
    status = {n: "ok" for n in COLUMNS}
    msgs = {}

    # horizon of the dense region
    H = grid.end
    if hint is not None:
        u_budget = hint.phase(grid.start) + half_period_budget * np.pi
        if hint.phase(grid.end) > u_budget:
            H = float(hint.inverse(TWO_PI * np.floor(u_budget / TWO_PI)))
    near = t <= H
    far = ~near

    breaks = oscillation_breaks(grid.start, H, hint, extra=_tab_knots(spec, grid.start, H))
    sg = SpectralGrid(breaks, order)

    # P1
    p1 = calc.p1
    p1_nodes = sg.evaluate(p1)
    decay = _trailing_decay(spec)
    if decay is not None and decay >= -DIVERGENCE_EXPONENT:
        status["p1"] = "divergent"
        msgs["p1"] = (f"tabulated samples decay like (1+t)^{decay:.3f} over their last decade; "
                      f"the tail of M is not summable")
    elif not np.all(np.isfinite(p1_nodes)):
        status["p1"] = "divergent"
        msgs["p1"] = "the tail of M diverges"
    if status["p1"] == "ok":
        cols["p1"] = np.asarray(p1(t), dtype=float)
        err["p1"] = 4 * EPS * np.abs(cols["p1"])
        cols["p1_env"] = envelope(p1, t, hint, samples=256)
    else:
        _mark_downstream(status, msgs, "p1")

    # P2
    if status["p2"] == "ok":
        v, e, ok = calc.p2(np.array([H]))
        if not ok[0] or not np.isfinite(v[0]):
            status["p2"] = "divergent"
            msgs["p2"] = "the tail of P1 diverges"
            _mark_downstream(status, msgs, "p2")
        else:
            p2_nodes = sg.cumulative_tail(p1_nodes, closure=v[0])
            p2_err_nodes = _cum_err_tail(sg, p1_nodes) + e[0]
            cols["p2"][near] = sg.interpolate(p2_nodes, t[near])
            err["p2"][near] = sg.interpolate(p2_err_nodes, t[near]) + 1e-15 * np.abs(cols["p2"][near])
            if far.any():
                v, e, ok = calc.p2(t[far])
                cols["p2"][far], err["p2"][far] = v, e

    # Phi2
    if status["phi2"] == "ok":
        sq = p1_nodes ** 2
        v, e, ok = calc.phi2(np.array([H]))
        if not ok[0]:
            status["phi2"] = "divergent"
            msgs["phi2"] = "the tail of P1^2 diverges"
            _mark_downstream(status, msgs, "phi2")
        else:
            phi2_nodes = sg.cumulative_tail(sq, closure=v[0])
            phi2_err_nodes = _cum_err_tail(sg, sq) + e[0]
            e_phi2_closure = e[0]
            cols["phi2"][near] = sg.interpolate(phi2_nodes, t[near])
            err["phi2"][near] = sg.interpolate(phi2_err_nodes, t[near])
            if far.any():
                v, e, ok = calc.phi2(t[far])
                cols["phi2"][far], err["phi2"][far] = v, e

    nu_b = None
    if hint is not None:
        nu_H = hint.phase(H) / TWO_PI
        nu_b = 10 * hint.phase(grid.end) / TWO_PI

    # Psi3
    if status["psi3"] == "ok":
        if hint is not None:
            dens = calc.far_density("psi3", nu_H - 4, nu_b)
            close, cerr = dens.tail(np.array([H]))
            divergent = dens.divergent or not np.isfinite(close[0])
        else:
            sel = t >= max(grid.start, (1 + H) / 10 - 1)
            sel &= near
            close, cerr, r = power_law_closure(t[sel], cols["phi2"][sel])
            close, cerr = np.array([close]), np.array([cerr])
            divergent = not np.isfinite(close[0])
        if divergent:
            status["psi3"] = "divergent"
            msgs["psi3"] = "the tail of Phi2 diverges"
        else:
            psi_nodes = sg.cumulative_tail(phi2_nodes, closure=close[0])
            psi_err = (_cum_err_tail(sg, phi2_nodes) + cerr[0]
                       + sg.cumulative_tail(np.abs(phi2_err_nodes - e_phi2_closure)))
            cols["psi3"][near] = sg.interpolate(psi_nodes, t[near])
            err["psi3"][near] = sg.interpolate(psi_err, t[near])
            if far.any():
                v, e = calc.far_density("psi3", nu_H - 4, nu_b).tail(t[far])
                cols["psi3"][far], err["psi3"][far] = v, e

    # |P2| head and tail
    if status["abs_p2_tail"] == "ok" or status["abs_p2_head"] == "ok":
        _, total = sg.abs_head(p2_nodes)
        # | int|a| - int|b| | <= int|a - b|, plus spectral truncation per segment
        head_err = np.cumsum(sg.error_estimate(p2_nodes))
        p2_err_int = sg.cumulative_head(p2_err_nodes)
        if hint is not None:
            dens = calc.far_density("abs_p2", nu_H - 4, nu_b)
            close, cerr = dens.tail(np.array([H]))
            close, cerr = close[0], cerr[0]
            divergent = dens.divergent
        else:
            sel = (t >= max(grid.start, (1 + H) / 10 - 1)) & near
            close, cerr, r = power_law_closure(t[sel], np.abs(cols["p2"][sel]))
            divergent = not np.isfinite(close)
        head_near = sg.abs_head_at(p2_nodes, t[near])
        cols["abs_p2_head"][near] = head_near
        p2_err_head = sg.interpolate(p2_err_int, t[near])
        p2_err_total = float(sg.seg_integrals(p2_err_nodes).sum())
        hn_err = np.interp(t[near], sg.breaks[1:], head_err) + p2_err_head
        err["abs_p2_head"][near] = hn_err
        if divergent:
            status["abs_p2_tail"] = "divergent"
            msgs["abs_p2_tail"] = "the tail of |P2| diverges"
        else:
            cols["abs_p2_tail"][near] = total - head_near + close
            err["abs_p2_tail"][near] = (head_err[-1] - np.interp(t[near], sg.breaks[1:], head_err)
                                        + cerr + (p2_err_total - p2_err_head))
        if far.any():
            dens = calc.far_density("abs_p2", nu_H - 4, nu_b)
            if status["abs_p2_tail"] == "ok":
                v, e = dens.tail(t[far])
                cols["abs_p2_tail"][far], err["abs_p2_tail"][far] = v, e
            # head beyond H from differences of unclosed tails
            uH, eH = dens.tail(np.array([H]), closed=False)
            u, e = dens.tail(t[far], closed=False)
            cols["abs_p2_head"][far] = total + (uH[0] - u)
            err["abs_p2_head"][far] = head_err[-1] + p2_err_total + eH[0] + e

    for n in COLUMNS:
        if status[n] != "ok":
            cols[n][:] = np.nan
            err[n][:] = np.nan
    if status["p1"] != "ok":
        cols["p1_env"][:] = np.nan
    for arr in list(cols.values()) + list(err.values()):
        arr.setflags(write=False)
    return TailIntegralTable(grid, cols, err, status, spec, tol, msgs, calc)


_DOWNSTREAM = {
    "p1": ("p2", "phi2", "psi3", "abs_p2_head", "abs_p2_tail"),
    "p2": ("abs_p2_head", "abs_p2_tail"),
    "phi2": ("psi3",),
}


def _mark_downstream(status, msgs, col):
    for d in _DOWNSTREAM.get(col, ()):
        if status[d] == "ok":
            status[d] = "unavailable"
            msgs[d] = f"depends on {col}, which is {status[col]}"


def _cum_err_tail(sg, vals):
    e = sg.error_estimate(vals)
    after = np.concatenate((np.cumsum(e[::-1])[::-1][1:], [0.0]))
    return (after + e)[:, None] * np.ones((1, sg.order))


def _tab_knots(spec, t0, t1):
    out = []
    for c in spec.leaves():
        if c.kind == "tabulated":
            k = c.samples[0]
            out.append(k[(k > t0) & (k < t1)])
    if len(out) == 0:
        return np.zeros(0)
    k = np.unique(np.concatenate(out))
    if len(k) > 20000:
        raise ValueError("too many tabulated samples for the dense grid")
    return k

