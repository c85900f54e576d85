"""Riccati-series gauge of a potential.

With ``q_1 = M``, ``q_k = sum_j Q_j Q_{k-j}`` and ``Q_k = -int_t^inf q_k`` the
sum ``S = sum_k Q_k`` satisfies ``S' = M + S**2``, so ``b = -S`` solves
``b' + b**2 + M = 0``.  The series is built on a dense piecewise spectral
grid ``[T, t_g]``.  Beyond ``t_g`` only the first two terms matter
(``b = P1 + Phi2``) and they are evaluated pointwise.  For potentials
without a carrier hint the dense grid runs to the end of the time grid,
which is then the end of the gauge's domain.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import NamedTuple, Optional

import numpy as np

from .errors import DomainError, NoValidStartTime, TruncationFailure
from .potential import TWO_PI, PotentialSpec
from .spectral import SpectralGrid, oscillation_breaks
from .tails import (EPS, TailCalculus, TailIntegralTable, TimeGrid, _cum_err_tail,
                    _tab_knots, power_law_closure)

SIGMA = -1
PHI_MAX = 1.0 / 6 ** 4
P2_MAX = 1.0
CSV_FIELDS = ("t", "b", "b_prime", "residual", "Q2", "phi")

# fraction of a segment (or local carrier period) used as finite-difference step
_FD_FRACTION = 1e-3
_CHUNK = 50_000


def select_start_time(table: TailIntegralTable) -> float:
    """Smallest grid node from which ``|P2| <= 1`` and ``Psi3 <= 1/1296`` hold onwards."""
    if not table.available("p2", "psi3"):
        bad = [n for n in ("p2", "psi3") if table.status[n] != "ok"]
        why = "; ".join(f"{n} {table.status[n]}: {table.messages.get(n, '')}" for n in bad)
        raise NoValidStartTime(f"start-time columns not available ({why})")
    good = (np.abs(table.p2) <= P2_MAX) & (table.psi3 <= PHI_MAX)
    if not good[-1]:
        raise NoValidStartTime("no grid node satisfies |P2| <= 1 and phi <= 1/1296")
    bad = np.flatnonzero(~good)
    first = 0 if len(bad) == 0 else bad[-1] + 1
    return float(table.t[first])


@dataclass(eq=False)
class GaugeSeries:
    """Truncated Riccati series and the gauge it defines.

    Columns are sampled at ``grid`` nodes (all at or after ``T``).  ``Q_tables``
    rows for ``k >= 3`` are NaN beyond ``t_g``, where those terms are below
    tolerance and are not tracked.
    """

    grid: TimeGrid
    K: int
    q_tables: np.ndarray
    Q_tables: np.ndarray
    Q_err: np.ndarray
    phi: np.ndarray
    b: np.ndarray
    b_prime: np.ndarray
    residual: np.ndarray
    sigma: int
    T: float
    t_g: float
    horizon: float
    tol: float
    b0: float
    b1: float
    b2: float
    beta: float
    gamma: float
    residual_sup: float
    spec: PotentialSpec = field(repr=False)
    messages: list = field(default_factory=list)
    _dense: Optional["_Dense"] = field(default=None, repr=False)
    _far: Optional["_Far"] = field(default=None, repr=False)

    @property
    def t(self):
        return self.grid.nodes

    @property
    def majorant(self):
        """Geometric majorant ``4^(k-1) |Q_2(T)| phi(T)^((k-2)/2)`` for ``k = 1..K``."""
        k = np.arange(1, self.K + 1)
        q2 = abs(self.Q_tables[1, 0])
        with np.errstate(invalid="ignore", over="ignore"):
            m = 4.0 ** (k - 1) * q2 * self.phi[0] ** ((k - 2) / 2.0)
        m[0] = np.nan
        return m

    def to_csv(self, path, per_k: bool = False):
        names = list(CSV_FIELDS)
        if per_k:
            names += [f"Q{k}" for k in range(1, self.K + 1)]
        cols = [self.t, self.b, self.b_prime, self.residual, self.Q_tables[1], self.phi]
        if per_k:
            cols += list(self.Q_tables)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(names)
            for row in zip(*cols):
                w.writerow([repr(float(v)) for v in row])


class _Dense:
    """Series columns on the spectral grid ``[T, t_g]``."""

    def __init__(self, sg, Q, Q_err, b, I, B, phi, p2):
        self.sg = sg
        self.Q = Q            # list of (nseg, order) arrays, k = 1..K
        self.Q_err = Q_err
        self.b = b
        self.I = I            # int_T^t b
        self.B = B            # int_t^inf b (may be inf)
        self.phi = phi
        self.p2 = p2          # P2 at nodes, or None when it diverges
        self.theta = sg.cumulative_head(np.exp(-2.0 * I))
        # values exactly at t_g (the last node lies inside the last segment)
        self.I_end = float(sg.seg_integrals(b).sum())
        self.theta_end = float(sg.seg_integrals(np.exp(-2.0 * I)).sum())
        self._gap = None

    def gap(self):
        if self._gap is None:
            g = -np.expm1(2.0 * self.p2)
            head, total = self.sg.abs_head(g)
            self._gap = (g, total)
        return self._gap


class _Far:
    """Pointwise evaluation beyond ``t_g`` for potentials with a carrier hint."""

    def __init__(self, calc: TailCalculus, t_g: float, nu_b: float):
        self.calc = calc
        self.hint = calc.hint
        self.t_g = t_g
        nu_a = self.hint.phase(t_g) / TWO_PI - 4
        self.psi = calc.far_density("psi3", nu_a, nu_b)
        self.gap = calc.far_density("gap", nu_a, nu_b)
        self.U_g = self.psi.tail(np.array([t_g]), closed=False)[0][0]

    def b(self, t):
        phi2, _, _ = self.calc.phi2(t)
        return self.calc.p1(t) + phi2

    def p2(self, t):
        return self.calc.p2(t)[0]

    def head_shift(self, t, oscillating=True):
        """``int_{t_g}^t b`` from P2 and unclosed Phi2 tails.

        ``oscillating=False`` drops ``-P2(t)``, whose own integral over any
        stretch is of the size of ``P2`` divided by the carrier frequency.
        """
        p2g = self.p2(np.array([self.t_g]))[0]
        u, _ = self.psi.tail(t, closed=False)
        shift = p2g + (self.U_g - u)
        return shift - self.p2(t) if oscillating else shift


def _sum_convolution(Q, k):
    """``sum_{j=1}^{k-1} Q_j Q_{k-j}`` using symmetry."""
    s = np.zeros_like(Q[0])
    for j in range(1, k // 2 + 1):
        term = Q[j - 1] * Q[k - j - 1]
        s += term if 2 * j == k else 2.0 * term
    return s


def _dense_horizon(table, T, tol, hint, budget):
    """First table node past which the two-term far form is accurate to ``tol``."""
    t = table.t
    cap = np.inf
    if hint is not None:
        cap = float(hint.inverse(hint.phase(T) + budget * np.pi))
    cand = (t > T)
    if hint is not None:
        cand &= hint.phase(t) / TWO_PI >= 40
    phi2, psi3 = table.phi2, table.psi3
    with np.errstate(invalid="ignore", divide="ignore"):
        r = 4.0 * np.sqrt(psi3)
        rest = np.where(r < 1, 16.0 * phi2 * np.sqrt(psi3) / (1.0 - r), np.inf)
        E = phi2 + rest
        resid = 2.0 * table.p1_env * E + E ** 2
    ok = cand & (rest <= tol) & (resid <= tol) & (t <= cap)
    msg = None
    if ok.any():
        return float(t[np.argmax(ok)]), msg
    below = cand & (t <= cap)
    if not below.any():
        return float(t[np.argmax(cand)]), "dense horizon forced past the half-period budget"
    tg = float(t[below][-1])
    msg = (f"dense horizon capped at t = {tg:.6g} by the half-period budget; "
           f"two-term far form error not below tolerance there")
    return tg, msg


def build_gauge(spec: PotentialSpec, table: TailIntegralTable, grid: Optional[TimeGrid] = None,
                tol: float = 1e-10, K_max: int = 40, select_start: bool = True,
                beta: float = 0.0, gamma: float = 0.0, half_period_budget: int = 40000,
                order: int = 24) -> GaugeSeries:
    """Build ``b = -sum_{k<=K} Q_k`` from ``T`` onwards.

    ``K`` is the first order at which the majorant ``4^(K-1)|Q_2(T)| phi(T)^((K-2)/2)``
    falls below ``tol``; when ``phi(T)`` is infinite or too large for the
    majorant to contract, the first order whose ``sup |Q_K|`` falls below
    ``tol``.  ``beta`` and ``gamma`` weight the reported constants ``b2``, ``b1``.
    """
    if table.status["p1"] != "ok":
        raise DomainError(f"P1 column is {table.status['p1']}: {table.messages.get('p1', '')}")
    if K_max < 2:
        raise ValueError("K_max must be at least 2")
    grid = table.grid if grid is None else grid
    calc = table.calculus if table.calculus is not None else TailCalculus(spec, table.tol)
    hint = spec.hint
    T = select_start_time(table) if select_start else float(table.t[0])
    messages = []

    if hint is not None:
        t_g, msg = _dense_horizon(table, T, tol, hint, half_period_budget)
        if msg:
            messages.append(msg)
    else:
        t_g = float(grid.end)
    sg = SpectralGrid(oscillation_breaks(T, t_g, hint, extra=_tab_knots(spec, T, t_g)), order)
    nodes = sg.nodes
    tail_sel = nodes >= (1 + t_g) / 10 - 1

    p1 = calc.p1
    P1 = sg.evaluate(p1)
    M = sg.evaluate(spec.evaluator)
    phi2_g, phi2_g_err, _ = calc.phi2(np.array([t_g]))
    p2_g, p2_g_err, p2_ok = calc.p2(np.array([t_g]))
    p2_g = p2_g[0] if p2_ok[0] else np.inf

    Q = [-P1, None]
    Q_err = [4 * EPS * np.abs(P1), None]
    sq = P1 ** 2
    Q[1] = -sg.cumulative_tail(sq, closure=phi2_g[0])
    Q_err[1] = _cum_err_tail(sg, sq) + phi2_g_err[0]

    # phi = -int_t^inf Q_2
    if hint is not None:
        far = _Far(calc, t_g, 10 * hint.phase(grid.end) / TWO_PI)
        psi_g = far.psi.tail(np.array([t_g]))[0][0]
    else:
        far = None
        psi_g = _closure_at(nodes[tail_sel], -Q[1][tail_sel], t_g)[0]
    phi_nodes = sg.cumulative_tail(-Q[1], closure=psi_g)
    phi_T = phi_nodes[0, 0] if np.isfinite(psi_g) else np.inf
    q2_T = abs(Q[1][0, 0])
    contracting = np.isfinite(phi_T) and 4 * np.sqrt(phi_T) < 1

    def done(k):
        if contracting:
            return 4.0 ** (k - 1) * q2_T * phi_T ** ((k - 2) / 2.0) < tol
        return np.max(np.abs(Q[k - 1])) < tol

    K = 2
    while not done(K):
        if K >= K_max:
            partial = _finish(spec, calc, grid, sg, Q, Q_err, M, P1, p2_g, phi_nodes, psi_g,
                              far, T, t_g, tol, beta, gamma, messages, tail_sel, hint)
            raise TruncationFailure(f"series not below tolerance {tol:g} at K_max = {K_max}",
                                    partial)
        K += 1
        q = _sum_convolution(Q, K)
        q_err = np.zeros_like(q)
        for j in range(1, K):
            q_err += np.abs(Q[j - 1]) * Q_err[K - j - 1]
        if hint is not None:
            # int_{t_g}^inf 2 Q_1 Q_{K-1} by parts, the smooth products bounded by a power law
            end = lambda v: float(sg.poly_eval(v, t_g, sg.nseg - 1))
            osc = -2.0 * p2_g * end(Q[K - 2]) if np.isfinite(p2_g) else 0.0
            smooth = abs(end(q) - 2.0 * end(Q[0]) * end(Q[K - 2])) * (1 + t_g)
            closure, c_err = osc, abs(osc) + smooth
        else:
            closure, c_err = _plain_closure(nodes[tail_sel], q[tail_sel], t_g)
        Q.append(-sg.cumulative_tail(q, closure=closure))
        Q_err.append(sg.cumulative_tail(q_err) + _cum_err_tail(sg, q) + c_err)

    return _finish(spec, calc, grid, sg, Q, Q_err, M, P1, p2_g, phi_nodes, psi_g, far,
                   T, t_g, tol, beta, gamma, messages, tail_sel, hint)


def _closure_at(t, y, t_g):
    """Power-law closure of positive samples ``y``, moved from the last sample to ``t_g``."""
    c, e, r = power_law_closure(t, y)
    if not np.isfinite(c):
        return c, e
    shift = ((1 + t_g) / (1 + t[-1])) ** (1 - r)
    return c * shift, e * shift


def _plain_closure(t, q, t_g):
    """``int_{t_g}^inf q`` from a power-law fit of a sign-definite tail."""
    if np.all(q == 0):
        return 0.0, 0.0
    s = np.sign(q[np.argmax(np.abs(q))])
    if np.all(s * q > 0):
        c, e = _closure_at(t, s * q, t_g)
        if np.isfinite(c):
            return s * c, e
    return 0.0, float(np.max(np.abs(q))) * (1 + t_g)


def _finish(spec, calc, grid, sg, Q, Q_err, M, P1, p2_g, phi_nodes, psi_g, far,
            T, t_g, tol, beta, gamma, messages, tail_sel, hint):
    K = len(Q)
    b_nodes = -np.sum(Q, axis=0)
    I_nodes = sg.cumulative_head(b_nodes)
    if hint is not None:
        B_g = p2_g + psi_g
    else:
        bt = b_nodes[tail_sel]
        if np.all(bt == 0):
            B_g = 0.0
        elif _definite(bt):
            s = np.sign(bt[0])
            B_g = s * _closure_at(sg.nodes[tail_sel], s * bt, t_g)[0]
        else:
            B_g = np.inf
    B_nodes = sg.cumulative_tail(b_nodes, closure=B_g)
    p2_nodes = sg.cumulative_tail(P1, closure=p2_g) if np.isfinite(p2_g) else None
    dense = _Dense(sg, Q, Q_err, b_nodes, I_nodes, B_nodes, phi_nodes, p2_nodes)
    horizon = np.inf if hint is not None else t_g

    t_all = grid.nodes
    t_out = t_all[(t_all >= T) & (t_all <= horizon)]
    if len(t_out) == 0 or t_out[0] > T:
        t_out = np.concatenate(([T], t_out))
    out_grid = TimeGrid(t_out)
    G = len(t_out)
    near = t_out <= t_g
    farm = ~near

    Qt = np.full((K, G), np.nan)
    qt = np.full((K, G), np.nan)
    Qe = np.full((K, G), np.nan)
    phi = np.empty(G)
    b = np.empty(G)
    for k in range(K):
        Qt[k, near] = sg.interpolate(Q[k], t_out[near])
        Qe[k, near] = sg.interpolate(Q_err[k], t_out[near])
    phi[near] = sg.interpolate(phi_nodes, t_out[near]) if np.isfinite(psi_g) else np.inf
    b[near] = sg.interpolate(b_nodes, t_out[near])
    if farm.any():
        tf = t_out[farm]
        p1f = calc.p1(tf)
        phi2f, e2, _ = calc.phi2(tf)
        Qt[0, farm], Qt[1, farm] = -p1f, -phi2f
        Qe[0, farm], Qe[1, farm] = 4 * EPS * np.abs(p1f), e2
        phi[farm] = far.psi.tail(tf)[0]
        b[farm] = p1f + phi2f
    Mt = spec.evaluator(t_out)
    qt[0] = Mt
    for k in range(2, K + 1):
        qt[k - 1] = _sum_convolution(list(Qt), k)
    b_prime = -b ** 2 - Mt

    series = GaugeSeries(
        grid=out_grid, K=K, q_tables=qt, Q_tables=Qt, Q_err=Qe, phi=phi, b=b,
        b_prime=b_prime, residual=np.zeros(G), sigma=SIGMA, T=T, t_g=t_g, horizon=horizon,
        tol=tol, b0=np.nan, b1=np.nan, b2=np.nan, beta=beta, gamma=gamma,
        residual_sup=np.nan, spec=spec, messages=messages, _dense=dense, _far=far)

    series.residual = riccati_residual(series, t_out)
    series.residual_sup = float(max(np.max(np.abs(series.residual)), _dense_residual(series)))
    series.b0, series.b1, series.b2 = _decay_constants(series, beta, gamma)
    return series


def _definite(v):
    return np.all(v == 0) or np.all(v > 0) or np.all(v < 0)


def _check_domain(series, t):
    t = np.asarray(t, dtype=float)
    if np.any(t < series.T):
        raise DomainError(f"gauge is defined from T = {series.T:g}; got t = {np.min(t):g}")
    if np.any(t > series.horizon):
        raise DomainError(f"gauge is defined up to t = {series.horizon:g}; got t = {np.max(t):g}")
    return t


def _b_values(series, t):
    t = np.asarray(t, dtype=float)
    out = np.empty(t.shape)
    d = series._dense
    near = t <= series.t_g
    if near.any():
        out[near] = d.sg.interpolate(d.b, t[near])
    if (~near).any():
        out[~near] = series._far.b(t[~near])
    return out


def eval_gauge(series: GaugeSeries, t):
    """``(b, b')`` at ``t >= T``; ``b'`` comes from the Riccati identity."""
    t = _check_domain(series, t)
    b = _b_values(series, t)
    bp = -b ** 2 - series.spec.evaluator(t)
    if b.ndim == 0:
        return float(b), float(bp)
    return b, bp


def eval_extended(series: GaugeSeries, t):
    """Gauge on ``[0, horizon]`` with the constant extension ``b(T)`` before ``T``."""
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise DomainError("negative time")
    out = np.full(t.shape, float(series.b[0]))
    late = t >= series.T
    if late.any():
        out[late] = eval_gauge(series, t[late])[0]
    return out


def riccati_residual(series: GaugeSeries, t):
    """``b~' + b^2 + M`` with ``b~'`` a five-point centered difference of the gauge."""
    t = _check_domain(series, t)
    scalar = t.ndim == 0
    t = np.atleast_1d(t)
    out = np.empty(t.shape)
    d = series._dense
    near = t <= series.t_g
    if near.any():
        tn = t[near]
        seg = d.sg.locate(tn)
        h = _FD_FRACTION * d.sg.h[seg]
        f = [d.sg.poly_eval(d.b, tn + s * h, seg) for s in (-2, -1, 0, 1, 2)]
        out[near] = _fd(f, h) + f[2] ** 2 + series.spec.evaluator(tn)
    if (~near).any():
        tf = t[~near]
        h = _FD_FRACTION * np.pi / series._far.hint.rate(tf)
        h = np.minimum(h, _FD_FRACTION * (1 + tf))
        f = [series._far.b(tf + s * h) for s in (-2, -1, 0, 1, 2)]
        out[~near] = _fd(f, h) + f[2] ** 2 + series.spec.evaluator(tf)
    return float(out[0]) if scalar else out


def _fd(f, h):
    return (f[0] - 8.0 * f[1] + 8.0 * f[3] - f[4]) / (12.0 * h)


def _dense_residual(series):
    """Sup of the residual over every node of the dense grid."""
    d = series._dense
    sg = d.sg
    worst = 0.0
    flat = d.b.ravel()
    M = series.spec.evaluator
    seg_all = np.repeat(np.arange(sg.nseg), sg.order)
    t_all = sg.nodes.ravel()
    for s in range(0, len(t_all), _CHUNK):
        tn, seg = t_all[s:s + _CHUNK], seg_all[s:s + _CHUNK]
        h = _FD_FRACTION * sg.h[seg]
        f = [sg.poly_eval(d.b, tn + k * h, seg) if k else flat[s:s + _CHUNK]
             for k in (-2, -1, 0, 1, 2)]
        r = _fd(f, h) + f[2] ** 2 + M(tn)
        worst = max(worst, float(np.max(np.abs(r))))
    return worst


def _decay_constants(series, beta, gamma):
    d = series._dense
    tn = d.sg.nodes
    b0 = float(np.max(np.abs(d.B))) if np.all(np.isfinite(d.B)) else np.inf
    Mn = series.spec.evaluator(tn)
    b1 = float(np.max(np.abs(d.b) * (1 + tn) ** gamma))
    b2 = float(np.max(np.abs(d.b ** 2 + Mn) * (1 + tn) ** (2 * beta)))
    far = series.t > series.t_g
    if far.any():
        tf = series.t[far]
        b1 = max(b1, float(np.max(np.abs(series.b[far]) * (1 + tf) ** gamma)))
        b2 = max(b2, float(np.max(np.abs(series.b_prime[far]) * (1 + tf) ** (2 * beta))))
        B = series._far.p2(tf) + series.phi[far]
        b0 = max(b0, float(np.max(np.abs(B))))
    return b0, b1, b2


# -- bounds -------------------------------------------------------------------------


@dataclass
class BoundReport:
    """Bound checks of a gauge series.

    Ratios are measured maxima over the checked nodes; a check passes when
    the ratio is at most one after subtracting the error budget.
    """

    majorant_ratio: float
    sum_ratio: float
    higher_ratio: float
    b_bound_ratio: float
    b0: float
    b1: float
    b2: float
    violations: list
    nodes_checked: int

    @property
    def ok(self) -> bool:
        return not self.violations


def verify_series_bounds(series: GaugeSeries, beta: Optional[float] = None,
                         gamma: Optional[float] = None, rel: float = 1e-9) -> BoundReport:
    """Check the majorant, the ``3/2 |Q_2|`` sum bound and ``|b| <= |Q_1| + 3/2 |Q_2|``.

    The checks run at every node of the dense grid and at the output grid
    nodes before ``t_g``; ``rel`` plus the absolute error estimates of the
    ``Q_k`` form the error budget.
    """
    d = series._dense
    Qs = [q.ravel() for q in d.Q]
    Es = [e.ravel() for e in d.Q_err]
    phi = d.phi.ravel()
    near = series.t <= series.t_g
    if near.any():
        Qs = [np.concatenate((q, series.Q_tables[k, near])) for k, q in enumerate(Qs)]
        Es = [np.concatenate((e, series.Q_err[k, near])) for k, e in enumerate(Es)]
        phi = np.concatenate((phi, series.phi[near]))
    K = len(Qs)
    q2 = np.abs(Qs[1])
    violations = []
    majorant = 0.0
    with np.errstate(invalid="ignore", divide="ignore", over="ignore"):
        for k in range(2, K + 1):
            bound = 4.0 ** (k - 1) * (-Qs[1]) * phi ** ((k - 2) / 2.0)
            bound = np.where(np.isnan(bound), np.inf, bound)
            excess = np.abs(Qs[k - 1]) - bound * (1 + rel) - Es[k - 1]
            ratio = np.where(bound > 0, np.abs(Qs[k - 1]) / bound, 0.0)
            majorant = max(majorant, float(np.nanmax(ratio)))
            if np.any(excess > 0):
                i = int(np.argmax(excess))
                violations.append(f"Q_{k} exceeds its majorant by {excess[i]:.3g} (node {i})")
        if np.any(Qs[1] > Es[1]):
            violations.append("Q_2 is positive beyond its error")
        total = np.sum(np.abs(Qs[1:]), axis=0)
        err = np.sum(Es[1:], axis=0)
        higher = total - q2
        sum_ratio = float(np.nanmax(np.where(q2 > 0, total / q2, 1.0 if K > 1 else 0.0)))
        higher_ratio = float(np.nanmax(np.where(q2 > 0, higher / q2, 0.0)))
        if np.any(total - 1.5 * q2 * (1 + rel) - err > 0):
            violations.append("sum of |Q_k| exceeds 3/2 |Q_2|")
        b = -np.sum(Qs, axis=0)
        bb = np.abs(Qs[0]) + 1.5 * q2
        b_ratio = float(np.nanmax(np.where(bb > 0, np.abs(b) / bb, 0.0)))
        if np.any(np.abs(b) - bb * (1 + rel) - np.sum(Es, axis=0) > 0):
            violations.append("|b| exceeds |Q_1| + 3/2 |Q_2|")
    b0, b1, b2 = series.b0, series.b1, series.b2
    if beta is not None or gamma is not None:
        beta = series.beta if beta is None else beta
        gamma = series.gamma if gamma is None else gamma
        b0, b1, b2 = _decay_constants(series, beta, gamma)
    for name, v in (("b0", b0), ("b1", b1), ("b2", b2)):
        if not np.isfinite(v):
            violations.append(f"{name} is not finite")
    return BoundReport(majorant, sum_ratio, higher_ratio, b_ratio, b0, b1, b2, violations, len(q2))


# -- change of variable and a/eta ---------------------------------------------------


def gauge_head(series: GaugeSeries, t):
    """``int_T^t b``."""
    t = np.atleast_1d(_check_domain(series, t))
    d = series._dense
    out = np.empty(t.shape)
    near = t <= series.t_g
    if near.any():
        out[near] = d.sg.interpolate(d.I, t[near])
    if (~near).any():
        out[~near] = d.I_end + series._far.head_shift(t[~near])
    return out


def gauge_tail(series: GaugeSeries, t):
    """``int_t^inf b``; infinite when the tail of ``b`` is not integrable."""
    t = np.atleast_1d(_check_domain(series, t))
    d = series._dense
    out = np.empty(t.shape)
    near = t <= series.t_g
    if near.any():
        out[near] = d.sg.interpolate(d.B, t[near]) if np.all(np.isfinite(d.B)) else np.inf
    if (~near).any():
        tf = t[~near]
        out[~near] = series._far.p2(tf) + series._far.psi.tail(tf)[0]
    return out


def theta_map(series: GaugeSeries, t):
    """``theta(t) = int_T^t exp(-2 int_T^s b) ds``."""
    t = _check_domain(series, t)
    scalar = t.ndim == 0
    t = np.atleast_1d(t)
    d = series._dense
    out = np.empty(t.shape)
    near = t <= series.t_g
    if near.any():
        out[near] = d.sg.interpolate(d.theta, t[near])
    if (~near).any():
        out[~near] = _theta_far(series, t[~near])
    return float(out[0]) if scalar else out


def _theta_far(series, t):
    """theta beyond t_g by Gauss-Legendre panels doubling in ``1+t``.

    The integrand ``exp(-2 int_T^s b)`` is smooth once the oscillating ``P2``
    part of the exponent is dropped.
    """
    d = series._dense
    theta_g, I_g = d.theta_end, d.I_end
    far = series._far
    x, w = np.polynomial.legendre.leggauss(16)
    out = np.empty(t.shape)
    for i, ti in enumerate(t):
        panels = max(1, int(np.ceil(np.log2((1 + ti) / (1 + series.t_g)))))
        br = np.geomspace(1 + series.t_g, 1 + ti, panels + 1) - 1
        a, bnd = br[:-1, None], br[1:, None]
        s = (a + 0.5 * (x + 1) * (bnd - a)).ravel()
        ww = (0.5 * (bnd - a) * w).ravel()
        J = far.head_shift(s, oscillating=False)
        out[i] = theta_g + np.exp(-2.0 * I_g) * np.dot(ww, np.exp(-2.0 * J))
    return out


class AEta(NamedTuple):
    a: np.ndarray
    eta: np.ndarray
    gap_head: np.ndarray
    gap_tail: Optional[np.ndarray]
    bracketed: bool


def a_eta_diagnostic(series: GaugeSeries, t, alpha: Optional[float] = None) -> AEta:
    """``a`` and ``eta`` at ``tau = theta(t)`` and the integrated gap ``|a - eta|``.

    With ``b = P1 + (higher terms)``, ``eta / a = exp(2 P2)`` along the
    gauge, so ``int |a - eta| dtau = int |1 - exp(2 P2(s))| ds``.  ``gap_tail``
    runs to the gauge horizon and is omitted when ``alpha > 0``.
    """
    t = np.atleast_1d(_check_domain(series, t))
    d = series._dense
    if d.p2 is None:
        raise DomainError("P2 diverges; a and eta are not defined")
    near = t <= series.t_g
    p2 = np.empty(t.shape)
    head = np.empty(t.shape)
    tail = np.empty(t.shape)
    g, total = d.gap()
    if near.any():
        p2[near] = d.sg.interpolate(d.p2, t[near])
        head[near] = d.sg.abs_head_at(g, t[near])
        closure = series._far.gap.tail(np.array([series.t_g]))[0][0] if series._far else 0.0
        tail[near] = total - head[near] + closure
    if (~near).any():
        tf = t[~near]
        far = series._far
        p2[~near] = far.p2(tf)
        ug = far.gap.tail(np.array([series.t_g]), closed=False)[0][0]
        u = far.gap.tail(tf, closed=False)[0]
        head[~near] = total + (ug - u)
        tail[~near] = far.gap.tail(tf)[0]
    a = np.exp(2.0 * gauge_head(series, t))
    eta = a * np.exp(2.0 * p2)
    b0 = series.b0
    bracketed = bool(np.all(a >= np.exp(-2 * b0) * (1 - 1e-12))
                     and np.all(eta <= np.exp(2 * b0) * (1 + 1e-12)))
    if alpha is not None and alpha > 0:
        tail = None
    return AEta(a, eta, head, tail, bracketed)
