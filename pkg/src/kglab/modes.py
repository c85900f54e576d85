"""Fourier modes of the Klein-Gordon equation and their energies.

Each mode solves ``u'' + (xi**2 + M(t)) u = 0`` in the original variable.
The damped amplitude is reconstructed afterwards: with ``B(t) = int_t^inf b``
the modified energy ``e_mod = xi^2 |u|^2 + |u' - b u|^2`` and
``|W|^2 = exp(2 B) e_mod``.

Modes of a sweep advance together with one shared step sequence, so the
potential is evaluated once per stage for the whole ensemble.
"""

from __future__ import annotations

import csv
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import _ode
from .errors import DegenerateMode, DomainError, KGLabError, StiffnessError
from .gauge import GaugeSeries, eval_extended, gauge_tail
from .potential import PotentialSpec, eval_m

MODE_FIELDS = ("xi", "t", "re_u", "im_u", "re_ut", "im_ut", "e_kg1", "e_mod", "w_amp2", "zone")
SUMMARY_FIELDS = ("xi", "ratio_min", "ratio_max", "slope", "verdict")

SAMPLES = 400
FIRST_SAMPLE = 1e-3
CAP_FRACTION = 1.0 / 20.0
SLOPE_LIMIT = 0.02
MAX_STEPS = 50_000_000
THREADS_ENV = "KGLAB_THREADS"


# -- zones --------------------------------------------------------------------------


@dataclass(frozen=True)
class ZoneConfig:
    """Split of the (t, xi) plane by the sign of ``(1+t)^alpha xi - N``."""

    alpha: float
    N: float
    T: float

    def __post_init__(self):
        if not self.N > 0:
            raise DomainError(f"zone constant N must be positive, got {self.N}")

    def classify(self, t, xi):
        """``"H"`` where ``(1+t)^alpha xi >= N``, otherwise ``"Psi"``."""
        high = (1.0 + np.asarray(t, dtype=float)) ** self.alpha * xi >= self.N
        return np.where(high, "H", "Psi")


def default_zone(series: GaugeSeries, alpha: float = 0.0) -> ZoneConfig:
    """Zone configuration with ``N = max(1, 2 b1)``."""
    b1 = series.b1 if np.isfinite(series.b1) else 0.0
    return ZoneConfig(alpha, max(1.0, 2.0 * b1), series.T)


def zone_boundary(cfg: ZoneConfig, xi: float) -> Optional[float]:
    """Crossing time ``max(T, (N/xi)^(1/alpha) - 1)``; ``None`` when ``alpha = 0``."""
    if not xi > 0:
        raise DomainError(f"xi must be positive, got {xi}")
    if cfg.alpha == 0:
        return None
    with np.errstate(over="ignore"):
        cross = (cfg.N / xi) ** (1.0 / cfg.alpha) - 1.0
    return float(max(cfg.T, cross))


# -- states and energies ----------------------------------------------------------


@dataclass(frozen=True)
class ModeState:
    xi: float
    u: complex
    ut: complex

    def __post_init__(self):
        if not (np.isfinite(self.xi) and np.isfinite(self.u) and np.isfinite(self.ut)):
            raise DomainError("mode state has non-finite components")


def _gauge_value(series, t):
    if series is None:
        return np.zeros(np.shape(t))
    if isinstance(series, GaugeSeries):
        return eval_extended(series, t)
    return np.full(np.shape(t), float(series))


def _energy_pair(xi, u, ut, b, p):
    u2 = np.abs(u) ** 2
    e_kg = xi * xi * u2 + np.abs(ut) ** 2 + p * u2
    e_mod = xi * xi * u2 + np.abs(ut - b * u) ** 2
    return e_kg, e_mod


def energies(state: ModeState, series, t: float, p: float = 1.0):
    """``(e_kg, e_mod)`` of one state.

    ``series`` is a gauge (extended by ``b(T)`` before ``T``), a constant
    value of ``b``, or ``None`` for ``b = 0``.
    """
    b = float(_gauge_value(series, t))
    e_kg, e_mod = _energy_pair(state.xi, state.u, state.ut, b, p)
    return float(e_kg), float(e_mod)


def w_amplitude(state: ModeState, series: GaugeSeries, t: float) -> float:
    """``|W|^2 = exp(2 int_t^inf b) e_mod`` at ``t >= T``."""
    if t < series.T:
        raise DomainError(f"|W| is defined from T = {series.T:g}; got t = {t:g}")
    _, e_mod = energies(state, series, t)
    return float(np.exp(2.0 * gauge_tail(series, t)[0]) * e_mod)


# -- results ------------------------------------------------------------------------


@dataclass
class RatioReport:
    """Ratios ``e_mod(t) / e_mod(T)`` over ``t >= T`` and the log-log drift."""

    ratio_min: float
    ratio_max: float
    slope: float
    e_T: float

    @property
    def C(self) -> float:
        return float(max(self.ratio_max, 1.0 / self.ratio_min))

    @property
    def passed(self) -> bool:
        return bool(np.isfinite(self.C) and abs(self.slope) <= SLOPE_LIMIT)


@dataclass(eq=False)
class ModeResult:
    xi: float
    t: np.ndarray
    u: np.ndarray
    ut: np.ndarray
    e_kg1: np.ndarray
    e_mod: np.ndarray
    w_amp2: np.ndarray
    zone: np.ndarray
    T: float
    t_xi: Optional[float]
    steps: int
    ratio: Optional[RatioReport] = None
    K0: float = np.nan
    C_prime: float = np.nan
    zone_constants: dict = field(default_factory=dict)
    error: Optional[str] = None

    @property
    def ok(self) -> bool:
        return self.error is None

    def state(self, i: int) -> ModeState:
        return ModeState(self.xi, complex(self.u[i]), complex(self.ut[i]))

    def rows(self):
        for i in range(len(self.t)):
            yield [repr(float(self.xi)), repr(float(self.t[i])),
                   repr(float(self.u[i].real)), repr(float(self.u[i].imag)),
                   repr(float(self.ut[i].real)), repr(float(self.ut[i].imag)),
                   repr(float(self.e_kg1[i])), repr(float(self.e_mod[i])),
                   repr(float(self.w_amp2[i])), str(self.zone[i])]

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(MODE_FIELDS)
            w.writerows(self.rows())


def _failed(xi, T, t_xi, message):
    empty = np.empty(0)
    return ModeResult(xi, empty, empty.astype(complex), empty.astype(complex), empty, empty,
                      empty, empty.astype(str), T, t_xi, 0, error=message)


# -- integration --------------------------------------------------------------------


def sample_times(t_end: float, extra: Sequence[float] = (), samples: int = SAMPLES):
    """``0``, ``samples`` log-spaced times on ``[1e-3, t_end]`` and the extra times."""
    base = np.geomspace(min(FIRST_SAMPLE, t_end), t_end, samples)
    extra = [e for e in extra if e is not None and 0.0 <= e <= t_end]
    return np.unique(np.concatenate(([0.0], base, extra)))


def _initial_vector(ic, n):
    u0, u1 = complex(ic[0]), complex(ic[1])
    y0 = np.empty((n, 4))
    y0[:] = (u0.real, u0.imag, u1.real, u1.imag)
    return y0


def _run(spec, xi, y0, t_out, tol, cap_fraction, max_steps, record=False):
    codes, params, tab_x, tab_c, ptr = spec.compiled()
    ys, status, steps, hist = _ode.dop853_ensemble(
        np.ascontiguousarray(xi, dtype=float), np.ascontiguousarray(y0, dtype=float),
        np.ascontiguousarray(t_out, dtype=float), float(tol), float(cap_fraction),
        int(max_steps), codes, params, tab_x, tab_c, ptr, record)
    if status == _ode.STIFF:
        raise StiffnessError(
            f"step size underflow near t = {t_out[len(ys) - 1]:g} "
            f"(xi in [{np.min(xi):g}, {np.max(xi):g}], tol = {tol:g}, {steps} steps)")
    if status == _ode.TOO_MANY_STEPS:
        raise StiffnessError(
            f"step budget of {max_steps} exhausted before t = {t_out[-1]:g} "
            f"(reached t = {t_out[len(ys) - 1]:g})")
    return ys, steps, hist


def _validate(series, t_end, tol):
    if not t_end > 0:
        raise DomainError(f"t_end must be positive, got {t_end}")
    if not tol > 0:
        raise DomainError(f"tol must be positive, got {tol}")
    if t_end > series.horizon:
        raise DomainError(f"t_end = {t_end:g} lies beyond the gauge horizon {series.horizon:g}")


def _assemble(spec, series, xi, t, y, steps, zone, t_xi):
    u = y[:, 0] + 1j * y[:, 1]
    ut = y[:, 2] + 1j * y[:, 3]
    b = eval_extended(series, t)
    e_kg1, e_mod = _energy_pair(xi, u, ut, b, 1.0)
    w2 = np.full(t.shape, np.nan)
    late = t >= series.T
    if late.any():
        w2[late] = np.exp(2.0 * gauge_tail(series, t[late])) * e_mod[late]
    labels = zone.classify(t, xi)
    res = ModeResult(xi, t, u, ut, e_kg1, e_mod, w2, labels, series.T, t_xi, steps)
    if e_kg1[0] > 0:
        res.C_prime = float(np.max(e_mod) / e_kg1[0])
    if t[-1] >= series.T and e_kg1[0] > 0:
        res.K0 = check_initial_segment(res, series.T)
        try:
            res.ratio = check_gmec(res, series.T)
        except DegenerateMode as exc:
            res.error = str(exc)
        res.zone_constants = _zone_constants(res)
    return res


def _zone_constants(res: ModeResult) -> dict:
    """Spread of ``|W|`` about its anchor within each zone crossed after ``T``.

    The zone holding ``[T, t_xi]`` is anchored at ``T``, the one after
    ``t_xi`` at ``t_xi``; without a crossing time the single zone is
    anchored at ``T``.
    """
    late = res.t >= res.T
    t, w, z = res.t[late], np.sqrt(res.w_amp2[late]), res.zone[late]
    out = {}
    cut = res.t_xi if res.t_xi is not None else np.inf
    for piece, anchor_t in ((t <= cut, res.T), (t >= cut, cut)):
        if not piece.any() or not np.isfinite(anchor_t):
            continue
        anchor = w[np.argmin(np.abs(t - anchor_t))]
        if not anchor > 0 or not np.isfinite(anchor):
            continue
        r = w[piece] / anchor
        c = float(np.max(np.maximum(r, 1.0 / r)))
        for name in np.unique(z[piece]):
            out[str(name)] = max(out.get(str(name), 1.0), c)
    return out


def simulate_mode(spec: PotentialSpec, series: GaugeSeries, xi: float, ic=(1.0, 0.0),
                  t_end: float = 1e3, tol: float = 1e-10, zone: Optional[ZoneConfig] = None,
                  cap_fraction: float = CAP_FRACTION, max_steps: int = MAX_STEPS,
                  samples: int = SAMPLES) -> ModeResult:
    """Integrate one mode from ``t = 0`` and sample its energies.

    Raises :class:`~kglab.errors.StiffnessError` when the step size underflows.
    """
    _validate(series, t_end, tol)
    zone = zone or default_zone(series)
    t_xi = zone_boundary(zone, xi)
    t = sample_times(t_end, (series.T, t_xi), samples)
    ys, steps, _ = _run(spec, np.array([xi]), _initial_vector(ic, 1), t, tol, cap_fraction,
                        max_steps)
    return _assemble(spec, series, xi, t, ys[:, 0], steps, zone, t_xi)


def _sweep_block(spec, series, xi, ic, t_end, tol, zone, cap_fraction, max_steps, samples):
    """Integrate a block of modes in lockstep; fall back to single modes on failure."""
    t_xis = [zone_boundary(zone, x) for x in xi]
    t = sample_times(t_end, [series.T] + t_xis, samples)
    try:
        ys, steps, _ = _run(spec, xi, _initial_vector(ic, len(xi)), t, tol, cap_fraction,
                            max_steps)
    except StiffnessError:
        if len(xi) == 1:
            raise
        out = []
        for x in xi:
            try:
                out.append(simulate_mode(spec, series, x, ic, t_end, tol, zone, cap_fraction,
                                         max_steps, samples))
            except KGLabError as exc:
                out.append(_failed(x, series.T, zone_boundary(zone, x), str(exc)))
        return out
    out = []
    for i, x in enumerate(xi):
        own = sample_times(t_end, (series.T, t_xis[i]), samples)
        keep = np.isin(t, own)
        out.append(_assemble(spec, series, x, t[keep], ys[keep, i], steps, zone, t_xis[i]))
    return out


def sweep_modes(spec: PotentialSpec, series: GaugeSeries, xi_grid: Sequence[float],
                ic=(1.0, 0.0), t_end: float = 1e3, tol: float = 1e-10,
                zone: Optional[ZoneConfig] = None, cap_fraction: float = CAP_FRACTION,
                max_steps: int = MAX_STEPS, samples: int = SAMPLES,
                block_size: Optional[int] = None, threads: Optional[int] = None):
    """One :class:`ModeResult` per ``xi``, in input order.

    Frequencies are sorted before integration and split into blocks of
    ``block_size`` (default: one block), so outputs do not depend on the
    order of ``xi_grid`` or on the thread count.  Per-mode failures are
    recorded in ``ModeResult.error``.
    """
    _validate(series, t_end, tol)
    xi_grid = np.asarray(xi_grid, dtype=float)
    if xi_grid.ndim != 1 or len(xi_grid) == 0:
        raise DomainError("xi grid must be a non-empty list")
    if not np.all(xi_grid > 0) or not np.all(np.isfinite(xi_grid)):
        raise DomainError("xi grid must be positive and finite")
    zone = zone or default_zone(series)
    if np.isfinite(series.b1) and zone.N < 2.0 * series.b1 * (1 - 1e-12):
        raise DomainError(f"zone constant N = {zone.N:g} is below 2 b1 = {2 * series.b1:g}")
    order = np.argsort(xi_grid, kind="stable")
    xs = xi_grid[order]
    size = len(xs) if not block_size else int(block_size)
    blocks = [xs[i:i + size] for i in range(0, len(xs), size)]
    threads = threads or int(os.environ.get(THREADS_ENV, "1") or 1)
    args = (ic, t_end, tol, zone, cap_fraction, max_steps, samples)

    def work(block):
        try:
            return _sweep_block(spec, series, block, *args)
        except KGLabError as exc:
            return [_failed(x, series.T, zone_boundary(zone, x), str(exc)) for x in block]

    if threads > 1 and len(blocks) > 1:
        with ThreadPoolExecutor(threads) as pool:
            parts = list(pool.map(work, blocks))
    else:
        parts = [work(b) for b in blocks]
    flat = [r for part in parts for r in part]
    out = [None] * len(flat)
    for pos, r in zip(order, flat):
        out[pos] = r
    return out


# -- checks ------------------------------------------------------------------------


def check_gmec(result: ModeResult, T: float) -> RatioReport:
    """Ratios of ``e_mod(t)/e_mod(T)`` over samples ``t >= T`` and the fitted drift slope."""
    late = result.t >= T
    if not late.any():
        raise DomainError("result has no samples at or after T")
    t, e = result.t[late], result.e_mod[late]
    e_T = float(e[0])
    if not e_T > 0:
        raise DegenerateMode(f"e_mod(T) = {e_T:g} for xi = {result.xi:g}")
    r = e / e_T
    if len(t) > 1:
        slope = float(np.polyfit(np.log1p(t), np.log(e), 1)[0])
    else:
        slope = 0.0
    return RatioReport(float(np.min(r)), float(np.max(r)), slope, e_T)


def check_initial_segment(result: ModeResult, T: float) -> float:
    """``K0 = max_{t <= T} e_kg(t; 1) / e_kg(0; 1)``."""
    head = result.t <= T
    return float(np.max(result.e_kg1[head]) / result.e_kg1[0])


def initial_segment_bound(spec: PotentialSpec, T: float, points: int = 200_001) -> float:
    """``exp(T sup_[0,T] |1 - M|)``, the sup taken on a fine uniform grid."""
    t = np.linspace(0.0, T, points)
    return float(np.exp(T * np.max(np.abs(1.0 - eval_m(spec, t)))))


def aggregate_constant(results: Sequence[ModeResult]) -> float:
    """Sup over modes of ``max(ratio_max, 1/ratio_min)``; infinite if any mode failed."""
    cs = [r.ratio.C if r.ratio is not None else np.inf for r in results]
    return float(max(cs)) if cs else np.nan


def gaussian_weights(xi: Sequence[float]) -> np.ndarray:
    """Trapezoid weights in ``xi`` times the spectral density ``exp(-xi^2)``."""
    xi = np.asarray(xi, dtype=float)
    if len(xi) == 1:
        return np.exp(-xi ** 2)
    order = np.argsort(xi)
    xs = xi[order]
    d = np.diff(xs)
    w = np.zeros(len(xs))
    w[:-1] += 0.5 * d
    w[1:] += 0.5 * d
    out = np.empty(len(xs))
    out[order] = w * np.exp(-xs ** 2)
    return out


def total_energy(results: Sequence[ModeResult], weights: Sequence[float], t: float,
                 which: str = "e_mod") -> float:
    """Weighted sum over modes of ``e_mod`` (or ``e_kg1``) at time ``t``.

    Values between samples are interpolated linearly in ``t``.
    """
    weights = np.asarray(weights, dtype=float)
    if len(weights) != len(results):
        raise ValueError(f"{len(results)} results but {len(weights)} weights")
    if np.any(weights < 0):
        raise ValueError("weights must be nonnegative")
    total = 0.0
    for r, w in zip(results, weights):
        if not r.ok and len(r.t) == 0:
            raise KGLabError(f"mode xi = {r.xi:g} failed: {r.error}")
        total += w * float(np.interp(t, r.t, getattr(r, which)))
    return total


def time_reversal_error(spec: PotentialSpec, xi: float, ic=(1.0, 0.0), t_star: float = 10.0,
                        tol: float = 1e-10, cap_fraction: float = CAP_FRACTION) -> float:
    """Energy-norm distance, relative to the initial state, after integrating to
    ``t_star`` and back."""
    y0 = _initial_vector(ic, 1)
    fwd, _, _ = _run(spec, np.array([xi]), y0, np.array([0.0, t_star]), tol, cap_fraction,
                     MAX_STEPS)
    back, _, _ = _run(spec, np.array([xi]), fwd[-1], np.array([t_star, 0.0]), tol, cap_fraction,
                      MAX_STEPS)
    d = back[-1, 0] - y0[0]
    w = xi * xi + 1.0
    norm = np.sqrt(w * (y0[0, 0] ** 2 + y0[0, 1] ** 2) + y0[0, 2] ** 2 + y0[0, 3] ** 2)
    return float(np.sqrt(w * (d[0] ** 2 + d[1] ** 2) + d[2] ** 2 + d[3] ** 2) / norm)


def rk4_comparison(spec: PotentialSpec, series: GaugeSeries, xi: float, ic=(1.0, 0.0),
                   t_end: float = 1e3, tol: float = 1e-10, substeps: int = 10,
                   cap_fraction: float = CAP_FRACTION, samples: int = SAMPLES):
    """Adaptive ``e_mod`` and a fixed-step RK4 replay on the same samples.

    RK4 reuses the adaptive step boundaries, each split into ``substeps``
    equal steps.  Returns ``(t, e_mod_adaptive, e_mod_rk4)``.
    """
    _validate(series, t_end, tol)
    t = sample_times(t_end, (series.T,), samples)
    y0 = _initial_vector(ic, 1)
    xs = np.array([xi])
    ys, _, hist = _run(spec, xs, y0, t, tol, cap_fraction, MAX_STEPS, record=True)
    idx = np.searchsorted(hist, t)
    if not np.array_equal(hist[np.minimum(idx, len(hist) - 1)], t):
        raise KGLabError("sample times are not step boundaries")
    codes, params, tab_x, tab_c, ptr = spec.compiled()
    yr = _ode.rk4_replay(xs, y0, hist, idx.astype(np.int64), int(substeps), codes, params,
                         tab_x, tab_c, ptr)
    b = eval_extended(series, t)

    def e_mod(y):
        return _energy_pair(xi, y[:, 0] + 1j * y[:, 1], y[:, 2] + 1j * y[:, 3], b, 1.0)[1]

    return t, e_mod(ys[:, 0]), e_mod(yr[:, 0])


def write_summary(results: Sequence[ModeResult], path):
    """Sweep summary CSV: one row per mode with its ratio range, slope and verdict."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(SUMMARY_FIELDS)
        for r in results:
            if r.ratio is None:
                w.writerow([repr(float(r.xi)), "nan", "nan", "nan", "error"])
                continue
            w.writerow([repr(float(r.xi)), repr(r.ratio.ratio_min), repr(r.ratio.ratio_max),
                        repr(r.ratio.slope), "pass" if r.ratio.passed else "fail"])
