"""Decay conditions on a potential and their numerical verdicts.

A condition of the form ``q(t) <~ (1+t)^a`` is judged on a time grid: it
holds when the weighted quantity ``q(t) (1+t)^-a`` has a finite observed
supremum and the log-log slope of ``q`` beyond ``t = 10`` does not exceed
``a + SLOPE_TOLERANCE``.  Oscillating quantities are fitted through their
envelope over one carrier period.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import DomainError
from .potential import PotentialSpec, envelope
from .tails import TailIntegralTable, TimeGrid

SLOPE_TOLERANCE = 0.05
FIT_START = 10.0

SATISFIED, VIOLATED, UNAVAILABLE = "satisfied", "violated", "unavailable"
ADMISSIBLE, INADMISSIBLE, INDETERMINATE = "admissible", "inadmissible", "indeterminate"

CSV_FIELDS = ("condition", "exponent_demanded", "exponent_fitted", "r2", "bound_constant", "verdict")


@dataclass(frozen=True)
class ConditionParams:
    """Exponents of the decay conditions: ``alpha <= 1``, ``beta < 1``, ``gamma > 0``."""

    alpha: float
    beta: float
    gamma: float

    def __post_init__(self):
        if not self.alpha <= 1:
            raise DomainError(f"alpha ≤ 1 required, got {self.alpha}")
        if not self.beta < 1:
            raise DomainError(f"beta < 1 required, got {self.beta}")
        if not self.gamma > 0:
            raise DomainError(f"gamma > 0 required, got {self.gamma}")


@dataclass(frozen=True)
class ConditionEntry:
    name: str
    exponent_demanded: float
    fitted_exponent: float
    fit_r2: float
    bound_constant: float
    verdict: str
    detail: str = ""
    parts: tuple = ()

    def rows(self):
        """CSV rows of this entry followed by its parts, named ``entry.part``."""
        out = [self._row(self.name)]
        for p in self.parts:
            out.append(p._row(f"{self.name}.{p.name}"))
        return out

    def _row(self, name):
        return {"condition": name, "exponent_demanded": self.exponent_demanded,
                "exponent_fitted": self.fitted_exponent, "r2": self.fit_r2,
                "bound_constant": self.bound_constant, "verdict": self.verdict}


@dataclass(frozen=True)
class ConditionReport:
    entries: tuple
    overall: str
    params: Optional[ConditionParams] = None
    notes: dict = field(default_factory=dict)

    def entry(self, name) -> ConditionEntry:
        for e in self.entries:
            if e.name == name:
                return e
        raise KeyError(name)

    def rows(self):
        return [r for e in self.entries for r in e.rows()]

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=CSV_FIELDS)
            w.writeheader()
            for row in self.rows():
                w.writerow({k: (repr(float(v)) if isinstance(v, (float, np.floating)) else v)
                            for k, v in row.items()})


# -- fitting ------------------------------------------------------------------------


def fit_exponent(ts, vals):
    """Least-squares slope of ``log(vals)`` against ``log(1+t)`` and its r².

    r² is reported as 1 when the residuals vanish (including constant data).
    """
    ts = np.asarray(ts, dtype=float)
    vals = np.asarray(vals, dtype=float)
    if ts.shape != vals.shape or ts.ndim != 1:
        raise ValueError("ts and vals must be matching 1-d arrays")
    if len(ts) < 5:
        raise ValueError(f"need at least 5 samples, got {len(ts)}")
    if not np.all(vals > 0):
        raise ValueError("vals must be positive")
    x = np.log1p(ts)
    if np.ptp(x) == 0:
        raise ValueError("degenerate samples: all times are equal")
    y = np.log(vals)
    slope, icpt = np.polyfit(x, y, 1)
    res = y - (slope * x + icpt)
    ss_res = float(res @ res)
    ss_tot = float(((y - y.mean()) ** 2).sum())
    if ss_res <= 1e-28 * max(1.0, float(y @ y)):
        return float(slope), 1.0
    return float(slope), 1.0 - ss_res / ss_tot if ss_tot > 0 else 0.0


def _decay_verdict(name, t, q, demanded, weighted=None, detail=""):
    """Verdict for ``q(t) <~ (1+t)^demanded`` from samples of ``q >= 0``.

    ``weighted`` overrides the samples used for the supremum (e.g. an
    envelope of the weighted quantity).
    """
    t = np.asarray(t, dtype=float)
    q = np.asarray(q, dtype=float)
    if weighted is None:
        weighted = q * (1.0 + t) ** (-demanded)
    if np.any(~np.isfinite(q)) or np.any(~np.isfinite(weighted)):
        return ConditionEntry(name, demanded, np.nan, np.nan, np.inf, VIOLATED,
                              detail or "quantity not finite on the grid")
    bound = float(np.max(weighted))
    if np.all(q == 0):
        return ConditionEntry(name, demanded, np.nan, np.nan, 0.0, SATISFIED,
                              detail or "quantity vanishes identically")
    sel = (t >= FIT_START) & (q > 0)
    if sel.sum() < 5:
        # short grids: fall back to the last half of the positive samples
        pos = np.nonzero(q > 0)[0]
        sel = np.zeros_like(q, dtype=bool)
        sel[pos[len(pos) // 2:]] = True
    if sel.sum() < 5:
        return ConditionEntry(name, demanded, np.nan, np.nan, bound, SATISFIED,
                              detail or "quantity vanishes beyond the fit start")
    slope, r2 = fit_exponent(t[sel], q[sel])
    ok = slope <= demanded + SLOPE_TOLERANCE
    return ConditionEntry(name, demanded, slope, r2, bound, SATISFIED if ok else VIOLATED, detail)


def _unavailable(name, demanded, why):
    return ConditionEntry(name, demanded, np.nan, np.nan, np.nan, UNAVAILABLE, why)


def _column_problem(table, name):
    """Verdict forced by the column status, or None if the column is usable."""
    status = table.status[name]
    if status == "ok":
        return None
    if status == "divergent":
        return VIOLATED
    return UNAVAILABLE


def _combine(verdicts):
    if VIOLATED in verdicts:
        return VIOLATED
    if UNAVAILABLE in verdicts:
        return UNAVAILABLE
    return SATISFIED


# -- individual conditions ------------------------------------------------------------


def check_m1(table: TailIntegralTable, alpha: float) -> ConditionEntry:
    """Growth of ``int_0^t |P2|`` (alpha >= 0) or decay of ``int_t^inf |P2|`` (alpha <= 0).

    At ``alpha = 0`` both branches are checked and reported as parts.
    """
    parts = []
    branches = []
    if alpha >= 0:
        branches.append(("head", "abs_p2_head"))
    if alpha <= 0:
        branches.append(("tail", "abs_p2_tail"))
    for label, col in branches:
        forced = _column_problem(table, col)
        if forced == VIOLATED:
            parts.append(ConditionEntry(label, alpha, np.nan, np.nan, np.inf, VIOLATED,
                                        table.messages.get(col, f"{col} diverges")))
        elif forced == UNAVAILABLE:
            parts.append(_unavailable(label, alpha, table.messages.get(col, f"{col} unavailable")))
        else:
            parts.append(_decay_verdict(label, table.t, table.columns[col], alpha))
    if len(parts) == 1:
        p = parts[0]
        return ConditionEntry("M1", alpha, p.fitted_exponent, p.fit_r2, p.bound_constant,
                              p.verdict, p.detail or f"branch: {p.name}")
    verdict = _combine([p.verdict for p in parts])
    bound = max((p.bound_constant for p in parts if np.isfinite(p.bound_constant)), default=np.nan)
    if any(p.bound_constant == np.inf for p in parts):
        bound = np.inf
    return ConditionEntry("M1", alpha, np.nan, np.nan, bound, verdict,
                          "both branches checked at alpha = 0", tuple(parts))


def check_m2(spec: PotentialSpec, beta: float, grid: Optional[TimeGrid] = None) -> ConditionEntry:
    """``|M(t)| <~ (1+t)^(-2 beta)`` on a dense probe grid."""
    if not beta < 1:
        raise DomainError(f"beta < 1 required, got {beta}")
    grid = grid if grid is not None else TimeGrid.log_spaced(0.0, 1e4, 200)
    t = grid.nodes
    f = spec.m_function()
    hint = spec.hint
    env = envelope(f, t, hint, samples=256)
    weighted = envelope(f, t, hint, weight=2 * beta, samples=256)
    return _decay_verdict("M2", t, env, -2 * beta, weighted=weighted)


def check_m3(table: TailIntegralTable, gamma: float) -> ConditionEntry:
    """``|P1|`` and ``Phi2`` decay like ``(1+t)^-gamma`` and ``Psi3(0)`` is finite."""
    if not gamma > 0:
        raise DomainError(f"gamma > 0 required, got {gamma}")
    parts = []
    for label, col in (("p1", "p1_env"), ("phi2", "phi2")):
        source = "p1" if col == "p1_env" else col
        forced = _column_problem(table, source)
        if forced == VIOLATED:
            parts.append(ConditionEntry(label, -gamma, np.nan, np.nan, np.inf, VIOLATED,
                                        table.messages.get(source, f"{source} diverges")))
        elif forced == UNAVAILABLE:
            parts.append(_unavailable(label, -gamma, table.messages.get(source, "")))
        else:
            parts.append(_decay_verdict(label, table.t, table.columns[col], -gamma))
    forced = _column_problem(table, "psi3")
    if forced == VIOLATED:
        parts.append(ConditionEntry("psi3_0", np.nan, np.nan, np.nan, np.inf, VIOLATED,
                                    table.messages.get("psi3", "psi3 diverges")))
    elif forced == UNAVAILABLE:
        parts.append(_unavailable("psi3_0", np.nan, table.messages.get("psi3", "")))
    else:
        v = float(table.psi3[0])
        parts.append(ConditionEntry("psi3_0", np.nan, np.nan, np.nan, v,
                                    SATISFIED if np.isfinite(v) else VIOLATED))
    verdict = _combine([p.verdict for p in parts])
    p1 = parts[0]
    return ConditionEntry("M3", -gamma, p1.fitted_exponent, p1.fit_r2, p1.bound_constant,
                          verdict, "", tuple(parts))


def check_relation(params: ConditionParams) -> ConditionEntry:
    """``gamma >= beta`` and ``beta >= (alpha + 1)/2``, strictly when ``alpha = 0``."""
    a, b, g = params.alpha, params.beta, params.gamma
    lower = (a + 1) / 2
    reasons = []
    if not g >= b:
        reasons.append(f"gamma = {g} < beta = {b}")
    if a == 0:
        if not b > lower:
            reasons.append(f"beta = {b} must exceed 1/2 when alpha = 0")
    elif not b >= lower:
        reasons.append(f"beta = {b} < (alpha + 1)/2 = {lower}")
    return ConditionEntry("relation", np.nan, np.nan, np.nan, np.nan,
                          VIOLATED if reasons else SATISFIED, "; ".join(reasons))


def check_sup(table: TailIntegralTable, alpha: float) -> ConditionEntry:
    """Finiteness of ``sup_t (1+t)^alpha Psi3(t)`` over the grid.

    Satisfied when the decay exponent of Psi3 is at most ``-alpha`` (within
    the slope tolerance) or the weighted product is non-increasing beyond
    ``t = 10``.
    """
    forced = _column_problem(table, "psi3")
    if forced == VIOLATED:
        return ConditionEntry("sup", -alpha, np.nan, np.nan, np.inf, VIOLATED,
                              table.messages.get("psi3", "psi3 diverges"))
    if forced == UNAVAILABLE:
        return _unavailable("sup", -alpha, table.messages.get("psi3", ""))
    t = table.t
    psi = table.psi3
    entry = _decay_verdict("sup", t, psi, -alpha)
    if entry.verdict == VIOLATED and np.all(np.isfinite(psi)):
        prod = psi * (1 + t) ** alpha
        tail = prod[t >= FIT_START]
        if len(tail) >= 2 and np.all(np.diff(tail) <= 0):
            entry = ConditionEntry("sup", -alpha, entry.fitted_exponent, entry.fit_r2,
                                   entry.bound_constant, SATISFIED,
                                   "weighted product non-increasing beyond t = 10")
    return entry


def full_report(spec: PotentialSpec, table: TailIntegralTable,
                params: ConditionParams) -> ConditionReport:
    """All conditions for one potential; admissible iff every entry is satisfied."""
    entries = (
        check_m1(table, params.alpha),
        check_m2(spec, params.beta, table.grid),
        check_m3(table, params.gamma),
        check_relation(params),
        check_sup(table, params.alpha),
    )
    verdicts = [e.verdict for e in entries]
    if all(v == SATISFIED for v in verdicts):
        overall = ADMISSIBLE
    elif VIOLATED in verdicts:
        overall = INADMISSIBLE
    else:
        overall = INDETERMINATE
    return ConditionReport(entries, overall, params)
