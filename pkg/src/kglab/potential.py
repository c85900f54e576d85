"""Time-dependent potentials M(t) and their exact tail integrals.

Every potential is an immutable :class:`PotentialSpec`.  Besides the plain
evaluator ``t -> M(t)`` a spec may carry

* ``closed_tails``: exact ``P1(t) = int_t^inf M`` and ``P2(t) = int_t^inf P1``
  when they are known analytically (``inf`` marks a tail that is known to
  diverge).  Tabulated potentials expose the exact tails of their
  interpolant;
* an :class:`OscillationHint` describing the carrier phase ``(1+s)**kappa``
  of oscillatory families, together with *phase forms* of M and P1.

A phase form evaluates a function at the time ``s(u)`` with
``u = 2*pi*nu + x``, but uses the reduced angle ``x`` for every
trigonometric factor.  At integer ``nu`` it equals the function itself, and
for real ``nu`` it is a smooth continuation in ``nu``.  The tail quadrature
relies on both properties.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.interpolate import PchipInterpolator

from .errors import PotentialError

KINDS = ("zero", "scale_invariant", "oscillatory_example", "sum", "tabulated")

TWO_PI = 2.0 * np.pi

# component codes shared with the compiled mode integrator
CODE_ZERO = 0
CODE_SCALE_INVARIANT = 1
CODE_OSCILLATORY = 2
CODE_TABULATED = 3


@dataclass(frozen=True)
class OscillationHint:
    """Carrier phase ``phi(s) = (1+s)**kappa`` of an oscillatory potential."""

    kappa: float

    def phase(self, s):
        return (1.0 + np.asarray(s, dtype=float)) ** self.kappa

    def inverse(self, u):
        return np.asarray(u, dtype=float) ** (1.0 / self.kappa) - 1.0

    def dsdu(self, u):
        """Derivative of the inverse phase map."""
        k = self.kappa
        return np.asarray(u, dtype=float) ** (1.0 / k - 1.0) / k

    def rate(self, s):
        """Local angular frequency ``phi'(s)``."""
        k = self.kappa
        return k * (1.0 + np.asarray(s, dtype=float)) ** (k - 1.0)

    def split(self, s):
        """Period index and reduced angle of the phase at ``s``."""
        u = self.phase(s)
        n = np.floor(u / TWO_PI)
        x = u - TWO_PI * n
        return n, x


class PhasedFunction:
    """Callable ``f(s)`` that also knows its phase form ``f(nu, x)``."""

    def __init__(self, func: Callable, phased: Callable, hint: OscillationHint):
        self.func = func
        self.phased = phased
        self.hint = hint

    def __call__(self, s):
        return self.func(s)


def phase_form(f: Callable, hint: OscillationHint) -> Callable:
    """Phase form of ``f``; plain callables are composed with the inverse phase.

    Composition is only a valid phase form for functions that do not
    oscillate with the hinted carrier.
    """
    if isinstance(f, PhasedFunction) and f.hint == hint:
        return f.phased
    return lambda nu, x: f(hint.inverse(TWO_PI * np.asarray(nu) + x))


@dataclass(frozen=True, eq=False)
class PotentialSpec:
    """Immutable description of a potential family member."""

    kind: str
    params: dict = field(default_factory=dict)
    components: tuple = ()
    samples: Optional[tuple] = None

    # -- evaluation ---------------------------------------------------------

    def __post_init__(self):
        if self.kind == "tabulated":
            t, m = self.samples
            pp = PchipInterpolator(t, m, extrapolate=False)
            object.__setattr__(self, "_pchip", pp)
            object.__setattr__(self, "_anti1", pp.antiderivative(1))
            object.__setattr__(self, "_anti2", pp.antiderivative(2))

    def __call__(self, t):
        return eval_m(self, t)

    @property
    def evaluator(self) -> Callable:
        return lambda t: eval_m(self, t)

    @property
    def support_end(self) -> float:
        """Last time at which M can be nonzero (``inf`` unless tabulated)."""
        if self.kind == "tabulated":
            return float(self.samples[0][-1])
        if self.kind == "sum":
            return max(c.support_end for c in self.components)
        return np.inf

    @property
    def hint(self) -> Optional[OscillationHint]:
        if self.kind == "oscillatory_example":
            return OscillationHint(self.params["kappa"])
        if self.kind == "sum":
            hints = {c.hint for c in self.components if c.hint is not None}
            if len(hints) == 1:
                return hints.pop()
        return None

    @property
    def closed_tails(self) -> dict:
        """Available exact tails as ``{level: callable}``."""
        out = {}
        for level in (1, 2):
            if closed_tail(self, level, 0.0) is not None:
                out[level] = (lambda t, lv=level: closed_tail(self, lv, t))
        return out

    def leaves(self) -> tuple:
        """Non-sum components of the spec."""
        if self.kind == "sum":
            return self.components
        return (self,)

    # -- phase forms --------------------------------------------------------

    def m_function(self):
        """M as a plain or phased callable, depending on the hint."""
        hint = self.hint
        if hint is None:
            return self.evaluator
        forms = [_leaf_phase(c, hint, level=0) for c in self.leaves()]
        return PhasedFunction(self.evaluator, _sum_forms(forms), hint)

    def p1_function(self):
        """Closed-form P1 as a plain or phased callable, or None."""
        if closed_tail(self, 1, 0.0) is None:
            return None
        f = lambda t: closed_tail(self, 1, t)
        hint = self.hint
        if hint is None:
            return f
        forms = [_leaf_phase(c, hint, level=1) for c in self.leaves()]
        return PhasedFunction(f, _sum_forms(forms), hint)

    # -- compiled representation -------------------------------------------

    def compiled(self):
        """Arrays describing M for the compiled mode integrator.

        Returns ``(codes, params, tab_x, tab_c, tab_ptr)``; tabulated
        components store PCHIP breakpoints and cubic coefficients in the
        concatenated ``tab_x``/``tab_c`` arrays, addressed by ``tab_ptr``.
        """
        codes, params, xs, cs, ptr = [], [], [], [], []
        offset = 0
        for c in self.leaves():
            if c.kind == "zero":
                codes.append(CODE_ZERO)
                params.append((0.0, 0.0))
                ptr.append((0, 0))
            elif c.kind == "scale_invariant":
                codes.append(CODE_SCALE_INVARIANT)
                params.append((c.params["mu"], c.params["nu"]))
                ptr.append((0, 0))
            elif c.kind == "oscillatory_example":
                codes.append(CODE_OSCILLATORY)
                params.append((c.params["beta"], c.params["kappa"]))
                ptr.append((0, 0))
            else:
                pp = c._pchip
                codes.append(CODE_TABULATED)
                params.append((0.0, 0.0))
                n = len(pp.x)
                ptr.append((offset, offset + n))
                xs.append(np.asarray(pp.x, dtype=float))
                coef = np.zeros((4, n))
                coef[:, :-1] = pp.c
                cs.append(coef)
                offset += n
        tab_x = np.concatenate(xs) if xs else np.zeros(1)
        tab_c = np.concatenate(cs, axis=1) if cs else np.zeros((4, 1))
        return (np.asarray(codes, dtype=np.int64), np.asarray(params, dtype=float),
                tab_x, np.ascontiguousarray(tab_c), np.asarray(ptr, dtype=np.int64))


# -- construction -------------------------------------------------------------


def make_builtin(kind: str, params: Sequence[float] | dict = ()) -> PotentialSpec:
    """Build a builtin potential and validate its parameters.

    ``params`` may be a mapping with the named parameters or a sequence:
    ``(mu, nu)`` for ``scale_invariant`` and ``(beta, kappa)`` for
    ``oscillatory_example``.
    """
    names = {"zero": (), "scale_invariant": ("mu", "nu"), "oscillatory_example": ("beta", "kappa")}
    if kind not in names:
        raise PotentialError(f"unknown builtin kind {kind!r}; expected one of {sorted(names)}")
    keys = names[kind]
    if isinstance(params, dict):
        unknown = set(params) - set(keys)
        if unknown:
            raise PotentialError(f"unknown parameters for {kind}: {sorted(unknown)}")
        missing = [k for k in keys if k not in params]
        if missing:
            raise PotentialError(f"missing parameters for {kind}: {missing}")
        values = {k: float(params[k]) for k in keys}
    else:
        params = list(params)
        if len(params) != len(keys):
            raise PotentialError(f"{kind} takes {len(keys)} parameters {keys}, got {len(params)}")
        values = {k: float(v) for k, v in zip(keys, params)}
    for k, v in values.items():
        if not np.isfinite(v):
            raise PotentialError(f"parameter {k} must be finite, got {v}")

    if kind == "scale_invariant":
        if values["mu"] < 0:
            raise PotentialError(f"μ ≥ 0 violated: mu = {values['mu']}")
        if values["nu"] < 0:
            raise PotentialError(f"ν ≥ 0 violated: nu = {values['nu']}")
    elif kind == "oscillatory_example":
        beta, kappa = values["beta"], values["kappa"]
        if beta > 0.5:
            raise PotentialError(f"β ≤ 1/2 violated: beta = {beta}")
        if not kappa > 2.0 * (1.0 - beta):
            raise PotentialError(
                f"κ > 2(1−β) violated: kappa = {kappa}, 2(1-beta) = {2.0 * (1.0 - beta)}")
    return PotentialSpec(kind, values)


def tabulated(t: Sequence[float], m: Sequence[float]) -> PotentialSpec:
    """Potential interpolated monotonically through samples, zero past the last one."""
    t = np.asarray(t, dtype=float)
    m = np.asarray(m, dtype=float)
    if t.ndim != 1 or t.shape != m.shape or len(t) < 2:
        raise PotentialError("tabulated samples need matching 1-d t and m arrays of length >= 2")
    if not (np.all(np.isfinite(t)) and np.all(np.isfinite(m))):
        raise PotentialError("tabulated samples must be finite")
    if np.any(np.diff(t) <= 0):
        raise PotentialError("tabulated sample times must be strictly increasing")
    if t[0] != 0.0:
        raise PotentialError(f"tabulated samples must start at t = 0, got {t[0]}")
    t.setflags(write=False)
    m.setflags(write=False)
    return PotentialSpec("tabulated", {}, samples=(t, m))


def sum_potentials(a: PotentialSpec, b: PotentialSpec) -> PotentialSpec:
    """Pointwise sum; nested sums are flattened."""
    return PotentialSpec("sum", {}, components=a.leaves() + b.leaves())


# -- evaluation ---------------------------------------------------------------


def _check_time(t):
    t = np.asarray(t, dtype=float)
    if np.any(t < 0) or np.any(np.isnan(t)):
        raise PotentialError("potential evaluated at negative or NaN time")
    return t


def eval_m(spec: PotentialSpec, t):
    """M(t) for scalar or array ``t >= 0``."""
    t = _check_time(t)
    scalar = t.ndim == 0
    out = _eval_leafwise(spec, t)
    return float(out) if scalar else out


def _eval_leafwise(spec, t):
    if spec.kind == "sum":
        return sum(_eval_leafwise(c, t) for c in spec.components)
    p = spec.params
    if spec.kind == "zero":
        return np.zeros_like(t)
    if spec.kind == "scale_invariant":
        return p["mu"] ** 2 * (1.0 + t) ** (-2.0 * p["nu"])
    if spec.kind == "oscillatory_example":
        beta, kappa = p["beta"], p["kappa"]
        x = 1.0 + t
        ph = x ** kappa
        return (kappa * x ** (-2 * beta) * np.cos(ph)
                + (1 - 2 * beta - kappa) * x ** (-2 * beta - kappa) * np.sin(ph))
    # tabulated
    v = spec._pchip(t)
    return np.where(np.isnan(v), 0.0, v)


def closed_tail(spec: PotentialSpec, level: int, t):
    """Exact P1 (level 1) or P2 (level 2) at ``t``; None when unknown.

    A return value of ``inf`` means the tail is known to diverge.
    """
    if level not in (1, 2):
        raise ValueError("level must be 1 or 2")
    t = _check_time(t)
    scalar = t.ndim == 0
    out = _closed_leafwise(spec, level, t)
    if out is None:
        return None
    return float(out) if scalar else out


def _closed_leafwise(spec, level, t):
    if spec.kind == "sum":
        parts = [_closed_leafwise(c, level, t) for c in spec.components]
        if any(p is None for p in parts):
            return None
        return sum(parts)
    p = spec.params
    if spec.kind == "zero":
        return np.zeros_like(t)
    if spec.kind == "scale_invariant":
        mu2, nu = p["mu"] ** 2, p["nu"]
        if mu2 == 0.0:
            return np.zeros_like(t)
        if level == 1:
            if nu <= 0.5:
                return np.full_like(t, np.inf)
            return mu2 * (1.0 + t) ** (1 - 2 * nu) / (2 * nu - 1)
        if nu <= 1.0:
            return np.full_like(t, np.inf)
        return mu2 * (1.0 + t) ** (2 - 2 * nu) / ((2 * nu - 1) * (2 * nu - 2))
    if spec.kind == "oscillatory_example":
        if level == 2:
            return None
        beta, kappa = p["beta"], p["kappa"]
        x = 1.0 + t
        return -np.sin(x ** kappa) * x ** (1 - 2 * beta - kappa)
    # tabulated: exact tails of the interpolant, which vanishes past the last sample
    end = float(spec.samples[0][-1])
    tc = np.minimum(t, end)
    a1, a2 = spec._anti1, spec._anti2
    p1 = a1(end) - a1(tc)
    if level == 1:
        return p1
    return a1(end) * (end - tc) - (a2(end) - a2(tc))


def _leaf_phase(c: PotentialSpec, hint: OscillationHint, level: int):
    """Phase form of M (level 0) or closed P1 (level 1) for one leaf."""
    if c.kind == "oscillatory_example":
        beta, kappa = c.params["beta"], c.params["kappa"]

        def m_phase(nu, x):
            u = TWO_PI * np.asarray(nu) + x
            xx = u ** (1.0 / kappa)
            return (kappa * xx ** (-2 * beta) * np.cos(x)
                    + (1 - 2 * beta - kappa) * xx ** (-2 * beta - kappa) * np.sin(x))

        def p1_phase(nu, x):
            u = TWO_PI * np.asarray(nu) + x
            return -np.sin(x) * u ** ((1 - 2 * beta - kappa) / kappa)

        return p1_phase if level == 1 else m_phase
    if level == 1:
        return lambda nu, x: closed_tail(c, 1, hint.inverse(TWO_PI * np.asarray(nu) + x))
    return lambda nu, x: eval_m(c, hint.inverse(TWO_PI * np.asarray(nu) + x))


def _sum_forms(forms):
    if len(forms) == 1:
        return forms[0]
    return lambda nu, x: sum(f(nu, x) for f in forms)


def envelope(f: Callable, t, hint: Optional[OscillationHint] = None, weight: float = 0.0,
             samples: int = 64):
    """Maximum of ``|f(s)| (1+s)**weight`` over a window starting at each time.

    With a hint and a phased ``f`` the window is one carrier period, sampled
    through the phase form so that fast carriers are resolved exactly.
    Otherwise the window runs to the next time (the last window copies the
    width of the one before, in ``log(1+t)``).
    """
    t = np.asarray(t, dtype=float)
    x = np.linspace(0.0, 1.0, samples, endpoint=False)
    if hint is not None and isinstance(f, PhasedFunction) and f.hint == hint:
        nu = hint.phase(t) / TWO_PI
        xs = TWO_PI * x
        vals = np.abs(f.phased(nu[:, None], xs[None, :]))
        s = hint.inverse(TWO_PI * nu[:, None] + xs[None, :])
    else:
        lt = np.log1p(t)
        step = np.diff(lt)
        step = np.append(step, step[-1] if len(step) else 0.0)
        s = np.expm1(lt[:, None] + step[:, None] * x[None, :])
        s[:, 0] = t
        vals = np.abs(np.asarray(f(s), dtype=float))
    if weight:
        vals = vals * (1.0 + s) ** weight
    return vals.max(axis=1)
