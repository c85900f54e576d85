"""Scenario files: a YAML document describing one experiment.

Every section is optional except ``potential``.  Unknown keys are rejected
so that a misspelled exponent cannot silently fall back to a default.

.. code-block:: yaml

    potential:
      kind: oscillatory_example      # zero | scale_invariant | oscillatory_example | tabulated | sum
      params: {beta: 0.5, kappa: 2.0}
    grid: {t_min: 0.0, t_max: 1.0e4, points: 200}
    condition_params: {alpha: -2.0, beta: 0.5, gamma: 2.0}
    gauge: {tol: 1.0e-10, K_max: 40, residual_limit: 1.0e-6}
    sweep:
      xi_min: 0.01
      xi_max: 100.0
      xi_points: 33
      t_end: 1000.0
      ode_tol: 1.0e-10
      ic: {u0: 1.0, u1: 0.0}       # complex values as [re, im]
      weights: gaussian             # or a list with one weight per xi
      block_size: null
    zone: {N_policy: auto, N: null}
    output: out

A tabulated potential reads ``file`` (CSV with header ``t,m``, resolved
relative to the scenario file) or inline lists ``t`` and ``m``.  A sum
lists its parts under ``components``.
"""

from __future__ import annotations

import copy
import os
from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np
import yaml

from .conditions import ConditionParams
from .errors import ConfigError, DomainError, PotentialError
from .potential import PotentialSpec, make_builtin, sum_potentials, tabulated
from .tails import TimeGrid

DEFAULTS = {
    "grid": {"t_min": 0.0, "t_max": 1.0e4, "points": 200},
    "condition_params": {"alpha": 0.0, "beta": 0.6, "gamma": 1.0},
    "gauge": {"tol": 1.0e-10, "K_max": 40, "residual_limit": 1.0e-6},
    "sweep": {"xi_min": 0.01, "xi_max": 100.0, "xi_points": 33, "t_end": 1000.0,
              "ode_tol": 1.0e-10, "ic": {"u0": 1.0, "u1": 0.0}, "weights": "gaussian",
              "block_size": None},
    "zone": {"N_policy": "auto", "N": None},
    "output": "out",
}
TOP_KEYS = ("potential",) + tuple(DEFAULTS)
POTENTIAL_KEYS = ("kind", "params", "file", "t", "m", "components")


@dataclass(frozen=True)
class GridConfig:
    t_min: float
    t_max: float
    points: int

    def build(self) -> TimeGrid:
        return TimeGrid.log_spaced(self.t_min, self.t_max, self.points)


@dataclass(frozen=True)
class GaugeConfig:
    tol: float
    K_max: int
    residual_limit: float


@dataclass(frozen=True)
class SweepConfig:
    xi_min: float
    xi_max: float
    xi_points: int
    t_end: float
    ode_tol: float
    ic: tuple
    weights: Union[str, tuple]
    block_size: Optional[int]

    @property
    def xi(self) -> np.ndarray:
        if self.xi_points == 1:
            return np.array([self.xi_min])
        return np.geomspace(self.xi_min, self.xi_max, self.xi_points)


@dataclass(frozen=True)
class ZonePolicy:
    N_policy: str
    N: Optional[float]

    def value(self, b1: float) -> float:
        if self.N_policy == "explicit":
            return float(self.N)
        return max(1.0, 2.0 * b1) if np.isfinite(b1) else 1.0


@dataclass(frozen=True)
class Scenario:
    potential: PotentialSpec
    grid: GridConfig
    condition_params: ConditionParams
    gauge: GaugeConfig
    sweep: SweepConfig
    zone: ZonePolicy
    output: str
    raw: dict = field(default_factory=dict, repr=False, compare=False)


# -- loading ------------------------------------------------------------------------


def load_config(path, overrides=()) -> Scenario:
    """Read, override and validate a scenario file."""
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from exc
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f" at line {mark.line + 1}, column {mark.column + 1}" if mark else ""
        raise ConfigError(f"{path}: parse error{where}: {getattr(exc, 'problem', exc)}") from exc
    if doc is None:
        doc = {}
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    doc = apply_overrides(doc, overrides)
    return build_scenario(doc, base_dir=os.path.dirname(os.path.abspath(path)))


def apply_overrides(doc: dict, overrides) -> dict:
    """Set dotted keys from ``key=value`` strings; values are parsed as YAML."""
    doc = copy.deepcopy(doc)
    for item in overrides:
        key, sep, value = item.partition("=")
        if not sep or not key:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        try:
            parsed = yaml.safe_load(value)
        except yaml.YAMLError as exc:
            raise ConfigError(f"override {item!r}: cannot parse value") from exc
        node = doc
        parts = key.split(".")
        for p in parts[:-1]:
            if not isinstance(node.get(p, {}), dict):
                raise ConfigError(f"override {key}: {p} is not a section")
            node = node.setdefault(p, {})
        node[parts[-1]] = parsed
    return doc


def _section(doc, name):
    given = doc.get(name)
    default = DEFAULTS[name]
    if given is None:
        return dict(default)
    if not isinstance(given, dict):
        raise ConfigError(f"{name}: expected a mapping, got {type(given).__name__}")
    unknown = sorted(set(given) - set(default))
    if unknown:
        raise ConfigError(f"{name}: unknown keys {unknown}; allowed {sorted(default)}")
    out = dict(default)
    out.update(given)
    return out


def _number(section, key, value, kind=float):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{section}.{key}: expected a number, got {value!r}")
    if kind is int:
        if int(value) != value:
            raise ConfigError(f"{section}.{key}: expected an integer, got {value!r}")
        return int(value)
    value = float(value)
    if not np.isfinite(value):
        raise ConfigError(f"{section}.{key}: must be finite")
    return value


def _complex(key, value):
    if isinstance(value, (list, tuple)) and len(value) == 2:
        return complex(_number("sweep.ic", key, value[0]), _number("sweep.ic", key, value[1]))
    return complex(_number("sweep.ic", key, value))


def build_potential(node, base_dir=".", where="potential") -> PotentialSpec:
    if isinstance(node, str):
        node = {"kind": node}
    if not isinstance(node, dict):
        raise ConfigError(f"{where}: expected a mapping or a kind name")
    unknown = sorted(set(node) - set(POTENTIAL_KEYS))
    if unknown:
        raise ConfigError(f"{where}: unknown keys {unknown}; allowed {list(POTENTIAL_KEYS)}")
    kind = node.get("kind")
    if kind is None:
        raise ConfigError(f"{where}.kind is required")
    try:
        if kind == "tabulated":
            if "file" in node:
                path = os.path.join(base_dir, str(node["file"]))
                try:
                    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
                except OSError as exc:
                    raise ConfigError(f"{where}.file: cannot read {path}") from exc
                except ValueError as exc:
                    raise ConfigError(f"{where}.file: {path} is not a t,m CSV: {exc}") from exc
                t, m = data[:, 0], data[:, 1]
            elif "t" in node and "m" in node:
                t, m = node["t"], node["m"]
            else:
                raise ConfigError(f"{where}: tabulated potentials need file or t and m")
            return tabulated(t, m)
        if kind == "sum":
            parts = node.get("components")
            if not isinstance(parts, list) or len(parts) < 2:
                raise ConfigError(f"{where}.components: a sum needs at least two parts")
            specs = [build_potential(p, base_dir, f"{where}.components[{i}]")
                     for i, p in enumerate(parts)]
            total = specs[0]
            for s in specs[1:]:
                total = sum_potentials(total, s)
            return total
        return make_builtin(kind, node.get("params") or {})
    except PotentialError as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def build_scenario(doc: dict, base_dir: str = ".") -> Scenario:
    """Validate a parsed document and apply defaults."""
    unknown = sorted(set(doc) - set(TOP_KEYS))
    if unknown:
        raise ConfigError(f"unknown top-level keys {unknown}; allowed {list(TOP_KEYS)}")
    if "potential" not in doc:
        raise ConfigError("potential is required")
    potential = build_potential(doc["potential"], base_dir)

    g = _section(doc, "grid")
    grid = GridConfig(_number("grid", "t_min", g["t_min"]), _number("grid", "t_max", g["t_max"]),
                      _number("grid", "points", g["points"], int))
    if not 0 <= grid.t_min < grid.t_max or grid.points < 2:
        raise ConfigError("grid: need 0 <= t_min < t_max and points >= 2")

    c = _section(doc, "condition_params")
    try:
        params = ConditionParams(*(_number("condition_params", k, c[k])
                                   for k in ("alpha", "beta", "gamma")))
    except DomainError as exc:
        raise ConfigError(f"condition_params: {exc}") from exc

    ga = _section(doc, "gauge")
    gauge = GaugeConfig(_number("gauge", "tol", ga["tol"]), _number("gauge", "K_max", ga["K_max"], int),
                        _number("gauge", "residual_limit", ga["residual_limit"]))
    if not gauge.tol > 0 or gauge.K_max < 2 or not gauge.residual_limit > 0:
        raise ConfigError("gauge: need tol > 0, K_max >= 2, residual_limit > 0")

    s = _section(doc, "sweep")
    ic = s["ic"]
    if not isinstance(ic, dict) or set(ic) - {"u0", "u1"}:
        raise ConfigError("sweep.ic: expected a mapping with keys u0 and u1")
    ic = (_complex("u0", ic.get("u0", 1.0)), _complex("u1", ic.get("u1", 0.0)))
    weights = s["weights"]
    if isinstance(weights, list):
        weights = tuple(_number("sweep", "weights", w) for w in weights)
        if any(w < 0 for w in weights):
            raise ConfigError("sweep.weights: must be nonnegative")
    elif weights != "gaussian":
        raise ConfigError("sweep.weights: expected 'gaussian' or a list of numbers")
    block = s["block_size"]
    sweep = SweepConfig(
        _number("sweep", "xi_min", s["xi_min"]), _number("sweep", "xi_max", s["xi_max"]),
        _number("sweep", "xi_points", s["xi_points"], int), _number("sweep", "t_end", s["t_end"]),
        _number("sweep", "ode_tol", s["ode_tol"]), ic, weights,
        None if block is None else _number("sweep", "block_size", block, int))
    if not 0 < sweep.xi_min <= sweep.xi_max or sweep.xi_points < 1:
        raise ConfigError("sweep: need 0 < xi_min <= xi_max and xi_points >= 1")
    if not sweep.t_end > 0 or not sweep.ode_tol > 0:
        raise ConfigError("sweep: need t_end > 0 and ode_tol > 0")
    if sweep.t_end > grid.t_max:
        raise ConfigError(f"sweep.t_end = {sweep.t_end:g} exceeds grid.t_max = {grid.t_max:g}")
    if isinstance(weights, tuple) and len(weights) != sweep.xi_points:
        raise ConfigError(f"sweep.weights: {len(weights)} weights for {sweep.xi_points} modes")
    if sweep.block_size is not None and sweep.block_size < 1:
        raise ConfigError("sweep.block_size: must be positive")

    z = _section(doc, "zone")
    if z["N_policy"] not in ("auto", "explicit"):
        raise ConfigError("zone.N_policy: expected 'auto' or 'explicit'")
    if z["N_policy"] == "explicit":
        if z["N"] is None or not _number("zone", "N", z["N"]) > 0:
            raise ConfigError("zone.N: explicit policy needs N > 0")
    zone = ZonePolicy(z["N_policy"], None if z["N"] is None else _number("zone", "N", z["N"]))

    output = doc.get("output", DEFAULTS["output"])
    if not isinstance(output, str) or not output:
        raise ConfigError("output: expected a directory path")
    return Scenario(potential, grid, params, gauge, sweep, zone, output, raw=doc)
