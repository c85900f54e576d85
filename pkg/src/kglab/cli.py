"""Command-line front end: ``kglab {conditions,gauge,simulate,verify,report}``.

Exit status is 0 when every verdict of the subcommand passes, 2 when a
verdict fails and 1 on operational errors (bad config, unreadable files).
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from typing import Optional

import numpy as np

from . import modes
from .conditions import ADMISSIBLE, full_report
from .errors import (ConfigError, DivergenceError, DomainError, KGLabError, NoValidStartTime,
                     TruncationFailure)
from .gauge import a_eta_diagnostic, build_gauge, verify_series_bounds
from .scenario import Scenario, load_config
from .tails import build_tail_table

log = logging.getLogger("kglab")

EXIT_PASS, EXIT_ERROR, EXIT_FAIL = 0, 1, 2
# failures of the mathematics rather than of the run
VERDICT_ERRORS = (NoValidStartTime, TruncationFailure, DivergenceError)
A_ETA_HORIZON = 1e3


def _num(v):
    """JSON-safe float: non-finite values become strings."""
    if v is None:
        return None
    v = float(v)
    return v if np.isfinite(v) else str(v)


class Pipeline:
    """Lazily computed stages of one scenario; files are written by :meth:`write`."""

    def __init__(self, scenario: Scenario, out: str):
        self.sc = scenario
        self.out = out
        self.grid = scenario.grid.build()
        self._table = None
        self._report = None
        self._series = None
        self._gauge_error = None
        self._results = None
        self.verdict = {"scenario": scenario.raw}

    # -- stages -----------------------------------------------------------------

    def table(self):
        if self._table is None:
            self._table = build_tail_table(self.sc.potential, self.grid, self.sc.gauge.tol)
        return self._table

    def conditions(self):
        if self._report is None:
            self._report = full_report(self.sc.potential, self.table(), self.sc.condition_params)
            r = self._report
            self.verdict["conditions"] = {
                "overall": r.overall,
                "entries": [{"name": row["condition"],
                             "exponent_demanded": _num(row["exponent_demanded"]),
                             "exponent_fitted": _num(row["exponent_fitted"]),
                             "r2": _num(row["r2"]), "bound_constant": _num(row["bound_constant"]),
                             "verdict": row["verdict"]} for row in r.rows()],
                "table_status": dict(self.table().status),
                "table_messages": {k: v for k, v in self.table().messages.items() if v},
            }
        return self._report

    def series(self):
        """The gauge, or ``None`` when its construction failed for mathematical reasons."""
        if self._series is None and self._gauge_error is None:
            p = self.sc.condition_params
            try:
                self._series = build_gauge(self.sc.potential, self.table(), tol=self.sc.gauge.tol,
                                           K_max=self.sc.gauge.K_max, beta=p.beta, gamma=p.gamma)
            except VERDICT_ERRORS + (DomainError,) as exc:
                self._gauge_error = f"{type(exc).__name__}: {exc}"
                self.verdict["gauge"] = {"status": "failed", "error": self._gauge_error}
                return None
            s = self._series
            bounds = verify_series_bounds(s)
            limit = self.sc.gauge.residual_limit
            self._bounds = bounds
            self.verdict["gauge"] = {
                "status": "ok", "T": _num(s.T), "K": s.K, "t_g": _num(s.t_g),
                "horizon": _num(s.horizon), "tol": _num(s.tol),
                "residual_sup": _num(s.residual_sup), "residual_limit": _num(limit),
                "residual_pass": bool(s.residual_sup <= limit),
                "b0": _num(s.b0), "b1": _num(s.b1), "b2": _num(s.b2),
                "series_bounds": {"majorant_ratio": _num(bounds.majorant_ratio),
                                 "sum_ratio": _num(bounds.sum_ratio),
                                 "higher_ratio": _num(bounds.higher_ratio),
                                 "b_bound_ratio": _num(bounds.b_bound_ratio),
                                 "nodes_checked": bounds.nodes_checked,
                                 "violations": [str(v) for v in bounds.violations],
                                 "pass": bool(bounds.ok)},
                "messages": list(s.messages),
            }
        return self._series

    def gauge_passed(self) -> bool:
        g = self.verdict.get("gauge", {})
        return g.get("status") == "ok" and g["residual_pass"] and g["series_bounds"]["pass"]

    def zone(self, series):
        return modes.ZoneConfig(self.sc.condition_params.alpha, self.sc.zone.value(series.b1),
                                series.T)

    def sweep(self):
        if self._results is None:
            series = self.series()
            if series is None:
                self.verdict["sweep"] = {"status": "skipped", "error": self._gauge_error}
                return None
            sw = self.sc.sweep
            xi = sw.xi
            zone = self.zone(series)
            t_end = min(sw.t_end, series.horizon)
            self._results = modes.sweep_modes(self.sc.potential, series, xi, sw.ic, t_end,
                                              sw.ode_tol, zone, block_size=sw.block_size)
            self._summarize(series, zone)
        return self._results

    def _summarize(self, series, zone):
        rs = self._results
        sw = self.sc.sweep
        weights = modes.gaussian_weights(sw.xi) if sw.weights == "gaussian" else np.array(sw.weights)
        per_mode = []
        for r in rs:
            entry = {"xi": _num(r.xi), "t_xi": _num(r.t_xi), "steps": r.steps, "error": r.error}
            if r.ratio is not None:
                entry.update(ratio_min=_num(r.ratio.ratio_min), ratio_max=_num(r.ratio.ratio_max),
                             slope=_num(r.ratio.slope), C=_num(r.ratio.C),
                             ratio_pass=r.ratio.passed, K0=_num(r.K0), C_prime=_num(r.C_prime),
                             zone_constants={k: _num(v) for k, v in r.zone_constants.items()})
            else:
                entry["ratio_pass"] = False
            per_mode.append(entry)
        ok = [r for r in rs if r.ok and r.ratio is not None]
        k0_bound = modes.initial_segment_bound(self.sc.potential, series.T)
        k0_max = max((r.K0 for r in ok), default=np.nan)
        total = {}
        if len(ok) == len(rs):
            e0 = modes.total_energy(rs, weights, 0.0, which="e_kg1")
            times = np.unique(np.concatenate([r.t for r in rs]))
            values = np.array([modes.total_energy(rs, weights, t) for t in times])
            total = {"e_kg1_at_0": _num(e0), "sup_e_mod": _num(values.max()),
                     "constant": _num(values.max() / e0) if e0 > 0 else None}
        C = modes.aggregate_constant(rs)
        self.verdict["sweep"] = {
            "status": "ok",
            "zone": {"alpha": zone.alpha, "N": _num(zone.N), "T": _num(zone.T)},
            "t_end": _num(min(sw.t_end, series.horizon)),
            "modes": per_mode,
            "aggregate_C": _num(C),
            "ratio_pass": bool(all(e["ratio_pass"] for e in per_mode)),
            "K0_max": _num(k0_max), "K0_bound": _num(k0_bound),
            "K0_pass": bool(np.isfinite(k0_max) and k0_max <= k0_bound * 1.01),
            "C_prime": _num(max((r.C_prime for r in ok), default=np.nan)),
            "total_energy": total,
        }

    def a_eta(self):
        series = self.series()
        if series is None:
            return None
        hi = min(A_ETA_HORIZON, series.horizon)
        t = self.grid.nodes[(self.grid.nodes >= series.T) & (self.grid.nodes <= hi)]
        if len(t) < 2:
            return None
        alpha = self.sc.condition_params.alpha
        try:
            d = a_eta_diagnostic(series, t, alpha)
        except DomainError as exc:
            self.verdict["a_eta"] = {"status": "unavailable", "error": str(exc)}
            return None
        entry = {"status": "ok", "bracketed": d.bracketed}
        scaled = None
        if d.gap_tail is not None:
            scaled = d.gap_tail * (1 + t) ** (-alpha)
            pos = scaled > 0
            slope = (float(np.polyfit(np.log1p(t[pos]), np.log(scaled[pos]), 1)[0])
                     if pos.sum() >= 2 else 0.0)
            entry.update(scaled_max=_num(np.max(scaled)), scaled_min=_num(np.min(scaled)),
                         slope=_num(slope), slope_pass=bool(slope <= 0.05))
        self.verdict["a_eta"] = entry
        self._a_eta = (t, d, scaled)
        return self._a_eta

    # -- output -----------------------------------------------------------------

    def write(self):
        os.makedirs(self.out, exist_ok=True)
        if self._table is not None:
            self._table.to_csv(os.path.join(self.out, "tails.csv"))
        if self._report is not None:
            self._report.to_csv(os.path.join(self.out, "conditions.csv"))
        if self._series is not None:
            self._series.to_csv(os.path.join(self.out, "gauge.csv"))
            self._series.to_csv(os.path.join(self.out, "gauge_terms.csv"), per_k=True)
            _write_bounds(self.verdict["gauge"], os.path.join(self.out, "bounds.csv"))
        if self._results is not None:
            mdir = os.path.join(self.out, "modes")
            os.makedirs(mdir, exist_ok=True)
            for i, r in enumerate(self._results):
                if r.ok:
                    r.to_csv(os.path.join(mdir, f"mode_{i:03d}.csv"))
            modes.write_summary(self._results, os.path.join(self.out, "sweep_summary.csv"))
        if getattr(self, "_a_eta", None) is not None:
            t, d, scaled = self._a_eta
            with open(os.path.join(self.out, "a_eta.csv"), "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(["t", "a", "eta", "gap_head", "gap_tail", "gap_tail_scaled"])
                for i in range(len(t)):
                    tail = d.gap_tail[i] if d.gap_tail is not None else np.nan
                    sc = scaled[i] if scaled is not None else np.nan
                    w.writerow([repr(float(v)) for v in (t[i], d.a[i], d.eta[i], d.gap_head[i],
                                                         tail, sc)])

    def write_verdict(self, passed: bool):
        self.verdict["pass"] = bool(passed)
        with open(os.path.join(self.out, "verdict.json"), "w") as fh:
            json.dump(self.verdict, fh, indent=2, sort_keys=True)
            fh.write("\n")


def _write_bounds(g, path):
    rows = [("T", g["T"]), ("K", g["K"]), ("t_g", g["t_g"]), ("residual_sup", g["residual_sup"]),
            ("b0", g["b0"]), ("b1", g["b1"]), ("b2", g["b2"])]
    rows += [(k, v) for k, v in g["series_bounds"].items() if k not in ("violations",)]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["quantity", "value"])
        w.writerows(rows)


# -- subcommands -------------------------------------------------------------------


def cmd_conditions(p: Pipeline):
    report = p.conditions()
    p.write()
    for row in report.rows():
        print(f"{row['condition']:<12} {row['verdict']}")
    for name, msg in p.verdict["conditions"]["table_messages"].items():
        print(f"note: {name}: {msg}")
    print(f"overall: {report.overall}")
    return report.overall == ADMISSIBLE


def cmd_gauge(p: Pipeline):
    series = p.series()
    p.write()
    g = p.verdict["gauge"]
    if series is None:
        print(f"gauge failed: {g['error']}")
        return False
    print(f"T = {g['T']:.6g}  K = {g['K']}  residual_sup = {g['residual_sup']:.3g}"
          f"  series bounds {'pass' if g['series_bounds']['pass'] else 'fail'}")
    return p.gauge_passed()


def cmd_simulate(p: Pipeline):
    results = p.sweep()
    p.write()
    if results is None:
        print(f"simulation skipped: {p.verdict['sweep']['error']}")
        return False
    s = p.verdict["sweep"]
    print(f"{len(results)} modes, aggregate C = {s['aggregate_C']}, "
          f"energy ratios {'pass' if s['ratio_pass'] else 'fail'}")
    return s["ratio_pass"]


def cmd_verify(p: Pipeline):
    report = p.conditions()
    p.series()
    p.sweep()
    p.a_eta()
    p.write()
    checks = {"conditions": report.overall == ADMISSIBLE, "gauge": p.gauge_passed()}
    s = p.verdict.get("sweep", {})
    checks["energy_ratio"] = s.get("status") == "ok" and s["ratio_pass"]
    checks["initial_segment"] = s.get("status") == "ok" and s["K0_pass"]
    p.verdict["verdicts"] = checks
    passed = all(checks.values())
    p.write_verdict(passed)
    for k, v in checks.items():
        print(f"{k:<16} {'pass' if v else 'FAIL'}")
    if "error" in p.verdict.get("gauge", {}):
        print(f"gauge: {p.verdict['gauge']['error']}")
    return passed


def cmd_report(p: Pipeline):
    passed = cmd_verify(p)
    text = summary_text(p.verdict)
    with open(os.path.join(p.out, "summary.txt"), "w") as fh:
        fh.write(text)
    from . import plotting
    plotting.render_all(p.out)
    print(text, end="")
    return passed


def summary_text(v: dict) -> str:
    lines = []
    c = v.get("conditions", {})
    lines.append(f"conditions: {c.get('overall')}")
    for e in c.get("entries", []):
        lines.append(f"  {e['name']:<12} demanded {e['exponent_demanded']!s:<10} "
                     f"fitted {e['exponent_fitted']!s:<22} {e['verdict']}")
    g = v.get("gauge", {})
    if g.get("status") == "ok":
        lines.append(f"gauge: T = {g['T']:.6g}, K = {g['K']}, t_g = {g['t_g']:.6g}, "
                     f"residual_sup = {g['residual_sup']!s}")
        lines.append(f"  b0 = {g['b0']!s}, b1 = {g['b1']!s}, b2 = {g['b2']!s}, "
                     f"series bounds {'pass' if g['series_bounds']['pass'] else 'fail'}")
    elif g:
        lines.append(f"gauge: {g.get('error')}")
    s = v.get("sweep", {})
    if s.get("status") == "ok":
        lines.append(f"modes: {len(s['modes'])}, aggregate C = {s['aggregate_C']!s}, "
                     f"energy ratios {'pass' if s['ratio_pass'] else 'fail'}")
        lines.append(f"  K0 max = {s['K0_max']!s} (bound {s['K0_bound']!s}), "
                     f"C' = {s['C_prime']!s}")
        if s["total_energy"]:
            lines.append(f"  total e_mod / total e_kg(0; 1) <= {s['total_energy']['constant']!s}")
    a = v.get("a_eta", {})
    if a.get("status") == "ok" and "slope" in a:
        lines.append(f"a-eta gap x (1+t)^-alpha: [{a['scaled_min']!s}, {a['scaled_max']!s}], "
                     f"slope {a['slope']!s}")
    lines.append(f"verdict: {'pass' if v.get('pass') else 'FAIL'}")
    return "\n".join(lines) + "\n"


COMMANDS = {"conditions": cmd_conditions, "gauge": cmd_gauge, "simulate": cmd_simulate,
            "verify": cmd_verify, "report": cmd_report}


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, metavar="PATH", help="scenario YAML file")
    common.add_argument("--out", metavar="DIR", help="output directory (overrides the scenario)")
    common.add_argument("--override", action="append", default=[], metavar="KEY=VALUE",
                        help="set a dotted scenario key; repeatable")
    common.add_argument("-v", "--verbose", action="store_true")
    parser = argparse.ArgumentParser(prog="kglab", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {"conditions": "check the decay and cancellation conditions",
             "gauge": "build the Riccati gauge and check its bounds",
             "simulate": "integrate a sweep of Fourier modes",
             "verify": "run the full pipeline and write verdict.json",
             "report": "verify, then write a text summary and figures"}
    for name in COMMANDS:
        sub.add_parser(name, parents=[common], help=helps[name])
    return parser


def main(argv: Optional[list] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        scenario = load_config(args.config, args.override)
        out = args.out or scenario.output
        pipeline = Pipeline(scenario, out)
        passed = COMMANDS[args.command](pipeline)
    except (ConfigError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except KGLabError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_ERROR
    return EXIT_PASS if passed else EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
