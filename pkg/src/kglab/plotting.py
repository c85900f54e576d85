"""Figures rendered from the CSV files of an output directory.

Only the ``report`` subcommand imports this module; it selects the Agg
backend so that no display is needed.
"""

from __future__ import annotations

import glob
import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {"figure.figsize": (6.0, 4.0), "figure.dpi": 120, "axes.grid": True,
         "grid.alpha": 0.3, "font.size": 9, "legend.fontsize": 8}


def _read(path):
    return np.genfromtxt(path, delimiter=",", names=True, dtype=None, encoding="utf-8")


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, metadata={"Software": None})
    plt.close(fig)


def plot_gauge(gauge_csv, path):
    d = _read(gauge_csv)
    fig, (ax1, ax2) = plt.subplots(2, 1, sharex=True)
    x = 1 + d["t"]
    ax1.loglog(x, np.abs(d["b"]), label="|b|")
    ax1.loglog(x, np.abs(d["Q2"]), label="|Q2|", lw=0.8)
    ax1.set_ylabel("magnitude")
    ax1.legend()
    ax2.loglog(x, np.abs(d["residual"]) + 1e-300, ".", ms=2)
    ax2.set_ylabel("|b' + b^2 + M|")
    ax2.set_xlabel("1 + t")
    _save(fig, path)


def plot_terms(terms_csv, path):
    d = _read(terms_csv)
    names = [n for n in d.dtype.names if n.startswith("Q") and n[1:].isdigit()]
    fig, ax = plt.subplots()
    x = 1 + d["t"]
    for n in names:
        v = np.abs(d[n])
        good = np.isfinite(v) & (v > 0)
        if good.any():
            ax.loglog(x[good], v[good], lw=0.8, label=n if len(names) <= 10 else None)
    ax.set_xlabel("1 + t")
    ax.set_ylabel("|Q_k|")
    if len(names) <= 10:
        ax.legend(ncol=2)
    _save(fig, path)


def plot_modes(mode_dir, path, T=None, every=4):
    files = sorted(glob.glob(os.path.join(mode_dir, "mode_*.csv")))[::every]
    fig, ax = plt.subplots()
    cmap = plt.get_cmap("viridis")
    for i, f in enumerate(files):
        d = _read(f)
        start = T if T is not None else d["t"][0]
        late = d["t"] >= start
        if not late.any():
            continue
        r = d["e_mod"][late] / d["e_mod"][late][0]
        ax.semilogx(1 + d["t"][late], r, lw=0.7, color=cmap(i / max(1, len(files) - 1)),
                    label=f"xi = {d['xi'][0]:.3g}")
    ax.set_xlabel("1 + t")
    ax.set_ylabel("e_mod(t) / e_mod(T)")
    ax.legend(ncol=2)
    _save(fig, path)


def plot_sweep(summary_csv, path):
    d = np.atleast_1d(_read(summary_csv))
    fig, ax = plt.subplots()
    ok = d["verdict"] != "error"
    ax.semilogx(d["xi"][ok], d["ratio_max"][ok], "o-", ms=3, label="max ratio")
    ax.semilogx(d["xi"][ok], d["ratio_min"][ok], "s-", ms=3, label="min ratio")
    ax.axhline(1.0, color="k", lw=0.5)
    ax.set_xlabel("xi")
    ax.set_ylabel("e_mod(t) / e_mod(T) over t >= T")
    ax.legend()
    _save(fig, path)


def plot_a_eta(a_eta_csv, path):
    d = _read(a_eta_csv)
    fig, (ax1, ax2) = plt.subplots(2, 1, sharex=True)
    x = 1 + d["t"]
    ax1.semilogx(x, d["a"], label="a")
    ax1.semilogx(x, d["eta"], lw=0.7, label="eta")
    ax1.legend()
    good = np.isfinite(d["gap_tail_scaled"])
    if good.any():
        ax2.semilogx(x[good], d["gap_tail_scaled"][good])
    ax2.set_ylabel("scaled gap tail")
    ax2.set_xlabel("1 + t")
    _save(fig, path)


def render_all(out: str) -> list:
    """Render every figure whose data file exists in ``out``; returns the PNG paths."""
    fig_dir = os.path.join(out, "figures")
    os.makedirs(fig_dir, exist_ok=True)
    T = None
    gauge_csv = os.path.join(out, "gauge.csv")
    if os.path.exists(gauge_csv):
        T = float(np.atleast_1d(_read(gauge_csv)["t"])[0])
    jobs = [
        ("gauge.csv", plot_gauge, "gauge.png"),
        ("gauge_terms.csv", plot_terms, "terms.png"),
        ("sweep_summary.csv", plot_sweep, "sweep.png"),
        ("a_eta.csv", plot_a_eta, "a_eta.png"),
    ]
    written = []
    with plt.rc_context(STYLE):
        for src, func, name in jobs:
            p = os.path.join(out, src)
            if os.path.exists(p):
                func(p, os.path.join(fig_dir, name))
                written.append(os.path.join(fig_dir, name))
        mode_dir = os.path.join(out, "modes")
        if glob.glob(os.path.join(mode_dir, "mode_*.csv")):
            plot_modes(mode_dir, os.path.join(fig_dir, "modes.png"), T)
            written.append(os.path.join(fig_dir, "modes.png"))
    return written
