import csv

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import solve_ivp

from kglab.conditions import fit_exponent
from kglab.errors import DomainError, NoValidStartTime, TruncationFailure
from kglab.gauge import (CSV_FIELDS, PHI_MAX, a_eta_diagnostic, build_gauge, eval_extended,
                         eval_gauge, riccati_residual, select_start_time, theta_map,
                         verify_series_bounds)
from kglab.potential import make_builtin
from kglab.tails import build_tail_table, oracle_simpson

MU = 0.4


def riccati_coefficients(mu, n):
    """c_k of sum_k Q_k = sum_k c_k / (1+t) for M = mu^2 (1+t)^-2."""
    c = [-mu ** 2]
    for k in range(2, n + 1):
        c.append(-sum(c[j - 1] * c[k - j - 1] for j in range(1, k)))
    return np.array(c)


def backward_riccati(spec, t_start, b_start, t_stop, max_step=np.inf):
    sol = solve_ivp(lambda t, y: -y ** 2 - spec.evaluator(t), (t_start, t_stop), [b_start],
                    method="DOP853", rtol=1e-13, atol=1e-18, dense_output=True,
                    max_step=max_step)
    assert sol.success
    return lambda t: sol.sol(t)[0]


@pytest.fixture(scope="module")
def zero_gauge(grid):
    spec = make_builtin("zero")
    return build_gauge(spec, build_tail_table(spec, grid, 1e-10))


# -- zero potential ---------------------------------------------------------------------


def test_zero_potential_is_trivial(zero_gauge, grid):
    g = zero_gauge
    assert g.T == grid.start
    assert g.K == 2
    assert np.all(g.Q_tables == 0) and np.all(g.b == 0)
    assert g.residual_sup == 0.0
    assert eval_gauge(g, 17.0) == (0.0, 0.0)
    assert riccati_residual(g, 3.0) == 0.0
    t = np.array([0.0, 1.5, 40.0])
    assert np.allclose(theta_map(g, t), t - g.T, atol=1e-13)
    ae = a_eta_diagnostic(g, t, alpha=-1.0)
    assert np.all(ae.a == 1.0) and np.all(ae.eta == 1.0)
    assert np.all(ae.gap_head == 0) and np.all(ae.gap_tail == 0)
    report = verify_series_bounds(g)
    assert report.ok
    assert (report.b0, report.b1, report.b2) == (0.0, 0.0, 0.0)


# -- closed-form gauge ------------------------------------------------------------------


def test_coefficients_sum_to_quadratic_root():
    c = riccati_coefficients(MU, 80)
    S = (-1 + np.sqrt(1 - 4 * MU ** 2)) / 2
    assert S == pytest.approx(-0.2, abs=1e-15)
    assert c.sum() == pytest.approx(S, rel=1e-14)


def test_scale_invariant_matches_closed_form(scale_invariant_gauge):
    g = scale_invariant_gauge
    assert g.T == 0.0 and g.sigma == -1
    t = np.geomspace(1.0, 1e4, 50) - 1.0
    b, _ = eval_gauge(g, t)
    assert np.max(np.abs(b * (1 + t) / 0.2 - 1)) <= 1e-8
    assert abs(eval_gauge(g, 0.0)[0] - 0.2) <= 1e-8


def test_scale_invariant_terms_follow_coefficients(scale_invariant_gauge):
    g = scale_invariant_gauge
    c = riccati_coefficients(MU, g.K)
    t = g.t[g.t <= 100]
    for k in (1, 2, 3, 8):
        assert np.allclose(g.Q_tables[k - 1, :len(t)] * (1 + t), c[k - 1], rtol=1e-9, atol=1e-16)


def test_scale_invariant_against_backward_riccati(scale_invariant_gauge):
    spec = scale_invariant_gauge.spec
    S = (-1 + np.sqrt(1 - 4 * MU ** 2)) / 2
    t_far = 1e6
    oracle = backward_riccati(spec, t_far, -S / (1 + t_far), 0.0)
    t = np.geomspace(1.0, 1e4, 50) - 1.0
    b, _ = eval_gauge(scale_invariant_gauge, t)
    assert np.allclose(b, oracle(t), rtol=1e-8, atol=0)


def test_scale_invariant_eval_and_residual(scale_invariant_gauge):
    b, bp = eval_gauge(scale_invariant_gauge, 4.0)
    assert b == pytest.approx(0.04, rel=1e-8)
    assert bp == pytest.approx(-0.008, rel=1e-8)
    assert abs(riccati_residual(scale_invariant_gauge, 10.0)) <= 1e-6
    assert scale_invariant_gauge.residual_sup <= 1e-6


def test_scale_invariant_without_start_selection_fails(grid):
    spec = make_builtin("scale_invariant", (MU, 1.0))
    table = build_tail_table(spec, grid, 1e-10)
    with pytest.raises(NoValidStartTime):
        select_start_time(table)
    with pytest.raises(NoValidStartTime):
        build_gauge(spec, table)


def test_theta_closed_form(scale_invariant_gauge):
    exact = (2 ** 0.6 - 1) / 0.6
    # the quoted six-digit value is truncated, not rounded
    assert exact == pytest.approx(0.859526, abs=2e-6)
    simpson = oracle_simpson(lambda s: (1 + s) ** -0.4, 0.0, 1.0, 1000)
    assert simpson == pytest.approx(exact, abs=1e-12)
    assert theta_map(scale_invariant_gauge, 1.0) == pytest.approx(exact, abs=1e-9)


def test_truncation_failure_carries_partial(scale_invariant_gauge):
    spec = scale_invariant_gauge.spec
    table = build_tail_table(spec, scale_invariant_gauge.grid, 1e-10)
    with pytest.raises(TruncationFailure) as info:
        build_gauge(spec, table, select_start=False, K_max=5)
    partial = info.value.partial
    assert partial.K == 5
    c = riccati_coefficients(MU, 5)
    assert partial.b[0] == pytest.approx(-c.sum(), rel=1e-9)


# -- the example -------------------------------------------------------------------------


def test_example_start_time(example_gauge, example_table):
    g = example_gauge
    assert g.T == select_start_time(example_table)
    assert np.isfinite(g.T) and g.T > 0
    assert g.phi[0] <= PHI_MAX
    i = np.searchsorted(example_table.t, g.T)
    assert abs(example_table.p2[i]) <= 1
    # every node before T violates one of the inequalities somewhere later or there
    assert example_table.psi3[i - 1] > PHI_MAX or abs(example_table.p2[i - 1]) > 1


def test_example_series_invariants(example_gauge):
    g = example_gauge
    near = g.t <= g.t_g
    assert np.all(g.Q_tables[1] <= 0)
    assert np.all(g.phi >= 0) and np.all(np.diff(g.phi) <= 0)
    assert np.all(np.isfinite(g.Q_tables[:, near]))
    assert g.residual_sup <= 1e-6


def test_example_majorant_contracts(example_gauge):
    g = example_gauge
    ratio = 4 * np.sqrt(g.phi[0])
    assert ratio <= 4 / 36 + 1e-15
    observed = np.abs(g.Q_tables[1:, 0])
    geometric = abs(g.Q_tables[1, 0]) * 4 * ratio ** np.arange(g.K - 1)
    assert np.all(observed <= geometric * (1 + 1e-9))
    assert g.majorant[-1] < g.tol <= g.majorant[-2]


def test_example_residual_off_grid(example_gauge, rng):
    g = example_gauge
    t = rng.uniform(g.T, 1e3, 500)
    assert np.max(np.abs(riccati_residual(g, t))) <= 1e-6


def test_example_against_backward_riccati(example_gauge):
    g = example_gauge
    t_start = 60.0
    oracle = backward_riccati(g.spec, t_start, eval_gauge(g, t_start)[0], g.T, max_step=0.01)
    t = np.linspace(g.T, t_start, 300)
    assert np.max(np.abs(oracle(t) - eval_gauge(g, t)[0])) <= 1e-10


def test_example_far_form_is_continuous(example_gauge):
    g = example_gauge
    eps = 1e-9 * g.t_g
    left, right = eval_gauge(g, np.array([g.t_g - eps, g.t_g + eps]))[0]
    slope = eval_gauge(g, g.t_g)[1]
    assert abs(right - left - 2 * eps * slope) <= 1e-12


def test_domain_errors(example_gauge):
    g = example_gauge
    for f in (lambda t: eval_gauge(g, t), lambda t: theta_map(g, t),
              lambda t: a_eta_diagnostic(g, t)):
        with pytest.raises(DomainError):
            f(g.T - 1)
    assert np.all(eval_extended(g, [0.0, g.T / 2]) == g.b[0])


def test_nonhinted_gauge_ends_at_grid(scale_invariant_gauge):
    with pytest.raises(DomainError):
        eval_gauge(scale_invariant_gauge, 2e4)


# -- bounds -----------------------------------------------------------------------------


def test_example_series_bounds(example_gauge):
    report = verify_series_bounds(example_gauge)
    assert report.ok, report.violations
    assert report.higher_ratio <= 0.5
    assert report.sum_ratio <= 1.5
    assert report.b_bound_ratio <= 1.0
    assert np.isfinite([report.b0, report.b1, report.b2]).all()


def test_decay_constants_hold_off_grid(example_gauge, rng):
    g = example_gauge
    t = rng.uniform(g.T, 1e3, 50)
    b, bp = eval_gauge(g, t)
    slack = 1 + 1e-6
    assert np.all(np.abs(b) * (1 + t) ** g.gamma <= g.b1 * slack)
    assert np.all(np.abs(bp) * (1 + t) ** (2 * g.beta) <= g.b2 * slack)


def test_scale_invariant_bounds_flag_missing_start_time(scale_invariant_gauge):
    report = verify_series_bounds(scale_invariant_gauge)
    assert not report.ok
    assert any("b0" in v for v in report.violations)


# -- theta and a/eta --------------------------------------------------------------------


def test_theta_bracketing(example_gauge):
    g = example_gauge
    th = theta_map(g, g.t)
    dt = g.t - g.T
    assert np.all(th >= np.exp(-2 * g.b0) * dt - 1e-12)
    assert np.all(th <= np.exp(2 * g.b0) * dt + 1e-12)


@settings(max_examples=10, deadline=None)
@given(st.floats(0.0, 1.0), st.floats(0.0, 1.0))
def test_theta_monotone(example_gauge, u, v):
    g = example_gauge
    lo, hi = sorted((u, v))
    if hi - lo < 1e-6:
        return
    span = np.log1p(1e3) - np.log1p(g.T)
    t1, t2 = np.expm1(np.log1p(g.T) + span * np.array([lo, hi]))
    assert theta_map(g, t2) > theta_map(g, t1)


def test_eta_monotone_and_bracketed(example_gauge):
    g = example_gauge
    ae = a_eta_diagnostic(g, g.t, alpha=-2.0)
    assert ae.bracketed
    assert np.all(np.diff(ae.eta) >= -1e-14)
    assert np.all(np.diff(ae.gap_head) >= -1e-14)


def test_gap_tail_decays_like_alpha(example_gauge):
    g = example_gauge
    t = g.t[(g.t >= g.T) & (g.t <= 1e3)]
    ae = a_eta_diagnostic(g, t, alpha=-2.0)
    weighted = ae.gap_tail * (1 + t) ** 2
    assert np.all(np.isfinite(weighted))
    slope, _ = fit_exponent(t[t >= 10], weighted[t >= 10])
    assert slope <= 0.05
    assert a_eta_diagnostic(g, t[:3], alpha=0.5).gap_tail is None


# -- export -----------------------------------------------------------------------------


def test_gauge_csv(example_gauge, tmp_path):
    path = tmp_path / "gauge.csv"
    example_gauge.to_csv(path, per_k=True)
    with open(path) as fh:
        rows = list(csv.DictReader(fh))
    assert list(rows[0])[:6] == list(CSV_FIELDS)
    assert f"Q{example_gauge.K}" in rows[0]
    assert len(rows) == len(example_gauge.t)
    assert float(rows[0]["t"]) == example_gauge.T
