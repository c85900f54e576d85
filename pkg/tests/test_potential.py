import re

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kglab.errors import PotentialError
from kglab.potential import (OscillationHint, closed_tail, eval_m, make_builtin,
                             phase_form, sum_potentials, tabulated)
from kglab.tails import tail_integral

PROBES = np.array([0.0, 0.3, 1.0, 2.5, 7.0, 19.0, 55.0, 140.0, 600.0, 2000.0])


def example_antiderivative(t, beta, kappa):
    """F with F' = M and F(inf) = 0 for the oscillatory family."""
    return np.sin((1 + t) ** kappa) * (1 + t) ** (1 - 2 * beta - kappa)


# -- construction and validation --------------------------------------------------


def test_zero_spec_is_zero():
    z = make_builtin("zero")
    assert eval_m(z, 17.0) == 0.0
    assert np.all(z(PROBES) == 0.0)


def test_scale_invariant_value():
    s = make_builtin("scale_invariant", (0.4, 1.0))
    assert eval_m(s, 1.0) == pytest.approx(0.04, rel=1e-15)


def test_example_value_at_origin():
    s = make_builtin("oscillatory_example", (0.5, 2.0))
    expected = 2 * np.cos(1.0) - 2 * np.sin(1.0)
    assert eval_m(s, 0.0) == pytest.approx(expected, rel=1e-14)
    assert eval_m(s, 0.0) == pytest.approx(-0.602337, abs=1e-6)


def test_example_matches_central_difference():
    beta, kappa = 0.5, 2.0
    s = make_builtin("oscillatory_example", (beta, kappa))
    h = 1e-6
    for t in (0.0 + 2 * h, 0.7, 3.0, 11.0):
        fd = (example_antiderivative(t + h, beta, kappa)
              - example_antiderivative(t - h, beta, kappa)) / (2 * h)
        assert eval_m(s, t) == pytest.approx(fd, abs=1e-7 * (1 + t) ** 2)


@pytest.mark.parametrize("params, fragment", [
    ((0.5, 1.0), "κ > 2(1−β)"),
    ((0.6, 3.0), "β ≤ 1/2"),
])
def test_example_rejects_invalid_parameters(params, fragment):
    with pytest.raises(PotentialError, match=re.escape(fragment)):
        make_builtin("oscillatory_example", params)


def test_rejects_unknown_kind_and_bad_params():
    with pytest.raises(PotentialError):
        make_builtin("gaussian", ())
    with pytest.raises(PotentialError):
        make_builtin("scale_invariant", (-0.1, 1.0))
    with pytest.raises(PotentialError):
        make_builtin("scale_invariant", {"mu": 0.4})
    with pytest.raises(PotentialError):
        make_builtin("scale_invariant", {"mu": 0.4, "nu": 1.0, "x": 2})


def test_negative_time_rejected():
    s = make_builtin("scale_invariant", (0.4, 1.0))
    with pytest.raises(PotentialError):
        eval_m(s, -1.0)


def test_named_and_positional_params_agree():
    a = make_builtin("oscillatory_example", (0.25, 1.6))
    b = make_builtin("oscillatory_example", {"beta": 0.25, "kappa": 1.6})
    assert np.array_equal(a(PROBES), b(PROBES))


# -- closed tails -------------------------------------------------------------------


def test_closed_tail_examples():
    ex = make_builtin("oscillatory_example", (0.5, 2.0))
    assert closed_tail(ex, 1, 0.0) == pytest.approx(-np.sin(1.0), rel=1e-15)
    si = make_builtin("scale_invariant", (0.4, 1.0))
    assert closed_tail(si, 1, 0.0) == pytest.approx(0.16, rel=1e-15)
    z = make_builtin("zero")
    assert closed_tail(z, 2, 123.0) == 0.0


def test_closed_tail_scale_invariant_levels():
    mu, nu = 0.4, 1.5
    si = make_builtin("scale_invariant", (mu, nu))
    t = 3.0
    assert closed_tail(si, 1, t) == pytest.approx(mu ** 2 * (1 + t) ** (1 - 2 * nu) / (2 * nu - 1))
    assert closed_tail(si, 2, t) == pytest.approx(
        mu ** 2 * (1 + t) ** (2 - 2 * nu) / ((2 * nu - 1) * (2 * nu - 2)))
    # P2 diverges for nu = 1 and P1 for nu <= 1/2
    assert closed_tail(make_builtin("scale_invariant", (mu, 1.0)), 2, t) == np.inf
    assert closed_tail(make_builtin("scale_invariant", (mu, 0.5)), 1, t) == np.inf


def test_oscillatory_has_no_closed_second_tail():
    ex = make_builtin("oscillatory_example", (0.5, 2.0))
    assert closed_tail(ex, 2, 1.0) is None
    assert set(ex.closed_tails) == {1}


@pytest.mark.parametrize("kind, params", [
    ("oscillatory_example", (0.5, 2.0)),
    ("oscillatory_example", (0.25, 1.6)),
    ("scale_invariant", (0.4, 1.0)),
])
def test_closed_tail_matches_quadrature(kind, params):
    spec = make_builtin(kind, params)
    f = spec.m_function()
    for t in np.geomspace(1.0, 1001.0, 20) - 1.0:
        value, err = tail_integral(f, t, tol=1e-10)
        assert abs(closed_tail(spec, 1, t) - value) <= max(err, 1e-13)


# -- phase forms --------------------------------------------------------------------


@pytest.mark.parametrize("params", [(0.5, 2.0), (0.25, 1.6), (0.4, 1.3)])
def test_phase_forms_agree_with_direct_evaluation(params):
    spec = make_builtin("oscillatory_example", params)
    hint = spec.hint
    t = np.array([0.0, 0.5, 3.0, 40.0, 900.0])
    n, x = hint.split(t)
    for f in (spec.m_function(), spec.p1_function()):
        assert np.allclose(f.phased(n, x), f(t), rtol=1e-10, atol=1e-15)


def test_hint_round_trip():
    h = OscillationHint(1.6)
    s = np.array([0.0, 1.0, 17.5, 4000.0])
    assert np.allclose(h.inverse(h.phase(s)), s, rtol=1e-13, atol=1e-13)
    n, x = h.split(s)
    assert np.all((x >= 0) & (x < 2 * np.pi))
    assert np.allclose(2 * np.pi * n + x, h.phase(s), rtol=1e-15)


def test_plain_phase_form_composes_inverse():
    h = OscillationHint(2.0)
    f = phase_form(lambda s: (1 + s) ** -2.0, h)
    assert f(3, 1.0) == pytest.approx((2 * np.pi * 3 + 1.0) ** -1.0)


# -- sums ---------------------------------------------------------------------------


def test_sum_with_zero_is_identity():
    ex = make_builtin("oscillatory_example", (0.5, 2.0))
    s = sum_potentials(make_builtin("zero"), ex)
    assert np.array_equal(s(PROBES), ex(PROBES))


def test_sum_componentwise_value():
    si = make_builtin("scale_invariant", (0.4, 1.0))
    ex = make_builtin("oscillatory_example", (0.5, 2.0))
    s = sum_potentials(si, ex)
    assert eval_m(s, 1.0) == pytest.approx(0.04 + eval_m(ex, 1.0), rel=1e-15)


def test_sum_doubles():
    ex = make_builtin("oscillatory_example", (0.25, 1.6))
    s = sum_potentials(ex, ex)
    assert np.allclose(s(PROBES), 2 * ex(PROBES), rtol=1e-15, atol=0)


def test_sum_closed_tails_present_iff_both():
    si = make_builtin("scale_invariant", (0.4, 1.5))
    ex = make_builtin("oscillatory_example", (0.5, 2.0))
    s = sum_potentials(si, ex)
    assert closed_tail(s, 1, 2.0) == pytest.approx(closed_tail(si, 1, 2.0) + closed_tail(ex, 1, 2.0))
    assert closed_tail(s, 2, 2.0) is None
    both = sum_potentials(si, si)
    assert closed_tail(both, 2, 2.0) == pytest.approx(2 * closed_tail(si, 2, 2.0))


def test_sum_hint_requires_unique_carrier():
    a = make_builtin("oscillatory_example", (0.5, 2.0))
    b = make_builtin("oscillatory_example", (0.25, 1.6))
    assert sum_potentials(a, make_builtin("scale_invariant", (0.4, 1.0))).hint == a.hint
    assert sum_potentials(a, b).hint is None


builtin_specs = st.one_of(
    st.just(make_builtin("zero")),
    st.builds(lambda mu, nu: make_builtin("scale_invariant", (mu, nu)),
              st.floats(0.0, 2.0), st.floats(0.0, 3.0)),
    st.builds(lambda beta, extra: make_builtin("oscillatory_example", (beta, 2 * (1 - beta) + extra)),
              st.floats(-1.0, 0.5), st.floats(0.01, 2.0)),
)


@settings(max_examples=60, deadline=None)
@given(builtin_specs, builtin_specs, builtin_specs)
def test_sum_commutative_and_associative(a, b, c):
    ab = sum_potentials(a, b)
    ba = sum_potentials(b, a)
    assert np.allclose(ab(PROBES), ba(PROBES), rtol=1e-15, atol=0)
    left = sum_potentials(ab, c)
    right = sum_potentials(a, sum_potentials(b, c))
    assert np.allclose(left(PROBES), right(PROBES), rtol=4e-16, atol=1e-300)


@settings(max_examples=80, deadline=None)
@given(st.floats(-1.0, 0.5), st.floats(0.01, 3.0), st.floats(0.0, 1e5))
def test_example_envelope_bound(beta, extra, t):
    kappa = 2 * (1 - beta) + extra
    spec = make_builtin("oscillatory_example", (beta, kappa))
    bound = kappa + abs(1 - 2 * beta - kappa)
    assert abs(eval_m(spec, t)) * (1 + t) ** (2 * beta) <= bound * (1 + 1e-12)


# -- tabulated ----------------------------------------------------------------------


def test_tabulated_interpolates_and_vanishes_beyond():
    t = np.linspace(0.0, 10.0, 41)
    spec = tabulated(t, np.exp(-t))
    assert eval_m(spec, 2.5) == pytest.approx(np.exp(-2.5), rel=1e-12)
    assert eval_m(spec, 10.5) == 0.0


def _knotwise(f, knots, order=6):
    """Gauss-Legendre per knot interval; exact for piecewise polynomials of low degree."""
    x, w = np.polynomial.legendre.leggauss(order)
    a, b = knots[:-1, None], knots[1:, None]
    nodes = a + 0.5 * (x + 1) * (b - a)
    return float(np.sum(0.5 * (b - a) * f(nodes) * w))


def test_tabulated_tails_are_exact_for_the_interpolant():
    t = np.linspace(0.0, 10.0, 41)
    spec = tabulated(t, (1 + t) ** -3.0)
    knots = t[t >= 2.0]
    value = _knotwise(lambda s: eval_m(spec, s), knots)
    assert closed_tail(spec, 1, 2.0) == pytest.approx(value, abs=1e-14)
    inner = _knotwise(lambda s: closed_tail(spec, 1, s), knots)
    assert closed_tail(spec, 2, 2.0) == pytest.approx(inner, abs=1e-14)


@pytest.mark.parametrize("t, m", [
    ([0.0, 1.0, 1.0], [1.0, 2.0, 3.0]),
    ([0.5, 1.0], [1.0, 2.0]),
    ([0.0, 1.0], [1.0, np.nan]),
])
def test_tabulated_rejects_bad_samples(t, m):
    with pytest.raises(PotentialError):
        tabulated(t, m)


def test_compiled_layout():
    t = np.linspace(0.0, 4.0, 9)
    spec = sum_potentials(make_builtin("oscillatory_example", (0.5, 2.0)), tabulated(t, t ** 2))
    codes, params, tab_x, tab_c, ptr = spec.compiled()
    assert list(codes) == [2, 3]
    assert params[0].tolist() == [0.5, 2.0]
    assert ptr[1].tolist() == [0, 9]
    assert tab_c.shape == (4, 9)
