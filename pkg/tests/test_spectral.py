import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kglab.potential import OscillationHint
from kglab.spectral import SpectralGrid, log_breaks, oscillation_breaks


@pytest.fixture
def sine_grid():
    return SpectralGrid(np.linspace(0.0, 10.0, 21), order=24)


def test_rejects_unsorted_breaks():
    with pytest.raises(ValueError):
        SpectralGrid([0.0, 1.0, 1.0])


def test_cumulative_integrals_of_sine(sine_grid):
    g = sine_grid
    v = g.evaluate(np.sin)
    head = g.cumulative_head(v)
    tail = g.cumulative_tail(v, closure=0.25)
    t = g.nodes
    assert np.allclose(head, 1 - np.cos(t), atol=1e-14)
    assert np.allclose(tail, np.cos(t) - np.cos(10.0) + 0.25, atol=1e-14)


def test_interpolation_is_spectral(sine_grid):
    g = sine_grid
    v = g.evaluate(np.sin)
    t = np.linspace(0.0, 10.0, 1001)
    assert np.allclose(g.interpolate(v, t), np.sin(t), atol=1e-14)
    with pytest.raises(ValueError):
        g.interpolate(v, [10.5])


def test_abs_integrals_with_roots(sine_grid):
    g = sine_grid
    v = g.evaluate(np.sin)
    head, total = g.abs_head(v)
    # int_0^10 |sin| = 6 + (1 - cos(10 - 3 pi))
    exact_total = 6.0 + (1.0 - np.cos(10.0 - 3 * np.pi))
    assert total == pytest.approx(exact_total, abs=1e-13)
    t = np.array([0.5, np.pi, 4.0, 7.7, 9.99])
    exact = np.floor(t / np.pi) * 2 + (1 - np.cos(np.mod(t, np.pi)))
    assert np.allclose(g.abs_head_at(v, t), exact, atol=1e-13)
    nodes = g.nodes.ravel()
    exact_nodes = np.floor(nodes / np.pi) * 2 + (1 - np.cos(np.mod(nodes, np.pi)))
    assert np.allclose(head.ravel(), exact_nodes, atol=1e-13)
    assert np.allclose(g.abs_tail(v).ravel(), exact_total - exact_nodes, atol=1e-13)


@settings(max_examples=40, deadline=None)
@given(st.floats(0.3, 8.0), st.floats(0.0, 6.0))
def test_abs_head_at_is_nondecreasing(freq, shift):
    g = SpectralGrid(np.linspace(0.0, 5.0, 41), order=24)
    v = g.evaluate(lambda s: np.cos(freq * s + shift))
    t = np.linspace(0.0, 5.0, 2001)
    h = g.abs_head_at(v, t)
    assert np.all(np.diff(h) >= -1e-15)


def test_error_estimate_small_for_resolved_function(sine_grid):
    v = sine_grid.evaluate(np.sin)
    assert np.max(sine_grid.error_estimate(v)) < 1e-14


def test_log_breaks_geometric():
    b = log_breaks(0.0, 99.0, ratio=1.1)
    r = (1 + b[1:]) / (1 + b[:-1])
    assert b[0] == 0.0 and b[-1] == pytest.approx(99.0)
    assert np.allclose(r, r[0]) and r[0] <= 1.1


def test_oscillation_breaks_hit_half_periods():
    h = OscillationHint(2.0)
    b = oscillation_breaks(0.0, 10.0, h)
    u = h.phase(b[1:-1]) / np.pi
    near_int = np.abs(u - np.round(u)) < 1e-9
    # every half period in range appears among the breaks
    expected = np.arange(1, int(np.floor(h.phase(10.0) / np.pi)) + 1)
    assert set(expected) <= set(np.round(u[near_int]).astype(int))
    assert np.all(np.diff(b) > 0)
