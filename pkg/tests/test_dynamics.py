import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from dydiff.dynamics import MIN_GAMMA_BAR, dynamics, dynamics_closed_form, inverse_dynamics

finite = st.floats(-1e3, 1e3, allow_nan=False)


@given(arrays(np.float64, st.tuples(st.integers(1, 40), st.integers(1, 3)), elements=finite),
       st.floats(0.01, 1.0))
@settings(max_examples=200, deadline=None)
def test_round_trip(x, g):
    back = inverse_dynamics(dynamics(x, g), g)
    scale = max(1.0, float(np.abs(x).max()))
    assert np.max(np.abs(back - x)) <= 1e-9 * scale * x.shape[0]


@given(arrays(np.float64, st.integers(1, 25), elements=finite), st.floats(0.05, 1.0))
@settings(max_examples=100, deadline=None)
def test_matches_explicit_sum(x, g):
    np.testing.assert_allclose(dynamics(x, g), dynamics_closed_form(x, g), rtol=1e-10, atol=1e-9)


@given(arrays(np.float64, st.integers(1, 30), elements=finite))
def test_gamma_one_is_identity(x):
    assert np.array_equal(dynamics(x, 1.0), x)
    assert np.array_equal(inverse_dynamics(x, 1.0), x)


@given(arrays(np.float64, st.integers(1, 20), elements=finite), arrays(np.float64, st.integers(1, 20), elements=finite),
       st.floats(-3, 3), st.floats(0.05, 1.0))
def test_linear(x, y, c, g):
    n = min(len(x), len(y))
    x, y = x[:n], y[:n]
    lhs = dynamics(x + c * y, g)
    rhs = dynamics(x, g) + c * dynamics(y, g)
    np.testing.assert_allclose(lhs, rhs, rtol=1e-9, atol=1e-7)


def test_first_state_is_untouched():
    x = np.arange(6.0)
    assert dynamics(x, 0.3)[0] == 0.0 and inverse_dynamics(x, 0.3)[0] == 0.0


def test_small_hand_example():
    # d = [1, sqrt(.64)*2 + sqrt(.36)*1] = [1, 2.2]
    np.testing.assert_allclose(dynamics([1.0, 2.0], 0.64), [1.0, 2.2], rtol=1e-15)


def test_batched_axis_and_per_row_gamma():
    rng = np.random.default_rng(0)
    x = rng.standard_normal((4, 7, 3))
    g = np.array([0.2, 0.5, 0.9, 1.0])
    out = dynamics(x, g, axis=1)
    for b in range(4):
        np.testing.assert_allclose(out[b], dynamics(x[b], g[b]), rtol=1e-15)
    np.testing.assert_allclose(inverse_dynamics(out, g, axis=1), x, atol=1e-12)


def test_errors():
    with pytest.raises(ValueError):
        dynamics(np.zeros(0), 0.5)
    for bad in (0.0, -0.1, 1.1, np.nan):
        with pytest.raises(ValueError):
            dynamics(np.ones(3), bad)
    with pytest.raises(ValueError):
        inverse_dynamics(np.ones(3), MIN_GAMMA_BAR / 2)
    # the forward map is fine with tiny gamma_bar
    assert np.all(np.isfinite(dynamics(np.ones(3), MIN_GAMMA_BAR / 2)))
