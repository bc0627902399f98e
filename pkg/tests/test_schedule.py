import math

import numpy as np
import pytest

from dydiff.schedule import (
    Schedule,
    build_schedule,
    cosine_alpha_bar,
    ddpm_sigma,
    gamma_variant_timegrad,
    linear_beta_alpha_bar,
)


def test_linear_alpha_bar_matches_running_product():
    T = 50
    betas = [1e-4 + (0.02 - 1e-4) * i / (T - 1) for i in range(T)]
    prod, expect = 1.0, [1.0]
    for b in betas:
        prod *= 1 - b
        expect.append(prod)
    np.testing.assert_allclose(linear_beta_alpha_bar(T), expect, rtol=1e-14)


def test_cosine_alpha_bar_unclipped_steps_follow_the_cosine_ratio():
    T, s = 100, 0.008
    f = lambda t: math.cos((t / T + s) / (1 + s) * math.pi / 2) ** 2
    ab = cosine_alpha_bar(T)
    for t in (1, 10, 50, 90):
        assert ab[t] == pytest.approx(f(t) / f(0), rel=1e-12)
    assert np.all(np.diff(ab) < 0)


def test_default_gamma_rule_everywhere():
    sch = build_schedule(1000, "linear", eta=0.5)
    np.testing.assert_array_equal(sch.gamma_bar, 0.5 * sch.alpha_bar + 0.5)
    assert sch.T == 1000 and len(sch.alpha_bar) == 1001


def test_default_eta_is_one_half():
    assert build_schedule(10).eta == 0.5


def test_eta_zero_is_the_standard_model():
    sch = build_schedule(200, "cosine", eta=0.0)
    assert sch.is_standard
    np.testing.assert_array_equal(sch.gamma_bar, 1.0)
    np.testing.assert_array_equal(sch.gamma, 1.0)


def test_eta_one_tracks_alpha_bar():
    sch = build_schedule(100, eta=1.0)
    np.testing.assert_allclose(sch.gamma_bar, sch.alpha_bar, rtol=0, atol=1e-15)


def test_slot_zero_identities_and_step_ratios():
    sch = build_schedule(30, eta=0.3, sigma="ddpm")
    assert sch.alpha_bar[0] == sch.gamma_bar[0] == sch.alpha[0] == sch.gamma[0] == 1.0
    assert sch.sigma[0] == 0.0
    np.testing.assert_allclose(np.cumprod(sch.alpha), sch.alpha_bar, rtol=1e-13)
    np.testing.assert_allclose(np.cumprod(sch.gamma), sch.gamma_bar, rtol=1e-13)


def test_ddpm_sigma_textbook():
    ab = linear_beta_alpha_bar(10)
    sig = ddpm_sigma(ab)
    for t in range(1, 11):
        beta = 1 - ab[t] / ab[t - 1]
        assert sig[t] == pytest.approx(math.sqrt((1 - ab[t - 1]) / (1 - ab[t]) * beta), rel=1e-13)
    assert sig[1] == 0.0


def test_ddim_sigma_is_zero():
    assert not np.any(build_schedule(10, sigma="ddim").sigma)


def test_timegrad_variant():
    alpha = 1 - np.linspace(1e-4, 0.02, 100)
    gamma, gbar = gamma_variant_timegrad(alpha)
    np.testing.assert_allclose(1 - gamma, 0.3 * (1 - alpha), rtol=1e-12)
    assert gbar[0] == 1.0 and gbar[-1] == pytest.approx(np.prod(gamma))
    sch = build_schedule(100, gamma_rule="timegrad")
    np.testing.assert_allclose(sch.gamma_bar, gbar, rtol=1e-12)


def test_tables_are_read_only():
    sch = build_schedule(5)
    with pytest.raises(ValueError):
        sch.alpha_bar[1] = 0.5


def test_manifest_round_trip():
    sch = build_schedule(40, "linear", eta=0.25, sigma="ddpm", beta_end=0.01)
    m = sch.to_manifest()
    again = Schedule.from_tables(m["alpha_bar"], m["gamma_bar"], eta=m["eta"], stochastic=True)
    np.testing.assert_array_equal(again.gamma_bar, sch.gamma_bar)
    np.testing.assert_array_equal(again.sigma, sch.sigma)
    assert m["beta_end"] == 0.01


@pytest.mark.parametrize(
    "kwargs",
    [dict(T=0), dict(T=10, eta=1.5), dict(T=10, eta=-0.1), dict(T=10, family="quadratic"),
     dict(T=10, sigma="other"), dict(T=10, gamma_rule="other")],
)
def test_bad_arguments(kwargs):
    with pytest.raises(ValueError):
        build_schedule(**kwargs)


@pytest.mark.parametrize(
    "ab, gb",
    [([0.9, 0.8], None), ([1.0, 1.2], None), ([1.0, 0.5, 0.7], None), ([1.0, 0.5], [1.0, 0.0]), ([1.0], None)],
)
def test_from_tables_rejects(ab, gb):
    with pytest.raises(ValueError):
        Schedule.from_tables(ab, gb)
