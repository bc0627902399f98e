import numpy as np
import pytest

from dydiff.denoiser import NumericFailure
from dydiff.dynamics import dynamics
from dydiff.forward import corrupt, posterior
from dydiff.rng import make_rng
from dydiff.sampler import KINDS, SamplerConfig, ddpm_step_single, predict_x0_single, sample, timestep_sequence
from dydiff.schedule import build_schedule


def exact_denoiser(window, P, schedule):
    """Noise that explains x_t exactly when the data is the single window ``window``."""
    full = window[None]

    def denoise(x_t, obs, t):
        ab, gb = schedule.alpha_bar[t], schedule.gamma_bar[t]
        clean = dynamics(np.broadcast_to(full, (x_t.shape[0],) + full.shape[1:]), gb, axis=1)[:, P + 1:]
        return (x_t - np.sqrt(ab) * clean) / np.sqrt(1 - ab)

    return denoise


def test_timestep_sequence():
    ts = timestep_sequence(1000, 50)
    assert ts[0] == 1000 and ts[-1] == 0 and len(ts) == 51
    assert np.all(np.diff(ts) == -20)
    np.testing.assert_array_equal(timestep_sequence(7, 7), np.arange(7, -1, -1))
    uneven = timestep_sequence(10, 3)
    assert uneven[0] == 10 and uneven[-1] == 0 and np.all(np.diff(uneven) < 0)
    with pytest.raises(ValueError):
        timestep_sequence(10, 11)


def test_config_validation():
    with pytest.raises(ValueError):
        SamplerConfig("ddim")
    with pytest.raises(ValueError):
        SamplerConfig(num_steps=0)


@pytest.mark.parametrize("kind", ["dydiff-ddim", "dydiff-ddpm"])
@pytest.mark.parametrize("t", [1, 2, 37, 500, 999, 1000])
def test_true_noise_recovers_window_in_one_step(sched, kind, t):
    rng = np.random.default_rng(t)
    P, S = 2, 4
    x = rng.standard_normal((3, P + 1 + S, 2))
    eps = rng.standard_normal((3, S, 2))
    lat, noise = corrupt(x, np.full(3, t), sched, eps, P)
    out = sample(lambda *_: noise, x[:, :P + 1], sched, SamplerConfig(kind, 1), make_rng(0), S,
                 x_init=lat, t_start=t)
    assert np.max(np.abs(out - x[:, P + 1:])) < 1e-8


@pytest.mark.parametrize("kind", KINDS)
def test_exact_denoiser_chain_ends_at_the_window(sched, kind):
    P, S = 1, 3
    window = np.random.default_rng(5).standard_normal((P + 1 + S, 2))
    obs = np.repeat(window[None, :P + 1], 4, axis=0)
    cfg = SamplerConfig(kind, 25, stochastic=True)
    sch = sched if kind.startswith("dydiff") else build_schedule(1000, eta=0.0)
    out = sample(exact_denoiser(window, P, sch), obs, sch, cfg, make_rng(1), S)
    assert np.max(np.abs(out - window[P + 1:])) < 1e-8


@pytest.mark.parametrize("kind", ["dydiff-ddpm", "dydiff-ddim"])
def test_stochastic_chain_keeps_forward_marginals(kind):
    """With the exact denoiser the reverse chain visits the forward marginals."""
    # T large enough that N(0, I) is the t = T marginal to high accuracy
    sch = build_schedule(1000, eta=0.5)
    P, S, n = 1, 3, 40000
    window = np.array([0.5, -1.0, 1.5, 0.2, -0.6])[:, None]
    record = []
    sample(exact_denoiser(window, P, sch), np.repeat(window[None, :P + 1], n, axis=0), sch,
           SamplerConfig(kind, 50, stochastic=True), make_rng(2), S, record=record)
    rec = next(r for r in record if r["t"] == 500)
    lat = rec["latent"][:, :, 0]
    ab, gb = sch.alpha_bar[500], sch.gamma_bar[500]
    mean = np.sqrt(ab) * dynamics(window[:, 0], gb)[P + 1:]
    se = np.sqrt((1 - ab) / n)
    assert np.all(np.abs(lat.mean(axis=0) - mean) < 4 * se)
    assert np.all(np.abs(lat.var(axis=0) - (1 - ab)) < 4 * (1 - ab) * np.sqrt(2 / n))
    r = np.corrcoef(lat.T)
    assert abs(r[0, 1] - np.sqrt(1 - gb)) < 0.02 and abs(r[0, 2] - (1 - gb)) < 0.02


def test_eta_zero_dydiff_kinds_equal_baseline_kinds():
    sch = build_schedule(100, eta=0.0, sigma="ddpm")
    rng = np.random.default_rng(3)
    obs = rng.standard_normal((2, 2, 3))
    w = rng.standard_normal((3, 3))
    den = lambda x, o, t: np.tanh(x + w[: x.shape[1]] * (t / 100))
    for stochastic in (False, True):
        for a, b in (("dydiff-ddim", "dpm-ddim"), ("dydiff-ddpm", "dpm-ddpm")):
            xa = sample(den, obs, sch, SamplerConfig(a, 10, stochastic), make_rng(4), 3)
            xb = sample(den, obs, sch, SamplerConfig(b, 10, stochastic), make_rng(4), 3)
            tol = 0.0 if a == "dydiff-ddim" else 1e-10
            assert np.max(np.abs(xa - xb)) <= tol


def test_single_state_helpers(sched_short):
    obs = np.array([[0.1], [0.4]])
    x0 = np.array([[0.8]])
    t = 9
    ab, gb = sched_short.alpha_bar[t], sched_short.gamma_bar[t]
    eps = np.array([[0.3]])
    x_t = np.sqrt(ab) * dynamics(np.vstack([obs, x0]), gb)[-1:] + np.sqrt(1 - ab) * eps
    np.testing.assert_allclose(predict_x0_single(x_t, eps, obs, t, sched_short), x0, atol=1e-13)
    post = posterior(x_t, x0, obs, t, sched_short)
    np.testing.assert_array_equal(ddpm_step_single(x_t, eps, obs, t, sched_short, stochastic=False), post.mean)
    drawn = ddpm_step_single(x_t, eps, obs, t, sched_short, rng=make_rng(0))
    np.testing.assert_allclose(drawn, post.mean + np.sqrt(post.var) * make_rng(0).standard_normal((1, 1)), atol=1e-14)


def test_record_and_initial_latent(sched):
    obs = np.zeros((2, 2, 1))
    record = []
    out = sample(lambda x, o, t: np.zeros_like(x), obs, sched, SamplerConfig("dydiff-ddim", 5), make_rng(7), 3,
                 record=record)
    assert [r["t"] for r in record] == [1000, 800, 600, 400, 200]
    z = make_rng(7).standard_normal((2, 3, 1))
    np.testing.assert_array_equal(record[0]["latent"], dynamics(z, sched.gamma_bar[1000], axis=1))
    assert record[-1]["x0_hat"].shape == out.shape == (2, 3, 1)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_non_finite_latents_abort_with_timestep(sched):
    def bad(x, o, t):
        return np.full_like(x, np.inf) if t < 600 else np.zeros_like(x)

    with pytest.raises(NumericFailure) as info:
        sample(bad, np.zeros((1, 1, 1)), sched, SamplerConfig("dydiff-ddim", 5), make_rng(0), 2)
    assert "t=400" in info.value.where


def test_x_init_shape_checked(sched):
    with pytest.raises(ValueError):
        sample(lambda x, o, t: x, np.zeros((1, 1, 1)), sched, SamplerConfig(), make_rng(0), 2, x_init=np.zeros((1, 3, 1)))
