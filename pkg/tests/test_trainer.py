import csv

import numpy as np
import pytest

from dydiff.denoiser import NumericFailure, ResidualMLP
from dydiff.rng import make_rng
from dydiff.schedule import build_schedule
from dydiff.trainer import (
    SGD,
    Adam,
    TrainConfig,
    dpm_train_step,
    draw_training_noise,
    latest_checkpoint,
    make_training_pairs,
    train_loop,
    train_step,
)


def toy_windows(n=64, P=1, S=2, seed=0):
    rng = np.random.default_rng(seed)
    base = rng.standard_normal((n, 1, 2))
    return base + 0.1 * np.arange(P + 1 + S)[None, :, None]


def test_noise_draw_order():
    t, eps = draw_training_noise(make_rng(1), 4, 100, (3, 2))
    r = make_rng(1)
    assert np.array_equal(t, r.integers(1, 101, size=4))
    assert np.array_equal(eps, r.standard_normal((4, 3, 2)))
    assert t.min() >= 1


def test_only_observations_are_conditioning(sched):
    batch = toy_windows(8, P=2, S=3)
    noisy, obs, t, target = make_training_pairs(batch, sched, 2, make_rng(0))
    assert np.array_equal(obs, batch[:, :3])
    assert noisy.shape == target.shape == (8, 3, 2)


def test_eta_zero_step_equals_standard_diffusion_step():
    sch = build_schedule(100, eta=0.0)
    model = ResidualMLP((2,), S=2, P=1, width=8)
    p0 = 0.1 * np.random.default_rng(0).standard_normal(model.num_params)
    batch = toy_windows(16)
    a, la = train_step(model, p0, Adam(1e-3, model.num_params), sch, batch, make_rng(5))
    b, lb = dpm_train_step(model, p0, Adam(1e-3, model.num_params), sch, batch, make_rng(5))
    assert la == lb and np.array_equal(a, b)


def test_sgd_and_adam_updates():
    p, g = np.array([1.0, -2.0]), np.array([0.5, -4.0])
    np.testing.assert_array_equal(SGD(0.1).update(p, g), p - 0.1 * g)
    opt = Adam(0.01, 2)
    # the first bias-corrected Adam step has magnitude lr in every coordinate
    np.testing.assert_allclose(opt.update(p, g), p - 0.01 * np.sign(g), rtol=1e-6)
    again = Adam(0.01, 2)
    again.load_state(opt.state())
    np.testing.assert_array_equal(again.update(p, g), opt.update(p, g))


def test_training_reduces_loss(sched):
    model = ResidualMLP((2,), S=2, P=1, width=16)
    res = train_loop(model, toy_windows(), sched, TrainConfig(steps=300, learning_rate=3e-3, eval_every=50, seed=2))
    first, last = res.losses[0][1], res.losses[-1][1]
    assert last < 0.8 * first
    assert [s for s, _ in res.losses] == [50, 100, 150, 200, 250, 300]


def test_deterministic_given_seed(sched):
    model = ResidualMLP((2,), S=2, P=1, width=8)
    cfg = TrainConfig(steps=20, eval_every=5, seed=9)
    a = train_loop(model, toy_windows(), sched, cfg)
    b = train_loop(model, toy_windows(), sched, cfg)
    assert np.array_equal(a.params, b.params) and a.losses == b.losses


def test_checkpoint_resume_reproduces_uninterrupted_run(tmp_path, sched):
    model = ResidualMLP((2,), S=2, P=1, width=8)
    w = toy_windows()
    full = train_loop(model, w, sched, TrainConfig(steps=30, eval_every=10, seed=4), tmp_path / "a", tmp_path / "a.csv")
    part = train_loop(model, w, sched, TrainConfig(steps=17, eval_every=10, checkpoint_every=17, seed=4),
                      tmp_path / "b", tmp_path / "b.csv")
    assert latest_checkpoint(tmp_path / "b").name == "step_0000017"
    done = train_loop(model, w, sched, TrainConfig(steps=30, eval_every=10, seed=4), tmp_path / "b", tmp_path / "b.csv",
                      resume_from=latest_checkpoint(tmp_path / "b"))
    assert np.array_equal(done.params, full.params)
    assert (tmp_path / "a.csv").read_text() == (tmp_path / "b.csv").read_text()
    assert part.losses[-1][0] == 17


def test_zero_steps_writes_initial_checkpoint(tmp_path, sched):
    model = ResidualMLP((2,), S=2, P=1, width=8)
    res = train_loop(model, toy_windows(), sched, TrainConfig(steps=0), tmp_path, tmp_path / "loss.csv")
    assert [c.name for c in res.checkpoints] == ["step_0000000"]
    assert list(csv.reader(open(tmp_path / "loss.csv"))) == [["step", "loss"]]


def test_independent_noise_targets_are_raw_draws(sched):
    batch = toy_windows(4)
    _, _, _, target = make_training_pairs(batch, sched, 1, make_rng(3), independent_noise=True)
    r = make_rng(3)
    r.integers(1, sched.T + 1, size=4)
    assert np.array_equal(target, r.standard_normal((4, 2, 2)))


def test_errors(sched):
    model = ResidualMLP((2,), S=2, P=1, width=8)
    with pytest.raises(ValueError):
        train_loop(model, np.zeros((4, 3, 2)), sched, TrainConfig(steps=1))
    for bad in (dict(steps=-1), dict(learning_rate=0.0), dict(optimizer="rmsprop"), dict(batch_size=0)):
        with pytest.raises(ValueError):
            TrainConfig(**bad)
    w = toy_windows()
    w[:] = np.nan
    with pytest.raises(NumericFailure):
        train_loop(model, w, sched, TrainConfig(steps=2, seed=0))
