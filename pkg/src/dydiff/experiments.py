"""Desk-scale comparison runs: baseline (eta = 0) vs history-mixed diffusion.

Each run trains a fresh :class:`~dydiff.denoiser.ResidualMLP` on one of the
synthetic tasks and scores an ensemble forecast on held-out windows.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .data import gen_advected_blobs, gen_linear_gaussian, rotation_transition, window_array
from .denoiser import ResidualMLP
from .metrics import crps_ensemble
from .rng import make_rng
from .sampler import SamplerConfig, sample
from .schedule import build_schedule
from .trainer import TrainConfig, train_loop


@dataclass
class TaskSpec:
    name: str
    P: int
    S: int
    width: int
    depth: int = 2
    steps: int = 3000
    learning_rate: float = 1e-3
    batch_size: int = 64
    beta_end: float = 0.01


TASKS = {
    "linear_gaussian": TaskSpec("linear_gaussian", P=2, S=6, width=128),
    "advected_blobs": TaskSpec("advected_blobs", P=1, S=4, width=256),
}


def make_task_data(name: str, data_seed: int = 1234):
    """Train and test datasets for a task; test uses its own generator seed."""
    if name == "linear_gaussian":
        A = rotation_transition(4, radius=0.97, angle=0.35)
        train = gen_linear_gaussian(200, 24, 4, A, noise_scale=0.3, seed=data_seed)
        test = gen_linear_gaussian(64, 24, 4, A, noise_scale=0.3, seed=data_seed + 1)
    elif name == "advected_blobs":
        train = gen_advected_blobs(200, 12, grid=8, velocity=(0.8, 0.3), velocity_noise=0.15, seed=data_seed)
        test = gen_advected_blobs(64, 12, grid=8, velocity=(0.8, 0.3), velocity_noise=0.15, seed=data_seed + 1)
    else:
        raise ValueError(f"unknown task {name!r}")
    test.meta["normalizer"] = train.meta["normalizer"]
    return train, test


@dataclass
class RunResult:
    task: str
    eta: float
    seed: int
    independent_noise: bool
    crps: float
    final_loss: float
    latent_error: list[tuple[int, float]] = field(default_factory=list)

    def row(self) -> dict:
        d = asdict(self)
        d.pop("latent_error")
        return d


def latent_error_curve(records, final, schedule, state: int = -1):
    """Mean squared distance of ``latent / sqrt(abar_t)`` to the final sample, per step."""
    curve = []
    for rec in records:
        t = rec["t"]
        scaled = rec["latent"][:, state] / np.sqrt(schedule.alpha_bar[t])
        curve.append((t, float(np.mean((scaled - final[:, state]) ** 2))))
    return curve


def evaluate(model, params, test_windows, schedule, P: int, S: int, members: int, seed: int,
             sampler: SamplerConfig, n_cases: int = 64):
    """Ensemble CRPS over the first ``n_cases`` test windows plus the latent-error curve."""
    cases = test_windows[:n_cases]
    obs = np.repeat(cases[:, : P + 1], members, axis=0)
    records: list = []
    pred = sample(model.bind(params), obs, schedule, sampler, make_rng(seed, 7), S, record=records)
    curve = latent_error_curve(records, pred, schedule)
    pred = pred.reshape((len(cases), members) + pred.shape[1:])
    truth = cases[:, P + 1 :]
    crps = float(np.mean([crps_ensemble(pred[i], truth[i]) for i in range(len(cases))]))
    return crps, curve, pred


def run(task: str, eta: float, seed: int, independent_noise: bool = False, steps: int | None = None,
        members: int = 8, num_steps: int = 50, data_seed: int = 1234) -> RunResult:
    spec = TASKS[task]
    train, test = make_task_data(task, data_seed)
    tr_w = window_array(train, spec.P, spec.S)
    te_w = window_array(test, spec.P, spec.S)
    # one window per test sequence, spread over positions
    te_w = te_w[:: max(1, len(te_w) // 64)][:64]
    schedule = build_schedule(1000, "linear", eta=eta, beta_end=spec.beta_end)
    model = ResidualMLP(tr_w.shape[2:], spec.S, spec.P, width=spec.width, depth=spec.depth)
    cfg = TrainConfig(steps=spec.steps if steps is None else steps, batch_size=spec.batch_size,
                      learning_rate=spec.learning_rate, seed=seed, eval_every=100,
                      independent_noise=independent_noise)
    res = train_loop(model, tr_w, schedule, cfg)
    crps, curve, _ = evaluate(model, res.params, te_w, schedule, spec.P, spec.S, members, seed,
                              SamplerConfig("dydiff-ddim", num_steps))
    final_loss = res.losses[-1][1] if res.losses else float("nan")
    return RunResult(task, eta, seed, independent_noise, crps, final_loss, curve)
