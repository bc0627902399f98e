"""Training loop for the noise-prediction objective."""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .denoiser import NumericFailure, ResidualMLP, load_params, save_params
from .forward import corrupt
from .rng import make_rng, restore_rng, rng_state
from .schedule import Schedule

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    steps: int = 2000
    batch_size: int = 64
    learning_rate: float = 1e-4
    optimizer: str = "adam"
    seed: int = 0
    eval_every: int = 100
    checkpoint_every: int = 0
    independent_noise: bool = False

    def __post_init__(self):
        if self.steps < 0 or self.batch_size < 1 or self.eval_every < 1 or self.checkpoint_every < 0:
            raise ValueError("step counts must be positive (steps and checkpoint_every may be 0)")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")


class SGD:
    def __init__(self, lr: float):
        self.lr = lr
        self.step_count = 0

    def update(self, params, grad):
        self.step_count += 1
        return params - self.lr * grad

    def state(self) -> dict:
        return {"step_count": self.step_count}

    def load_state(self, state: dict) -> None:
        self.step_count = state["step_count"]


class Adam:
    def __init__(self, lr: float, n: int, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = np.zeros(n)
        self.v = np.zeros(n)
        self.step_count = 0

    def update(self, params, grad):
        self.step_count += 1
        self.m = self.beta1 * self.m + (1 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1 - self.beta2) * grad * grad
        m_hat = self.m / (1 - self.beta1**self.step_count)
        v_hat = self.v / (1 - self.beta2**self.step_count)
        return params - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)

    def state(self) -> dict:
        return {"step_count": self.step_count, "m": self.m.tolist(), "v": self.v.tolist()}

    def load_state(self, state: dict) -> None:
        self.step_count = state["step_count"]
        self.m = np.asarray(state["m"], dtype=np.float64)
        self.v = np.asarray(state["v"], dtype=np.float64)


def make_optimizer(name: str, lr: float, n: int):
    return Adam(lr, n) if name == "adam" else SGD(lr)


def draw_training_noise(rng: np.random.Generator, batch_size: int, T: int, target_shape):
    """One timestep per window, then the i.i.d. noise block."""
    t = rng.integers(1, T + 1, size=batch_size)
    eps = rng.standard_normal((batch_size,) + tuple(target_shape))
    return t, eps


def make_training_pairs(batch, schedule: Schedule, P: int, rng: np.random.Generator, independent_noise: bool = False):
    batch = np.asarray(batch, dtype=np.float64)
    t, eps = draw_training_noise(rng, batch.shape[0], schedule.T, (batch.shape[1] - P - 1,) + batch.shape[2:])
    latents, target = corrupt(batch, t, schedule, eps, P, independent_noise)
    # only s <= 0 is handed to the network as clean conditioning
    return latents, batch[:, : P + 1], t, target


def train_step(model: ResidualMLP, params, optimizer, schedule: Schedule, batch, rng, independent_noise: bool = False):
    """One optimizer update on a batch of windows ``(B, P+1+S, *frame)``."""
    noisy, obs, t, target = make_training_pairs(batch, schedule, model.P, rng, independent_noise)
    loss, grad = model.loss_and_gradient(params, noisy, obs, t, target)
    if not np.isfinite(loss):
        raise NumericFailure("training loss")
    return optimizer.update(params, grad), loss


def dpm_training_pairs(batch, schedule: Schedule, P: int, rng: np.random.Generator):
    """Standard conditional diffusion pairs: x_t = sqrt(ab) x_0 + sqrt(1 - ab) eps."""
    batch = np.asarray(batch, dtype=np.float64)
    t, eps = draw_training_noise(rng, batch.shape[0], schedule.T, (batch.shape[1] - P - 1,) + batch.shape[2:])
    ab = schedule.alpha_bar[t].reshape((-1,) + (1,) * (batch.ndim - 1))
    x0 = batch[:, P + 1 :]
    return np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * eps, batch[:, : P + 1], t, eps


def dpm_train_step(model: ResidualMLP, params, optimizer, schedule: Schedule, batch, rng):
    noisy, obs, t, target = dpm_training_pairs(batch, schedule, model.P, rng)
    loss, grad = model.loss_and_gradient(params, noisy, obs, t, target)
    return optimizer.update(params, grad), loss


@dataclass
class TrainResult:
    params: np.ndarray
    losses: list[tuple[int, float]] = field(default_factory=list)
    checkpoints: list[Path] = field(default_factory=list)


def _save_checkpoint(ckpt_dir: Path, step: int, model, params, optimizer, rng, loss_block=(0.0, 0)) -> Path:
    d = ckpt_dir / f"step_{step:07d}"
    save_params(d / "params", model, params)
    state = {"step": step, "optimizer": optimizer.state(), "rng": rng_state(rng),
             "loss_block": list(loss_block)}
    tmp = d / "state.json.tmp"
    tmp.write_text(json.dumps(state))
    tmp.replace(d / "state.json")
    return d


def latest_checkpoint(ckpt_dir) -> Path | None:
    found = sorted(Path(ckpt_dir).glob("step_*"))
    return found[-1] if found else None


def train_loop(
    model: ResidualMLP,
    windows,
    schedule: Schedule,
    config: TrainConfig,
    ckpt_dir=None,
    loss_csv=None,
    resume_from=None,
) -> TrainResult:
    """Run ``config.steps`` updates on minibatches drawn from ``windows``.

    ``windows`` is an array ``(N, P+1+S, *frame)``.  Losses are recorded as a
    running mean over each ``eval_every`` block.
    """
    windows = np.asarray(windows, dtype=np.float64)
    expected = (model.P + 1 + model.S,) + model.frame_shape
    if windows.shape[1:] != expected:
        raise ValueError(f"windows have shape {windows.shape[1:]}, model expects {expected}")

    params = model.init(make_rng(config.seed, 0))
    optimizer = make_optimizer(config.optimizer, config.learning_rate, model.num_params)
    rng = make_rng(config.seed, 1)
    start = 0
    acc, n_acc = 0.0, 0
    result = TrainResult(params)
    if resume_from is not None:
        resume_from = Path(resume_from)
        state = json.loads((resume_from / "state.json").read_text())
        params = load_params(resume_from / "params", model)
        optimizer.load_state(state["optimizer"])
        rng = restore_rng(state["rng"])
        start = state["step"]
        acc, n_acc = state.get("loss_block", (0.0, 0))

    ckpt_dir = Path(ckpt_dir) if ckpt_dir is not None else None
    if ckpt_dir is not None and start == 0:
        result.checkpoints.append(_save_checkpoint(ckpt_dir, 0, model, params, optimizer, rng))

    writer = None
    fh = None
    if loss_csv is not None:
        loss_csv = Path(loss_csv)
        fresh = start == 0 or not loss_csv.exists()
        if not fresh:
            # rows written after the checkpoint we resume from are replayed
            with open(loss_csv, newline="") as old:
                kept = [r for r in csv.reader(old)][1:]
            # a partial block flushed at the old final step is recomputed
            kept = [r for r in kept if int(r[0]) < start or (int(r[0]) == start and start % config.eval_every == 0)]
            with open(loss_csv, "w", newline="") as new:
                csv.writer(new).writerows([["step", "loss"]] + kept)
        fh = open(loss_csv, "w" if fresh else "a", newline="")
        writer = csv.writer(fh)
        if fresh:
            writer.writerow(["step", "loss"])
    try:
        for step in range(start + 1, config.steps + 1):
            idx = rng.integers(0, windows.shape[0], size=config.batch_size)
            params, loss = train_step(model, params, optimizer, schedule, windows[idx], rng, config.independent_noise)
            acc += loss
            n_acc += 1
            block = (acc, n_acc)
            if step % config.eval_every == 0 or step == config.steps:
                mean_loss = acc / n_acc
                result.losses.append((step, mean_loss))
                if writer is not None:
                    writer.writerow([step, repr(mean_loss)])
                log.debug("step %d loss %.5f", step, mean_loss)
                acc, n_acc = 0.0, 0
                if step % config.eval_every == 0:
                    block = (0.0, 0)
            if ckpt_dir is not None and (
                step == config.steps or (config.checkpoint_every and step % config.checkpoint_every == 0)
            ):
                result.checkpoints.append(_save_checkpoint(ckpt_dir, step, model, params, optimizer, rng, block))
    finally:
        if fh is not None:
            fh.close()
    result.params = params
    return result


def config_dict(config: TrainConfig) -> dict:
    return asdict(config)
