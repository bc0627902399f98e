"""Reverse-process samplers.

Four kinds share one loop:

* ``dydiff-ddim`` / ``dydiff-ddpm``: multi-state diffusion with history mixing.
* ``dpm-ddim`` / ``dpm-ddpm``: the standard conditional diffusion baseline.

All arrays are batched: observations ``(B, P+1, *frame)``, latents
``(B, S, *frame)``.  ``denoise(x_t, observations, t)`` returns the predicted
(correlated) noise with the latent's shape.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .denoiser import NumericFailure
from .dynamics import dynamics, inverse_dynamics
from .forward import posterior
from .schedule import Schedule

KINDS = ("dydiff-ddim", "dydiff-ddpm", "dpm-ddim", "dpm-ddpm")


@dataclass(frozen=True)
class SamplerConfig:
    kind: str = "dydiff-ddim"
    num_steps: int = 50
    stochastic: bool = False

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown sampler kind {self.kind!r}; expected one of {KINDS}")
        if self.num_steps < 1:
            raise ValueError("num_steps must be at least 1")


def timestep_sequence(T: int, num_steps: int) -> np.ndarray:
    """Evenly strided descending timesteps from ``T`` down to 0 (both included)."""
    if num_steps > T:
        raise ValueError(f"num_steps={num_steps} exceeds T={T}")
    ts = np.unique(np.round(np.linspace(0, T, num_steps + 1)).astype(int))
    return ts[::-1]


def predict_x0_single(x_t, eps_hat, observations, t: int, schedule: Schedule) -> np.ndarray:
    """Clean estimate of the single target state from its latent and noise estimate."""
    ab, gb = schedule.alpha_bar[t], schedule.gamma_bar[t]
    if gb <= 0:
        raise ValueError("gamma_bar must be positive")
    hist = dynamics(observations, gb)[-1]
    return ((x_t - np.sqrt(1.0 - ab) * eps_hat) / np.sqrt(ab) - np.sqrt(1.0 - gb) * hist) / np.sqrt(gb)


def ddpm_step_single(x_t, eps_hat, observations, t: int, schedule: Schedule, rng=None,
                     t_prev: int | None = None, stochastic: bool = True) -> np.ndarray:
    """Ancestral step for one target state; deterministic (posterior mean) if not stochastic."""
    x_pred = predict_x0_single(x_t, eps_hat, observations, t, schedule)
    post = posterior(x_t, x_pred, observations, t, schedule, t_prev)
    if not stochastic:
        return post.mean
    return post.mean + np.sqrt(post.var) * rng.standard_normal(np.shape(post.mean))


def _ddim_sigma(ab_t, ab_p):
    return np.sqrt((1.0 - ab_p) / (1.0 - ab_t) * (1.0 - ab_t / ab_p))


def _dydiff_x_pred(x_t, eps, obs, ab, gb):
    """Recover the clean window ``x^{-P:S}`` from latents and predicted correlated noise."""
    x_dyn = (x_t - np.sqrt(1.0 - ab) * eps) / np.sqrt(ab)
    obs_dyn = dynamics(obs, gb, axis=1)
    return inverse_dynamics(np.concatenate([obs_dyn, x_dyn], axis=1), gb, axis=1)


def _step(kind, stochastic, x_t, eps, obs, t, t_prev, schedule, rng):
    P1 = obs.shape[1]
    ab, ab_p = schedule.alpha_bar[t], schedule.alpha_bar[t_prev]
    gb, gb_p = schedule.gamma_bar[t], schedule.gamma_bar[t_prev]

    if kind == "dpm-ddim":
        x0 = (x_t - np.sqrt(1.0 - ab) * eps) / np.sqrt(ab)
        sigma = _ddim_sigma(ab, ab_p) if stochastic else 0.0
        x_prev = np.sqrt(ab_p) * x0 + np.sqrt(1.0 - ab_p - sigma**2) * eps
        if stochastic:
            x_prev = x_prev + sigma * rng.standard_normal(x_t.shape)
        return x_prev, x0

    if kind == "dpm-ddpm":
        x0 = (x_t - np.sqrt(1.0 - ab) * eps) / np.sqrt(ab)
        a_step = ab / ab_p
        mean = (np.sqrt(ab_p) * (1.0 - a_step) * x0 + np.sqrt(a_step) * (1.0 - ab_p) * x_t) / (1.0 - ab)
        if not stochastic:
            return mean, x0
        var = (1.0 - ab_p) / (1.0 - ab) * (1.0 - a_step)
        return mean + np.sqrt(var) * rng.standard_normal(x_t.shape), x0

    x_pred = _dydiff_x_pred(x_t, eps, obs, ab, gb)
    if kind == "dydiff-ddim":
        eps_prev = dynamics(inverse_dynamics(eps, gb, axis=1), gb_p, axis=1)
        sigma = _ddim_sigma(ab, ab_p) if stochastic else 0.0
        x_prev = np.sqrt(ab_p) * dynamics(x_pred, gb_p, axis=1)[:, P1:] + np.sqrt(1.0 - ab_p - sigma**2) * eps_prev
        if stochastic:
            # fresh noise enters the independent coordinates, then gets the same mixture
            x_prev = x_prev + sigma * dynamics(rng.standard_normal(x_t.shape), gb_p, axis=1)
        return x_prev, x_pred[:, P1:]

    # dydiff-ddpm: first state via the Markov posterior, later states in the
    # decorrelated coordinates where they follow standard diffusion.
    y_t = inverse_dynamics(x_t, gb, axis=1)
    y0 = x_pred[:, P1:]
    first = posterior(
        x_t[:, :1].swapaxes(0, 1), y0[:, :1].swapaxes(0, 1), obs.swapaxes(0, 1), t, schedule, t_prev
    )
    a_step = ab / ab_p
    mean = (np.sqrt(ab_p) * (1.0 - a_step) * y0 + np.sqrt(a_step) * (1.0 - ab_p) * y_t) / (1.0 - ab)
    mean[:, :1] = first.mean.swapaxes(0, 1)
    if stochastic:
        var = np.full(x_t.shape[1], (1.0 - ab_p) / (1.0 - ab) * (1.0 - a_step))
        var[0] = first.var
        z = rng.standard_normal(x_t.shape)
        mean = mean + np.sqrt(var).reshape((1, -1) + (1,) * (x_t.ndim - 2)) * z
    return dynamics(mean, gb_p, axis=1), y0


def sample(denoise, observations, schedule: Schedule, config: SamplerConfig, rng, S: int,
           x_init=None, t_start: int | None = None, record: list | None = None) -> np.ndarray:
    """Draw ``x^{1:S}`` given clean observations.

    By default the chain starts at ``t = T`` from ``dynamics(N(0, I), gamma_bar_T)``
    (plain ``N(0, I)`` for the baseline kinds).  ``x_init`` and ``t_start``
    restart the chain from a given latent instead.  If ``record`` is a list,
    one dict per visited step is appended with the latent, the current clean
    estimate of the targets, and the step index.
    """
    obs = np.asarray(observations, dtype=np.float64)
    t_start = schedule.T if t_start is None else int(t_start)
    ts = timestep_sequence(t_start, min(config.num_steps, t_start))
    shape = (obs.shape[0], S) + obs.shape[2:]
    dydiff = config.kind.startswith("dydiff")
    if x_init is None:
        x = rng.standard_normal(shape)
        if dydiff:
            x = dynamics(x, schedule.gamma_bar[t_start], axis=1)
    else:
        x = np.array(x_init, dtype=np.float64)
        if x.shape != shape:
            raise ValueError(f"x_init has shape {x.shape}, expected {shape}")

    for t, t_prev in zip(ts[:-1], ts[1:]):
        eps = np.asarray(denoise(x, obs, int(t)), dtype=np.float64)
        x_next, x0_hat = _step(config.kind, config.stochastic, x, eps, obs, int(t), int(t_prev), schedule, rng)
        if record is not None:
            record.append({"t": int(t), "latent": x, "x0_hat": x0_hat})
        if not np.all(np.isfinite(x_next)):
            raise NumericFailure(f"latents at t={t}")
        x = x_next
    return x
