"""Forward (corruption) process with history-mixed latents.

Conventions: a single window is an array of shape ``(P + 1 + S, *frame)``
with the state axis first; batched code paths use ``(B, n_states, *frame)``.
Scalar Monte-Carlo checks can fold independent draws into the frame axis
since every operation here is elementwise across the frame.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dynamics import dynamics, inverse_dynamics
from .schedule import Schedule


@dataclass(frozen=True)
class CorrelatedNoise:
    eps_tilde: np.ndarray
    eps: np.ndarray
    gamma_bar: float


@dataclass(frozen=True)
class PosteriorGaussian:
    mean: np.ndarray
    var: float


def _check_t(t: int, schedule: Schedule, lo: int = 0) -> int:
    if int(t) != t or not lo <= t <= schedule.T:
        raise ValueError(f"timestep {t} outside [{lo}, {schedule.T}]")
    return int(t)


def sample_correlated_noise(S: int, shape, gamma_bar: float, rng: np.random.Generator) -> CorrelatedNoise:
    if S < 1:
        raise ValueError("S must be at least 1")
    shape = (shape,) if isinstance(shape, (int, np.integer)) else tuple(shape)
    eps = rng.standard_normal((S,) + shape)
    return CorrelatedNoise(dynamics(eps, gamma_bar), eps, float(gamma_bar))


def corrupt(x, t, schedule: Schedule, eps, P: int, independent_noise: bool = False):
    """Batched forward draw.

    ``x`` is ``(B, P+1+S, *frame)``, ``t`` an integer array ``(B,)`` and ``eps``
    i.i.d. normal draws ``(B, S, *frame)``.  Returns ``(latents, noise)``; the
    noise is the regression target of the denoiser.  With
    ``independent_noise`` the raw draws replace the correlated mixture.
    """
    x = np.asarray(x, dtype=np.float64)
    t = np.asarray(t)
    gb = schedule.gamma_bar[t]
    ab = schedule.alpha_bar[t]
    x_dyn = dynamics(x, gb, axis=1)[:, P + 1 :]
    noise = eps if independent_noise else dynamics(eps, gb, axis=1)
    tail = (1,) * (x.ndim - 1)
    latents = np.sqrt(ab).reshape(-1, *tail) * x_dyn + np.sqrt(1.0 - ab).reshape(-1, *tail) * noise
    return latents, noise


def forward_sample(window, t: int, schedule: Schedule, rng: np.random.Generator, P: int | None = None):
    """Draw ``x_t^{1:S}`` for one window.

    ``window`` is a :class:`~dydiff.data.SequenceWindow` or a full array
    ``(P+1+S, *frame)`` (then ``P`` is required).  The state recursion starts
    at ``-P``; the noise recursion starts at ``s = 1``.
    """
    t = _check_t(t, schedule)
    if hasattr(window, "observations"):
        P = window.observations.shape[0] - 1
        x = np.concatenate([window.observations, window.targets], axis=0)
    else:
        if P is None:
            raise ValueError("P is required when passing a raw array")
        x = np.asarray(window, dtype=np.float64)
    S = x.shape[0] - P - 1
    if S < 1:
        raise ValueError("window has no target states")
    gb = schedule.gamma_bar[t]
    noise = sample_correlated_noise(S, x.shape[1:], gb, rng)
    mean = np.sqrt(schedule.alpha_bar[t]) * dynamics(x, gb)[P + 1 :]
    return mean + np.sqrt(1.0 - schedule.alpha_bar[t]) * noise.eps_tilde, noise


def _step_ratios(schedule: Schedule, t: int, t_prev: int | None):
    t_prev = t - 1 if t_prev is None else int(t_prev)
    if not 0 <= t_prev < t:
        raise ValueError("t_prev must satisfy 0 <= t_prev < t")
    ab, ab_p = schedule.alpha_bar[t], schedule.alpha_bar[t_prev]
    gb, gb_p = schedule.gamma_bar[t], schedule.gamma_bar[t_prev]
    return t_prev, ab, ab_p, gb, gb_p, ab / ab_p, gb / gb_p


def markov_transition(observations, t: int, schedule: Schedule, t_prev: int | None = None):
    """Coefficients of ``q(x_t | x_{t_prev}) = N(a x_{t_prev} + b, var)`` for S = 1.

    ``t_prev`` defaults to ``t - 1``; a larger jump uses the ratio of the
    cumulative tables as the effective per-step coefficients.
    """
    t = _check_t(t, schedule, 1)
    _, ab, _, gb, gb_p, a_step, g_step = _step_ratios(schedule, t, t_prev)
    obs = np.asarray(observations, dtype=np.float64)
    hist_t = dynamics(obs, gb)[-1]
    hist_p = dynamics(obs, gb_p)[-1]
    a = np.sqrt(a_step * g_step)
    b = np.sqrt(ab) * (np.sqrt(1.0 - gb) * hist_t - np.sqrt(max(g_step - gb, 0.0)) * hist_p)
    var = 1.0 - a_step * g_step - ab * (1.0 - g_step)
    return a, b, var


def markov_forward_step(x_prev, observations, t: int, schedule: Schedule, rng: np.random.Generator,
                        t_prev: int | None = None) -> np.ndarray:
    x_prev = np.asarray(x_prev, dtype=np.float64)
    if x_prev.shape[0] != 1:
        raise ValueError("the Markovian forward step is defined for a single target state")
    a, b, var = markov_transition(observations, t, schedule, t_prev)
    return a * x_prev + b + np.sqrt(var) * rng.standard_normal(x_prev.shape)


def condition_gaussian(mean, cov, observed, values):
    """Condition a joint Gaussian on a subset of coordinates.

    ``mean`` has shape ``(n, *batch)`` (one mean vector per batch element),
    ``cov`` is a shared ``(n, n)`` matrix.  Returns the conditional mean
    ``(k, *batch)`` and covariance ``(k, k)`` of the remaining coordinates.
    """
    mean = np.asarray(mean, dtype=np.float64)
    cov = np.asarray(cov, dtype=np.float64)
    n = cov.shape[0]
    obs = np.asarray(observed, dtype=int)
    free = np.setdiff1d(np.arange(n), obs)
    s_ff = cov[np.ix_(free, free)]
    s_fo = cov[np.ix_(free, obs)]
    s_oo = cov[np.ix_(obs, obs)]
    gain = np.linalg.solve(s_oo, s_fo.T).T
    resid = np.asarray(values, dtype=np.float64) - mean[obs]
    cond_mean = mean[free] + np.tensordot(gain, resid, axes=(1, 0))
    return cond_mean, s_ff - gain @ s_fo.T


def posterior(x_t, x_pred, observations, t: int, schedule: Schedule, t_prev: int | None = None) -> PosteriorGaussian:
    """``q(x_{t_prev} | x_t, x^{-P:0}, x^1 = x_pred)`` for a single target state.

    Built by writing down the joint Gaussian of ``(x_{t_prev}, x_t)`` under
    the Markovian forward process and conditioning on ``x_t``.
    """
    t = _check_t(t, schedule, 1)
    t_prev, _, ab_p, _, gb_p, _, _ = _step_ratios(schedule, t, t_prev)
    x_t = np.asarray(x_t, dtype=np.float64)
    x_pred = np.asarray(x_pred, dtype=np.float64)
    if x_t.shape[0] != 1:
        raise ValueError("posterior is defined for a single target state")
    obs = np.asarray(observations, dtype=np.float64)
    a, b, var = markov_transition(obs, t, schedule, t_prev)

    full = np.concatenate([obs, x_pred.reshape(x_t.shape)], axis=0)
    m_prev = np.sqrt(ab_p) * dynamics(full, gb_p)[-1]
    v_prev = 1.0 - ab_p
    joint_mean = np.stack([m_prev, a * m_prev + b])
    joint_cov = np.array([[v_prev, a * v_prev], [a * v_prev, a * a * v_prev + var]])
    mean, cov = condition_gaussian(joint_mean, joint_cov, [1], x_t[0][None])
    return PosteriorGaussian(mean, float(max(cov[0, 0], 0.0)))


def decorrelate(x_t, gamma_bar, axis: int = 0) -> np.ndarray:
    """Map correlated latents to independent per-state coordinates ``y_t``."""
    return inverse_dynamics(x_t, gamma_bar, axis=axis)


def recorrelate(y_t, gamma_bar, axis: int = 0) -> np.ndarray:
    return dynamics(y_t, gamma_bar, axis=axis)
