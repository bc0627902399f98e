"""Noise and dynamics schedules.

Every per-timestep table is stored with ``T + 1`` entries so that ``table[t]``
is the value at diffusion step ``t``.  Slot 0 carries the clean-data
identities ``alpha_bar[0] = gamma_bar[0] = alpha[0] = gamma[0] = 1`` and
``sigma[0] = 0``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "Schedule",
    "build_schedule",
    "linear_beta_alpha_bar",
    "cosine_alpha_bar",
    "gamma_variant_timegrad",
    "ddpm_sigma",
]


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=np.float64)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Schedule:
    T: int
    alpha_bar: np.ndarray
    alpha: np.ndarray
    gamma_bar: np.ndarray
    gamma: np.ndarray
    eta: float
    sigma: np.ndarray
    meta: dict = field(default_factory=dict, compare=False)

    @classmethod
    def from_tables(
        cls,
        alpha_bar,
        gamma_bar=None,
        eta: float = 0.0,
        stochastic: bool = False,
        meta: dict | None = None,
    ) -> "Schedule":
        """Assemble a schedule from cumulative tables of length ``T + 1``.

        When ``gamma_bar`` is omitted it follows ``eta * alpha_bar + (1 - eta)``.
        """
        alpha_bar = np.asarray(alpha_bar, dtype=np.float64)
        if alpha_bar.ndim != 1 or alpha_bar.size < 2:
            raise ValueError("alpha_bar needs at least two entries (t = 0 and t = 1)")
        if not 0.0 <= eta <= 1.0:
            raise ValueError(f"eta must lie in [0, 1], got {eta}")
        if alpha_bar[0] != 1.0:
            raise ValueError("alpha_bar[0] must equal 1")
        if np.any(~np.isfinite(alpha_bar)) or np.any(alpha_bar <= 0.0) or np.any(alpha_bar > 1.0):
            raise ValueError("alpha_bar entries must lie in (0, 1]")
        if gamma_bar is None:
            gamma_bar = eta * alpha_bar + (1.0 - eta)
        gamma_bar = np.asarray(gamma_bar, dtype=np.float64)
        if gamma_bar.shape != alpha_bar.shape:
            raise ValueError("gamma_bar and alpha_bar must have the same length")
        if gamma_bar[0] != 1.0:
            raise ValueError("gamma_bar[0] must equal 1")
        if np.any(gamma_bar <= 0.0) or np.any(gamma_bar > 1.0):
            raise ValueError("gamma_bar entries must lie in (0, 1]")

        alpha = np.ones_like(alpha_bar)
        alpha[1:] = alpha_bar[1:] / alpha_bar[:-1]
        gamma = np.ones_like(gamma_bar)
        gamma[1:] = gamma_bar[1:] / gamma_bar[:-1]
        if np.any(alpha > 1.0 + 1e-12) or np.any(gamma > 1.0 + 1e-12):
            raise ValueError("cumulative tables must be non-increasing")
        alpha = np.minimum(alpha, 1.0)
        gamma = np.minimum(gamma, 1.0)
        sigma = ddpm_sigma(alpha_bar) if stochastic else np.zeros_like(alpha_bar)
        T = alpha_bar.size - 1
        return cls(
            T=T,
            alpha_bar=_readonly(alpha_bar),
            alpha=_readonly(alpha),
            gamma_bar=_readonly(gamma_bar),
            gamma=_readonly(gamma),
            eta=float(eta),
            sigma=_readonly(sigma),
            meta=dict(meta or {}),
        )

    def to_manifest(self) -> dict:
        return {
            "T": self.T,
            "eta": self.eta,
            **self.meta,
            "alpha_bar": self.alpha_bar.tolist(),
            "gamma_bar": self.gamma_bar.tolist(),
            "sigma": self.sigma.tolist(),
        }

    @property
    def is_standard(self) -> bool:
        return bool(np.all(self.gamma_bar == 1.0))


def linear_beta_alpha_bar(T: int, beta_start: float = 1e-4, beta_end: float = 0.02) -> np.ndarray:
    betas = np.linspace(beta_start, beta_end, T, dtype=np.float64)
    if np.any(betas <= 0.0) or np.any(betas >= 1.0):
        raise ValueError("linear betas must lie in (0, 1)")
    return np.concatenate([[1.0], np.cumprod(1.0 - betas)])


def cosine_alpha_bar(T: int, s: float = 0.008, max_beta: float = 0.999) -> np.ndarray:
    # Nichol & Dhariwal cosine family with per-step beta clipping.
    f = lambda u: math.cos((u / T + s) / (1 + s) * math.pi / 2) ** 2
    betas = np.array([min(1 - f(t + 1) / f(t), max_beta) for t in range(T)])
    return np.concatenate([[1.0], np.cumprod(1.0 - betas)])


def ddpm_sigma(alpha_bar: np.ndarray) -> np.ndarray:
    """sigma_t = sqrt((1 - abar_{t-1}) / (1 - abar_t) * (1 - alpha_t))."""
    alpha_bar = np.asarray(alpha_bar, dtype=np.float64)
    sigma = np.zeros_like(alpha_bar)
    ab_prev, ab = alpha_bar[:-1], alpha_bar[1:]
    sigma[1:] = np.sqrt((1.0 - ab_prev) / (1.0 - ab) * (1.0 - ab / ab_prev))
    return sigma


def gamma_variant_timegrad(alpha, scale: float = 0.3):
    """Per-step ``gamma_t = 1 - scale * (1 - alpha_t)`` and its running product.

    ``alpha`` holds the per-step ratios for t = 1..T (no t = 0 slot).  Returns
    ``(gamma, gamma_bar)`` where ``gamma_bar`` has a leading 1 for t = 0.
    """
    alpha = np.asarray(alpha, dtype=np.float64)
    if np.any(alpha <= 0.0) or np.any(alpha > 1.0):
        raise ValueError("alpha entries must lie in (0, 1]")
    gamma = 1.0 - scale * (1.0 - alpha)
    return gamma, np.concatenate([[1.0], np.cumprod(gamma)])


def build_schedule(
    T: int,
    family: str = "linear",
    eta: float = 0.5,
    sigma: str = "ddim",
    gamma_rule: str = "default",
    **family_kwargs,
) -> Schedule:
    """Build a schedule.

    Parameters
    ----------
    T : int
        Number of diffusion steps.
    family : {"linear", "cosine"}
        Family of the cumulative signal table.  Extra keyword arguments go to
        :func:`linear_beta_alpha_bar` or :func:`cosine_alpha_bar`.
    eta : float
        Mixing factor; ``gamma_bar = eta * alpha_bar + (1 - eta)``.
    sigma : {"ddim", "ddpm"}
        ``"ddim"`` gives all-zero sampler variance, ``"ddpm"`` the posterior choice.
    gamma_rule : {"default", "timegrad"}
        ``"timegrad"`` ignores ``eta`` for the dynamics table and uses
        ``1 - gamma_t = 0.3 (1 - alpha_t)``.
    """
    if int(T) != T or T < 1:
        raise ValueError(f"T must be a positive integer, got {T}")
    if not 0.0 <= eta <= 1.0:
        raise ValueError(f"eta must lie in [0, 1], got {eta}")
    if sigma not in ("ddim", "ddpm"):
        raise ValueError(f"unknown sigma mode {sigma!r}")
    if family == "linear":
        alpha_bar = linear_beta_alpha_bar(T, **family_kwargs)
    elif family == "cosine":
        alpha_bar = cosine_alpha_bar(T, **family_kwargs)
    else:
        raise ValueError(f"unknown schedule family {family!r}")

    gamma_bar = None
    if gamma_rule == "timegrad":
        _, gamma_bar = gamma_variant_timegrad(alpha_bar[1:] / alpha_bar[:-1])
    elif gamma_rule != "default":
        raise ValueError(f"unknown gamma rule {gamma_rule!r}")
    meta = {"family": family, "sigma_mode": sigma, "gamma_rule": gamma_rule, **family_kwargs}
    return Schedule.from_tables(alpha_bar, gamma_bar, eta=eta, stochastic=sigma == "ddpm", meta=meta)
