"""Forecast verification scores: neighborhood CRPS, CSI, PSNR, summed CRPS."""

from __future__ import annotations

import math
from typing import NamedTuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.stats import norm


def pool2d(x, window: int, mode: str = "avg") -> np.ndarray:
    """Stride-1 ``window x window`` pooling over the last two axes (valid positions only)."""
    x = np.asarray(x, dtype=np.float64)
    if window == 1:
        return x
    if x.ndim < 2 or x.shape[-1] < window or x.shape[-2] < window:
        raise ValueError(f"window {window} exceeds the spatial extent {x.shape[-2:]}")
    v = sliding_window_view(x, (window, window), axis=(-2, -1))
    if mode == "avg":
        return v.mean(axis=(-2, -1))
    if mode == "max":
        return v.max(axis=(-2, -1))
    raise ValueError(f"unknown pooling mode {mode!r}")


def _crps_elementwise(members: np.ndarray, truth: np.ndarray) -> np.ndarray:
    """``mean|X - y| - 1/(2 M^2) sum_ij |X_i - X_j|`` per element (members on axis 0)."""
    M = members.shape[0]
    skill = np.abs(members - truth[None]).mean(axis=0)
    gaps = np.diff(np.sort(members, axis=0), axis=0)
    # sum_ij |X_i - X_j| = 2 sum_k k (M - k) (X_(k+1) - X_(k)); every term is >= 0
    k = np.arange(1, M)
    w = (k * (M - k)).astype(np.float64).reshape((M - 1,) + (1,) * (members.ndim - 1))
    spread = 2.0 * np.sum(w * gaps, axis=0)
    return skill - spread / (2.0 * M * M)


def crps_ensemble(ensemble, truth, pool: str | None = None, window: int = 1) -> float:
    """Sample CRPS of an ensemble ``(M, *shape)`` against ``truth`` ``(*shape)``.

    With ``window > 1`` both fields are pooled over their last two axes first
    (``pool`` is ``"avg"`` or ``"max"``).  The score is averaged over all
    remaining elements.
    """
    ens = np.asarray(ensemble, dtype=np.float64)
    y = np.asarray(truth, dtype=np.float64)
    if ens.shape[0] < 2:
        raise ValueError("CRPS needs at least two ensemble members")
    if ens.shape[1:] != y.shape:
        raise ValueError(f"ensemble members have shape {ens.shape[1:]}, truth has {y.shape}")
    if window < 1:
        raise ValueError("window must be >= 1")
    if window > 1:
        mode = pool or "avg"
        ens, y = pool2d(ens, window, mode), pool2d(y, window, mode)
    return float(np.mean(_crps_elementwise(ens, y)))


def gaussian_crps(mu, sigma, y):
    """Closed-form CRPS of ``N(mu, sigma^2)`` at ``y``."""
    z = (np.asarray(y) - mu) / sigma
    return sigma * (z * (2 * norm.cdf(z) - 1) + 2 * norm.pdf(z) - 1 / math.sqrt(math.pi))


def csi(pred, truth, threshold: float, window: int = 1, pool: str = "avg") -> float:
    """Critical success index ``hits / (hits + misses + false alarms)``.

    Both fields are pooled then compared against ``threshold`` (``>=`` is an
    event).  Returns 1.0 when neither field has any event.
    """
    if window < 1:
        raise ValueError("window must be >= 1")
    p = pool2d(pred, window, pool) >= threshold
    o = pool2d(truth, window, pool) >= threshold
    hits = np.sum(p & o)
    misses = np.sum(~p & o)
    false_alarms = np.sum(p & ~o)
    denom = hits + misses + false_alarms
    return 1.0 if denom == 0 else float(hits / denom)


def psnr(pred, truth, data_range: float) -> float:
    if data_range <= 0:
        raise ValueError("data_range must be positive")
    mse = float(np.mean((np.asarray(pred, dtype=np.float64) - np.asarray(truth, dtype=np.float64)) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(data_range**2 / mse)


class SummedCRPS(NamedTuple):
    value: float
    normalized: bool


def crps_sum(ensemble, truth) -> SummedCRPS:
    """CRPS of the variate-summed series, normalized by ``sum |sum_d y|``.

    ``ensemble`` is ``(M, steps, dims)``, ``truth`` ``(steps, dims)``.  If the
    normalizer is zero the raw summed CRPS is returned with ``normalized=False``.
    """
    ens = np.asarray(ensemble, dtype=np.float64)
    y = np.asarray(truth, dtype=np.float64)
    if ens.shape[0] < 2:
        raise ValueError("CRPS needs at least two ensemble members")
    ens_sum = ens.sum(axis=-1)
    y_sum = y.sum(axis=-1)
    total = float(np.sum(_crps_elementwise(ens_sum, y_sum)))
    denom = float(np.sum(np.abs(y_sum)))
    if denom == 0.0:
        return SummedCRPS(total, False)
    return SummedCRPS(total / denom, True)
