"""The temporal mixture along the prediction axis and its exact inverse.

``dynamics`` maps a state sequence ``x^L..x^R`` to

    d^L = x^L
    d^s = sqrt(g) * x^s + sqrt(1 - g) * d^{s-1}

and ``inverse_dynamics`` undoes it.  The inverse multiplies roundoff by up to
``(1 + sqrt(1 - g)) / sqrt(g)`` per state, so ``g`` below ``MIN_GAMMA_BAR`` is
rejected outright.

The state axis is ``axis`` (0 for a single sequence, 1 for a batch).  ``g``
may be a scalar or an array that broadcasts against one state slice, e.g. one
value per batch row.
"""

from __future__ import annotations

import numpy as np

MIN_GAMMA_BAR = 1e-6


def _prepare(x, gamma_bar, axis: int, lower: float):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 0 or x.shape[axis] == 0:
        raise ValueError("state sequence must be non-empty")
    g = np.asarray(gamma_bar, dtype=np.float64)
    if np.any(~np.isfinite(g)) or np.any(g <= 0.0) or np.any(g > 1.0):
        raise ValueError(f"gamma_bar must lie in (0, 1], got {gamma_bar!r}")
    if np.any(g < lower):
        raise ValueError(f"gamma_bar below {lower:g} makes inverse_dynamics ill-conditioned")
    xs = np.moveaxis(x, axis, 0)
    slice_ndim = xs.ndim - 1
    if g.ndim > slice_ndim:
        raise ValueError("gamma_bar has more dimensions than a state slice")
    g = g.reshape(g.shape + (1,) * (slice_ndim - g.ndim))
    return xs, np.sqrt(g), np.sqrt(1.0 - g)


def dynamics(x, gamma_bar, axis: int = 0) -> np.ndarray:
    xs, keep, carry = _prepare(x, gamma_bar, axis, 0.0)
    out = np.empty(np.broadcast_shapes(xs.shape, (1,) + keep.shape))
    out[0] = xs[0]
    for s in range(1, xs.shape[0]):
        out[s] = keep * xs[s] + carry * out[s - 1]
    return np.moveaxis(out, 0, axis)


def inverse_dynamics(d, gamma_bar, axis: int = 0) -> np.ndarray:
    ds, keep, carry = _prepare(d, gamma_bar, axis, MIN_GAMMA_BAR)
    out = np.empty(np.broadcast_shapes(ds.shape, (1,) + keep.shape))
    out[0] = ds[0]
    out[1:] = (ds[1:] - carry * ds[:-1]) / keep
    return np.moveaxis(out, 0, axis)


def dynamics_closed_form(x, gamma_bar) -> np.ndarray:
    """Explicit weighted sum over the history; an independent check of the recursion."""
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[0]
    r = np.sqrt(1.0 - gamma_bar)
    out = np.empty_like(x)
    for s in range(n):
        acc = r**s * x[0]
        for k in range(s):
            acc = acc + np.sqrt(gamma_bar) * r**k * x[s - k]
        out[s] = acc
    return out
