"""Seedable, splittable random streams.

All randomness in the package flows through :func:`make_rng`, which builds a
Philox (counter-based) generator keyed by a root seed plus an optional tuple
of integer stream keys.  Two calls with the same ``(seed, *keys)`` replay the
same stream; distinct keys give statistically independent streams.
"""

from __future__ import annotations

import numpy as np


def make_rng(seed: int, *keys: int) -> np.random.Generator:
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(k) for k in keys))
    return np.random.Generator(np.random.Philox(ss))


def split(rng: np.random.Generator, n: int) -> list[np.random.Generator]:
    """Derive ``n`` child generators from ``rng`` (consumes parent state)."""
    return list(rng.spawn(n))


def rng_state(rng: np.random.Generator) -> dict:
    """JSON-safe snapshot of a Philox stream (arrays become lists of ints)."""
    st = rng.bit_generator.state
    return {
        **st,
        "state": {k: [int(v) for v in arr] for k, arr in st["state"].items()},
        "buffer": [int(v) for v in st["buffer"]],
    }


def restore_rng(state: dict) -> np.random.Generator:
    if state.get("bit_generator") != "Philox":
        raise ValueError(f"cannot restore a {state.get('bit_generator')!r} stream")
    st = dict(state)
    st["state"] = {k: np.asarray(v, dtype=np.uint64) for k, v in state["state"].items()}
    st["buffer"] = np.asarray(state["buffer"], dtype=np.uint64)
    bg = np.random.Philox()
    bg.state = st
    return np.random.Generator(bg)
