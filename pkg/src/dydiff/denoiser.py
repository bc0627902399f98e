"""Reference noise-prediction network with hand-written reverse-mode gradients.

The network is a residual MLP on the concatenation of the flattened noisy
target block, the flattened observations and a sinusoidal embedding of the
diffusion step.  All parameters live in one flat float64 vector; ``layout``
maps layer names to slices of it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

CHECKPOINT_VERSION = 1


class NumericFailure(FloatingPointError):
    """A non-finite value appeared; ``where`` names the layer or batch row."""

    def __init__(self, where: str):
        super().__init__(f"non-finite values in {where}")
        self.where = where


@dataclass(frozen=True)
class Slot:
    name: str
    offset: int
    shape: tuple[int, ...]

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))


def time_embedding(t, dim: int) -> np.ndarray:
    t = np.asarray(t, dtype=np.float64).reshape(-1)
    half = dim // 2
    freqs = np.exp(-math.log(10000.0) * np.arange(half) / half)
    ang = t[:, None] * freqs[None, :]
    return np.concatenate([np.sin(ang), np.cos(ang)], axis=1)


def _silu(z):
    s = 0.5 * (1.0 + np.tanh(0.5 * z))
    with np.errstate(invalid="ignore"):  # non-finite inputs are reported by _check
        return z * s, s


class ResidualMLP:
    """``eps_theta(x_t^{1:S}, x^{-P:0}, t)`` for frames of a fixed shape."""

    def __init__(self, frame_shape, S: int, P: int, width: int = 128, depth: int = 2, time_dim: int = 32,
                 linear_skip: bool = True):
        self.frame_shape = tuple(int(d) for d in frame_shape)
        self.linear_skip = bool(linear_skip)
        self.S, self.P = int(S), int(P)
        self.width, self.depth, self.time_dim = int(width), int(depth), int(time_dim)
        if self.time_dim % 2:
            raise ValueError("time_dim must be even")
        self.frame_size = int(np.prod(self.frame_shape)) if self.frame_shape else 1
        self.in_dim = (self.S + self.P + 1) * self.frame_size + self.time_dim
        self.out_dim = self.S * self.frame_size

        shapes = [("in.w", (self.in_dim, self.width)), ("in.b", (self.width,))]
        for k in range(self.depth):
            shapes += [
                (f"block{k}.w1", (self.width, self.width)),
                (f"block{k}.b1", (self.width,)),
                (f"block{k}.w2", (self.width, self.width)),
                (f"block{k}.b2", (self.width,)),
            ]
        shapes += [("out.w", (self.width, self.out_dim)), ("out.b", (self.out_dim,))]
        if self.linear_skip:
            # zero-initialised shortcuts: a linear map of all inputs and a
            # time-dependent elementwise gain on the noisy block
            shapes += [
                ("skip.w", (self.in_dim, self.out_dim)),
                ("gate.w", (self.time_dim, self.out_dim)),
                ("gate.b", (self.out_dim,)),
            ]
        self.layout: list[Slot] = []
        off = 0
        for name, shape in shapes:
            slot = Slot(name, off, shape)
            self.layout.append(slot)
            off += slot.size
        self.num_params = off

    def config(self) -> dict:
        return {
            "frame_shape": list(self.frame_shape),
            "S": self.S,
            "P": self.P,
            "width": self.width,
            "depth": self.depth,
            "time_dim": self.time_dim,
            "linear_skip": self.linear_skip,
        }

    def unpack(self, params: np.ndarray) -> dict[str, np.ndarray]:
        if params.shape != (self.num_params,):
            raise ValueError(f"expected {self.num_params} parameters, got shape {params.shape}")
        return {s.name: params[s.offset : s.offset + s.size].reshape(s.shape) for s in self.layout}

    def init(self, rng: np.random.Generator) -> np.ndarray:
        theta = np.zeros(self.num_params)
        p = self.unpack(theta)
        p["in.w"][...] = rng.standard_normal(p["in.w"].shape) / math.sqrt(self.in_dim)
        for k in range(self.depth):
            p[f"block{k}.w1"][...] = rng.standard_normal((self.width, self.width)) / math.sqrt(self.width)
            p[f"block{k}.w2"][...] = rng.standard_normal((self.width, self.width)) / math.sqrt(self.width)
        # out.*, skip.* and gate.* stay zero: the untrained model predicts zero noise
        return theta

    # -- forward / backward ------------------------------------------------

    def _features(self, noisy, observations, t):
        noisy = np.asarray(noisy, dtype=np.float64)
        obs = np.asarray(observations, dtype=np.float64)
        B = noisy.shape[0]
        if noisy.shape[1:] != (self.S,) + self.frame_shape:
            raise ValueError(f"noisy block has shape {noisy.shape[1:]}, model expects {(self.S,) + self.frame_shape}")
        if obs.shape != (B, self.P + 1) + self.frame_shape:
            raise ValueError(f"observations have shape {obs.shape}, model expects {(B, self.P + 1) + self.frame_shape}")
        t = np.broadcast_to(np.asarray(t), (B,))
        return np.concatenate(
            [noisy.reshape(B, -1), obs.reshape(B, -1), time_embedding(t, self.time_dim)], axis=1
        )

    def _forward(self, p, X):
        cache = {"X": X}
        z = X @ p["in.w"] + p["in.b"]
        h, sig = _silu(z)
        cache["in"] = (z, sig)
        _check(h, "in")
        for k in range(self.depth):
            cache[f"h{k}"] = h
            z1 = h @ p[f"block{k}.w1"] + p[f"block{k}.b1"]
            u, s1 = _silu(z1)
            cache[f"block{k}"] = (z1, s1, u)
            h = h + u @ p[f"block{k}.w2"] + p[f"block{k}.b2"]
            _check(h, f"block{k}")
        cache["hL"] = h
        out = h @ p["out.w"] + p["out.b"]
        if self.linear_skip:
            temb = X[:, -self.time_dim :]
            noisy = X[:, : self.out_dim]
            out = out + X @ p["skip.w"] + (temb @ p["gate.w"] + p["gate.b"]) * noisy
        _check(out, "out")
        return out, cache

    def predict_noise(self, params, noisy, observations, t) -> np.ndarray:
        """Predicted correlated noise with the same shape as ``noisy``.

        Accepts a single window (``noisy`` of shape ``(S, *frame)``) or a batch
        with a leading batch axis.
        """
        single = np.ndim(noisy) == len(self.frame_shape) + 1
        if single:
            noisy = np.asarray(noisy)[None]
            observations = np.asarray(observations)[None]
        out, _ = self._forward(self.unpack(params), self._features(noisy, observations, t))
        out = out.reshape(np.shape(noisy))
        return out[0] if single else out

    def bind(self, params):
        """Return ``f(x_t, observations, t)`` as used by the samplers."""
        return lambda x_t, obs, t: self.predict_noise(params, x_t, obs, t)

    def loss_and_gradient(self, params, noisy, observations, t, target):
        """Mean squared error against ``target`` and its gradient w.r.t. ``params``."""
        p = self.unpack(params)
        X = self._features(noisy, observations, t)
        out, cache = self._forward(p, X)
        target = np.asarray(target, dtype=np.float64).reshape(out.shape)
        resid = out - target
        per_row = np.mean(resid * resid, axis=1)
        bad = np.flatnonzero(~np.isfinite(per_row))
        if bad.size:
            raise NumericFailure(f"loss of batch item {int(bad[0])}")
        loss = float(np.mean(per_row))

        grad = np.zeros_like(params)
        g = self.unpack(grad)
        dout = 2.0 * resid / resid.size
        g["out.w"][...] = cache["hL"].T @ dout
        g["out.b"][...] = dout.sum(axis=0)
        if self.linear_skip:
            g["skip.w"][...] = X.T @ dout
            dgate = dout * X[:, : self.out_dim]
            g["gate.w"][...] = X[:, -self.time_dim :].T @ dgate
            g["gate.b"][...] = dgate.sum(axis=0)
        dh = dout @ p["out.w"].T
        for k in reversed(range(self.depth)):
            z1, s1, u = cache[f"block{k}"]
            g[f"block{k}.w2"][...] = u.T @ dh
            g[f"block{k}.b2"][...] = dh.sum(axis=0)
            dz1 = (dh @ p[f"block{k}.w2"].T) * (s1 + z1 * s1 * (1.0 - s1))
            g[f"block{k}.w1"][...] = cache[f"h{k}"].T @ dz1
            g[f"block{k}.b1"][...] = dz1.sum(axis=0)
            dh = dh + dz1 @ p[f"block{k}.w1"].T
        z0, s0 = cache["in"]
        dz0 = dh * (s0 + z0 * s0 * (1.0 - s0))
        g["in.w"][...] = X.T @ dz0
        g["in.b"][...] = dz0.sum(axis=0)
        if not np.all(np.isfinite(grad)):
            raise NumericFailure("gradient")
        return loss, grad


def _check(a, layer):
    if not np.all(np.isfinite(a)):
        raise NumericFailure(f"layer {layer}")


# -- checkpoints -----------------------------------------------------------


def save_params(path, model: ResidualMLP, params: np.ndarray) -> None:
    """Write ``<path>.bin`` (little-endian float64) and ``<path>.layout``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    params = np.asarray(params, dtype="<f8")
    if params.shape != (model.num_params,):
        raise ValueError("parameter vector does not match the model layout")
    lines = [f"version {CHECKPOINT_VERSION}", f"total {model.num_params}"]
    lines += [f"{s.name} {s.offset} {s.size} {'x'.join(map(str, s.shape))}" for s in model.layout]
    _atomic_write(path.with_suffix(".bin"), params.tobytes())
    _atomic_write(path.with_suffix(".layout"), ("\n".join(lines) + "\n").encode())


def load_params(path, model: ResidualMLP) -> np.ndarray:
    path = Path(path)
    lines = path.with_suffix(".layout").read_text().splitlines()
    version = int(lines[0].split()[1])
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    total = int(lines[1].split()[1])
    if total != model.num_params:
        raise ValueError(f"checkpoint holds {total} parameters, model needs {model.num_params}")
    for line, slot in zip(lines[2:], model.layout):
        name, off, size, _ = line.split()
        if (name, int(off), int(size)) != (slot.name, slot.offset, slot.size):
            raise ValueError(f"layout mismatch at {name}")
    params = np.fromfile(path.with_suffix(".bin"), dtype="<f8")
    if params.size != total:
        raise ValueError(f"checkpoint payload has {params.size} values, layout says {total}")
    return params.astype(np.float64)


def _atomic_write(path: Path, data: bytes) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(data)
    tmp.replace(path)
