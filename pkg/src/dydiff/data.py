"""Synthetic temporal datasets, windowing, and the binary container format.

Container layout (little-endian)::

    offset  size  field
    0       4     magic b"DYDF"
    4       2     format version (uint16)
    6       1     dtype code (1 = float64)
    7       1     rank (<= 6)
    8       48    six uint64 dims (unused slots are 0)
    56      8     byte length of the JSON metadata trailer (uint64)
    64      ...   row-major float64 payload
    ...     ...   UTF-8 JSON metadata trailer
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.linalg import solve_discrete_lyapunov

from .rng import make_rng

MAGIC = b"DYDF"
FORMAT_VERSION = 1
DTYPE_FLOAT64 = 1
MAX_RANK = 6
_HEADER = struct.Struct("<4sHBB6QQ")
assert _HEADER.size == 64


def fingerprint(frames: np.ndarray) -> str:
    a = np.ascontiguousarray(frames, dtype="<f8")
    h = hashlib.sha256()
    h.update(repr(a.shape).encode())
    h.update(a.tobytes())
    return h.hexdigest()


@dataclass
class Dataset:
    frames: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float64)
        if self.frames.ndim < 2:
            raise ValueError("frames need at least (num_sequences, length) axes")
        if not np.all(np.isfinite(self.frames)):
            raise ValueError("dataset contains non-finite values")
        self.meta.setdefault("fingerprint", fingerprint(self.frames))

    @property
    def fingerprint(self) -> str:
        return self.meta["fingerprint"]

    @property
    def frame_shape(self) -> tuple[int, ...]:
        return self.frames.shape[2:]

    def normalized(self) -> np.ndarray:
        """Frames after the stored affine normalizer ``(x - shift) / scale``."""
        norm = self.meta.get("normalizer", {"shift": 0.0, "scale": 1.0})
        return (self.frames - norm["shift"]) / norm["scale"]

    def split(self, n_train: int) -> tuple["Dataset", "Dataset"]:
        """Split along sequences; both halves keep the parent's normalizer."""
        base = {k: v for k, v in self.meta.items() if k != "fingerprint"}
        return Dataset(self.frames[:n_train], dict(base)), Dataset(self.frames[n_train:], dict(base))


def _with_normalizer(frames, meta) -> Dataset:
    scale = float(frames.std())
    meta["normalizer"] = {"shift": float(frames.mean()), "scale": scale if scale > 0 else 1.0}
    return Dataset(frames, meta)


# -- generators --------------------------------------------------------------


def rotation_transition(dim: int, radius: float = 0.95, angle: float = 0.3) -> np.ndarray:
    """Block-diagonal damped rotations (a stable, oscillating transition)."""
    A = np.zeros((dim, dim))
    c, s = np.cos(angle), np.sin(angle)
    for i in range(0, dim - 1, 2):
        A[i : i + 2, i : i + 2] = radius * np.array([[c, -s], [s, c]])
    if dim % 2:
        A[-1, -1] = radius
    return A


def gen_linear_gaussian(num_sequences: int, length: int, dim: int, transition=0.9, noise_scale: float = 0.1,
                        seed: int = 0) -> Dataset:
    """``x_{k+1} = A x_k + w_k`` with ``w_k ~ N(0, q^2 I)``, started from stationarity.

    ``transition`` is a scalar ``a`` (meaning ``A = a I``) or a ``dim x dim`` matrix.
    """
    A = np.asarray(transition, dtype=np.float64)
    A = A * np.eye(dim) if A.ndim == 0 else A
    if A.shape != (dim, dim):
        raise ValueError(f"transition must be scalar or {dim}x{dim}")
    radius = max(abs(np.linalg.eigvals(A))) if dim else 0.0
    if radius >= 1.0:
        raise ValueError(f"transition has spectral radius {radius:.4f} >= 1 (non-stationary)")
    q = float(noise_scale)
    stationary = solve_discrete_lyapunov(A, q * q * np.eye(dim))
    rng = make_rng(seed, 0)
    L = np.linalg.cholesky(stationary) if q > 0 else np.zeros((dim, dim))
    x = np.empty((num_sequences, length, dim))
    x[:, 0] = rng.standard_normal((num_sequences, dim)) @ L.T
    for k in range(1, length):
        x[:, k] = x[:, k - 1] @ A.T + q * rng.standard_normal((num_sequences, dim))
    meta = {
        "generator": "linear_gaussian",
        "params": {"dim": dim, "transition": A.tolist(), "noise_scale": q, "length": length,
                   "num_sequences": num_sequences},
        "seed": seed,
    }
    return _with_normalizer(x, meta)


def linear_gaussian_predictive(A, noise_scale: float, x_last, S: int):
    """Mean ``(S, dim)`` and joint covariance ``(S*dim, S*dim)`` of the next ``S`` states."""
    A = np.asarray(A, dtype=np.float64)
    dim = A.shape[0]
    Q = noise_scale**2 * np.eye(dim)
    means = []
    m = np.asarray(x_last, dtype=np.float64)
    for _ in range(S):
        m = A @ m
        means.append(m)
    marg = []
    P = np.zeros((dim, dim))
    for _ in range(S):
        P = A @ P @ A.T + Q
        marg.append(P)
    cov = np.zeros((S * dim, S * dim))
    for i in range(S):
        for j in range(i, S):
            block = np.linalg.matrix_power(A, j - i) @ marg[i]
            cov[j * dim : (j + 1) * dim, i * dim : (i + 1) * dim] = block
            cov[i * dim : (i + 1) * dim, j * dim : (j + 1) * dim] = block.T
    return np.stack(means), cov


def _periodic_bump(grid: int, cx: float, cy: float, width: float) -> np.ndarray:
    coords = np.arange(grid)
    dx = (coords[:, None] - cx + grid / 2) % grid - grid / 2
    dy = (coords[None, :] - cy + grid / 2) % grid - grid / 2
    return np.exp(-(dx**2 + dy**2) / (2 * width**2))


def _shift_periodic(field2d: np.ndarray, shift) -> np.ndarray:
    n0, n1 = field2d.shape
    k0 = np.fft.fftfreq(n0)[:, None]
    k1 = np.fft.fftfreq(n1)[None, :]
    phase = np.exp(-2j * np.pi * (k0 * shift[0] + k1 * shift[1]))
    return np.fft.ifft2(np.fft.fft2(field2d) * phase).real


def gen_advected_blobs(num_sequences: int, length: int, grid: int = 16, velocity=(0.7, 0.4),
                       velocity_noise: float = 0.2, num_blobs: int = 2, width: float = 1.5,
                       seed: int = 0) -> Dataset:
    """Gaussian bumps carried by a random constant velocity with per-step jitter.

    Shifts are applied spectrally on the periodic grid, which conserves the
    per-frame total mass.  Each sequence draws its base velocity as
    ``velocity`` rotated by a random angle; ``velocity_noise`` perturbs each step.
    Frames have shape ``(1, grid, grid)``.
    """
    if grid < 8:
        raise ValueError("grid must be at least 8")
    rng = make_rng(seed, 0)
    v0 = np.asarray(velocity, dtype=np.float64)
    out = np.empty((num_sequences, length, 1, grid, grid))
    for n in range(num_sequences):
        field0 = np.zeros((grid, grid))
        for _ in range(num_blobs):
            cx, cy = rng.uniform(0, grid, size=2)
            field0 += rng.uniform(0.5, 1.5) * _periodic_bump(grid, cx, cy, width)
        theta = rng.uniform(0, 2 * np.pi)
        rot = np.array([[np.cos(theta), -np.sin(theta)], [np.sin(theta), np.cos(theta)]])
        v = rot @ v0
        pos = np.zeros(2)
        out[n, 0, 0] = field0
        for k in range(1, length):
            pos = pos + v + velocity_noise * rng.standard_normal(2)
            out[n, k, 0] = field0 if not pos.any() else _shift_periodic(field0, pos)
    meta = {
        "generator": "advected_blobs",
        "params": {"grid": grid, "velocity": v0.tolist(), "velocity_noise": velocity_noise,
                   "num_blobs": num_blobs, "width": width, "length": length, "num_sequences": num_sequences},
        "seed": seed,
    }
    return _with_normalizer(out, meta)


# -- windows -----------------------------------------------------------------


@dataclass(frozen=True)
class SequenceWindow:
    observations: np.ndarray
    targets: np.ndarray

    def full(self) -> np.ndarray:
        return np.concatenate([self.observations, self.targets], axis=0)


def _window_starts(frames, P, S):
    n_seq, length = frames.shape[:2]
    span = P + S + 1
    if length < span:
        raise ValueError(f"window of {span} states is longer than sequences of length {length}")
    return [(i, k) for i in range(n_seq) for k in range(length - span + 1)]


def window_iter(data, P: int, S: int, shuffle_seed: int | None = None):
    """Yield every contiguous window; never crosses a sequence boundary."""
    frames = data.normalized() if isinstance(data, Dataset) else np.asarray(data, dtype=np.float64)
    starts = _window_starts(frames, P, S)
    if shuffle_seed is not None:
        order = make_rng(shuffle_seed, 0).permutation(len(starts))
        starts = [starts[i] for i in order]
    for i, k in starts:
        w = frames[i, k : k + P + S + 1]
        yield SequenceWindow(w[: P + 1], w[P + 1 :])


def window_array(data, P: int, S: int) -> np.ndarray:
    """All windows stacked as ``(N, P+1+S, *frame)``."""
    frames = data.normalized() if isinstance(data, Dataset) else np.asarray(data, dtype=np.float64)
    span = P + S + 1
    starts = _window_starts(frames, P, S)
    return np.stack([frames[i, k : k + span] for i, k in starts])


# -- container I/O -----------------------------------------------------------


def save_dataset(path, dataset: Dataset, force: bool = False) -> Path:
    path = Path(path)
    if path.exists() and not force:
        raise FileExistsError(f"{path} exists (pass force to overwrite)")
    frames = np.ascontiguousarray(dataset.frames, dtype="<f8")
    if frames.ndim > MAX_RANK:
        raise ValueError(f"rank {frames.ndim} exceeds {MAX_RANK}")
    trailer = json.dumps(dataset.meta, sort_keys=True).encode()
    dims = list(frames.shape) + [0] * (MAX_RANK - frames.ndim)
    header = _HEADER.pack(MAGIC, FORMAT_VERSION, DTYPE_FLOAT64, frames.ndim, *dims, len(trailer))
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + f".tmp{os.getpid()}")
    with open(tmp, "wb") as fh:
        fh.write(header)
        fh.write(frames.tobytes())
        fh.write(trailer)
    tmp.replace(path)
    return path


def load_dataset(path) -> Dataset:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise ValueError(f"{path}: truncated header")
    magic, version, dtype, rank, *rest = _HEADER.unpack_from(raw)
    dims, trailer_len = rest[:MAX_RANK], rest[MAX_RANK]
    if magic != MAGIC:
        raise ValueError(f"{path}: bad magic {magic!r}")
    if version != FORMAT_VERSION or dtype != DTYPE_FLOAT64:
        raise ValueError(f"{path}: unsupported version {version} / dtype {dtype}")
    if not 1 <= rank <= MAX_RANK:
        raise ValueError(f"{path}: bad rank {rank}")
    shape = tuple(dims[:rank])
    n_bytes = 8 * int(np.prod(shape))
    if len(raw) != _HEADER.size + n_bytes + trailer_len:
        raise ValueError(f"{path}: size does not match header")
    frames = np.frombuffer(raw, dtype="<f8", count=n_bytes // 8, offset=_HEADER.size).reshape(shape)
    meta = json.loads(raw[_HEADER.size + n_bytes :].decode())
    ds = Dataset(frames.astype(np.float64), meta)
    if meta.get("fingerprint") != fingerprint(ds.frames):
        raise ValueError(f"{path}: content hash does not match metadata")
    return ds
