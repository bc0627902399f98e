"""Experiment configuration files (TOML).

Grammar: a TOML document with optional top-level ``seed`` (int) and ``out``
(string), and the tables below.  Every key is optional and takes the listed
type; any key not listed is an error.

[dataset]   generator = "linear_gaussian" | "advected_blobs", path, num_sequences,
            length, test_sequences, seed, dim, transition (float or "rotation"),
            radius, angle, noise_scale, grid, velocity (two floats),
            velocity_noise, num_blobs, width
[window]    P, S
[schedule]  T, family = "linear" | "cosine", eta, sigma = "ddim" | "ddpm",
            gamma_rule = "default" | "timegrad", beta_start, beta_end
            (the beta pair only applies to the linear family)
[model]     width, depth, time_dim
[train]     steps, batch_size, learning_rate, optimizer = "adam" | "sgd",
            eval_every, checkpoint_every, independent_noise
[sampler]   kind, num_steps, stochastic, ensemble, cases
[metrics]   crps_window, csi_window, csi_threshold (float, or "p90" for the
            90th percentile of the truth), psnr_range
"""

from __future__ import annotations

import copy
import sys

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

NUM = (int, float)

SCHEMA = {
    "seed": int,
    "out": str,
    "dataset": {
        "generator": str, "path": str, "num_sequences": int, "length": int, "test_sequences": int,
        "seed": int, "dim": int, "transition": (float, int, str), "radius": NUM, "angle": NUM,
        "noise_scale": NUM, "grid": int, "velocity": list, "velocity_noise": NUM, "num_blobs": int,
        "width": NUM,
    },
    "window": {"P": int, "S": int},
    "schedule": {"T": int, "family": str, "eta": NUM, "sigma": str, "gamma_rule": str,
                 "beta_start": NUM, "beta_end": NUM},
    "model": {"width": int, "depth": int, "time_dim": int},
    "train": {"steps": int, "batch_size": int, "learning_rate": NUM, "optimizer": str,
              "eval_every": int, "checkpoint_every": int, "independent_noise": bool},
    "sampler": {"kind": str, "num_steps": int, "stochastic": bool, "ensemble": int, "cases": int},
    "metrics": {"crps_window": int, "csi_window": int, "csi_threshold": (float, int, str), "psnr_range": NUM},
}

DEFAULTS = {
    "seed": 0,
    "out": "runs/default",
    "dataset": {"generator": "linear_gaussian", "path": "data/dataset.dydf", "num_sequences": 264,
                "length": 24, "test_sequences": 64, "seed": 1234, "dim": 4, "transition": "rotation",
                "radius": 0.97, "angle": 0.35, "noise_scale": 0.3, "grid": 8, "velocity": [0.8, 0.3],
                "velocity_noise": 0.15, "num_blobs": 2, "width": 1.5},
    "window": {"P": 2, "S": 6},
    "schedule": {"T": 1000, "family": "linear", "eta": 0.5, "sigma": "ddim", "gamma_rule": "default",
                 "beta_start": 1e-4, "beta_end": 0.01},
    "model": {"width": 128, "depth": 2, "time_dim": 32},
    "train": {"steps": 3000, "batch_size": 64, "learning_rate": 1e-3, "optimizer": "adam",
              "eval_every": 100, "checkpoint_every": 1000, "independent_noise": False},
    "sampler": {"kind": "dydiff-ddim", "num_steps": 50, "stochastic": False, "ensemble": 8, "cases": 64},
    "metrics": {"crps_window": 1, "csi_window": 1, "csi_threshold": "p90", "psnr_range": 0.0},
}


class ConfigError(ValueError):
    def __init__(self, problems: list[str]):
        super().__init__("; ".join(problems))
        self.problems = problems


def _check(schema, data, prefix, problems) -> dict:
    """Append key and type problems; return the subset of ``data`` that passed."""
    good = {}
    for key, value in data.items():
        name = f"{prefix}{key}"
        if key not in schema:
            problems.append(f"unknown key {name}")
            continue
        expected = schema[key]
        if isinstance(expected, dict):
            if not isinstance(value, dict):
                problems.append(f"{name} must be a table")
            else:
                good[key] = _check(expected, value, name + ".", problems)
        else:
            allowed = expected if isinstance(expected, tuple) else (expected,)
            if (isinstance(value, bool) and bool not in allowed) or not isinstance(value, allowed):
                problems.append(f"{name} has the wrong type ({type(value).__name__})")
            else:
                good[key] = value
    return good


def _semantic(cfg: dict, problems: list[str]) -> None:
    ds, win, sch, smp = cfg["dataset"], cfg["window"], cfg["schedule"], cfg["sampler"]
    if ds["generator"] not in ("linear_gaussian", "advected_blobs"):
        problems.append(f"dataset.generator {ds['generator']!r} is not supported")
    if win["P"] < 0 or win["S"] < 1:
        problems.append("window needs P >= 0 and S >= 1")
    if ds["length"] < win["P"] + win["S"] + 1:
        problems.append("dataset.length is shorter than one window (P + S + 1)")
    if not 0 < ds["test_sequences"] < ds["num_sequences"]:
        problems.append("dataset.test_sequences must be between 1 and num_sequences - 1")
    if sch["T"] < 1:
        problems.append("schedule.T must be positive")
    if not 0.0 <= sch["eta"] <= 1.0:
        problems.append("schedule.eta must lie in [0, 1]")
    if sch["family"] not in ("linear", "cosine"):
        problems.append(f"schedule.family {sch['family']!r} is not supported")
    if sch["sigma"] not in ("ddim", "ddpm"):
        problems.append("schedule.sigma must be 'ddim' or 'ddpm'")
    if sch["family"] == "linear" and not 0 < sch["beta_start"] <= sch["beta_end"] < 1:
        problems.append("schedule needs 0 < beta_start <= beta_end < 1")
    if sch["gamma_rule"] not in ("default", "timegrad"):
        problems.append("schedule.gamma_rule must be 'default' or 'timegrad'")
    if not 1 <= smp["num_steps"] <= sch["T"]:
        problems.append("sampler.num_steps must lie in [1, schedule.T]")
    if smp["kind"] not in ("dydiff-ddim", "dydiff-ddpm", "dpm-ddim", "dpm-ddpm"):
        problems.append(f"sampler.kind {smp['kind']!r} is not supported")
    if smp["ensemble"] < 1 or smp["cases"] < 1:
        problems.append("sampler.ensemble and sampler.cases must be positive")
    tr = cfg["train"]
    if tr["steps"] < 0 or tr["batch_size"] < 1 or not tr["learning_rate"] > 0:
        problems.append("train.steps >= 0, train.batch_size >= 1 and train.learning_rate > 0 are required")
    if tr["optimizer"] not in ("adam", "sgd"):
        problems.append("train.optimizer must be 'adam' or 'sgd'")
    vel = ds["velocity"]
    if len(vel) != 2 or not all(isinstance(v, NUM) and not isinstance(v, bool) for v in vel):
        problems.append("dataset.velocity must be a list of two numbers")
    thr = cfg["metrics"]["csi_threshold"]
    if isinstance(thr, str) and thr != "p90":
        problems.append("metrics.csi_threshold must be a number or 'p90'")


def validate(cfg: dict) -> None:
    """Raise :class:`ConfigError` listing every problem found."""
    problems: list[str] = []
    good = _check(SCHEMA, cfg, "", problems)
    # range checks still run on whatever passed the type check
    _semantic(merge(DEFAULTS, good), problems)
    if problems:
        raise ConfigError(problems)


def merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in override.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = merge(out[k], v)
        else:
            out[k] = v
    return out


def load_config(path=None, overrides: dict | None = None) -> dict:
    raw: dict = {}
    if path is not None:
        with open(path, "rb") as fh:
            try:
                raw = tomllib.load(fh)
            except tomllib.TOMLDecodeError as exc:
                raise ConfigError([f"{path}: {exc}"]) from None
    cfg = merge(merge(DEFAULTS, raw), overrides or {})
    validate(cfg)
    return cfg
