"""Experiment driver.

``dydiff gen-data | train | sample | eval | compare``.  Relative paths in a
config resolve against ``$DYDIFF_OUT_ROOT`` (default: the working directory).
Failures print one line ``dydiff-error: <code>: <message>`` to stderr and
exit with status 1 (2 for command-line usage errors).

Run directory layout::

    manifest.json      config echo, schedule tables, dataset fingerprint, label
    loss.csv           step,loss
    checkpoints/       step_XXXXXXX/{params.bin,params.layout,state.json}
    samples/           case_XXXX.dydf, truth_XXXX.dydf, latent_error.csv,
                       sampling.json, optional latents_XXXX.dydf
    metrics.csv        case_id,metric,pool,window,value
    summary.json       mean and std per metric
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import shutil
import sys
from pathlib import Path

import numpy as np

from .config import ConfigError, load_config, validate
from .data import Dataset, gen_advected_blobs, gen_linear_gaussian, load_dataset, rotation_transition, save_dataset, window_array
from .denoiser import NumericFailure, ResidualMLP, load_params
from .experiments import latent_error_curve
from .metrics import crps_ensemble, crps_sum, csi, psnr
from .rng import make_rng
from .sampler import SamplerConfig, sample
from .schedule import build_schedule
from .trainer import TrainConfig, latest_checkpoint, train_loop

log = logging.getLogger("dydiff")

OUT_ROOT_ENV = "DYDIFF_OUT_ROOT"
MANIFEST_VERSION = 1


class CLIError(Exception):
    def __init__(self, code: str, message: str):
        super().__init__(message)
        self.code = code


# -- shared helpers ----------------------------------------------------------


def out_root() -> Path:
    return Path(os.environ.get(OUT_ROOT_ENV, "."))


def _resolve(path) -> Path:
    p = Path(path)
    return p if p.is_absolute() else out_root() / p


def _load_cfg(args) -> dict:
    over: dict = {}
    if getattr(args, "seed", None) is not None:
        over["seed"] = args.seed
    if getattr(args, "eta", None) is not None:
        over.setdefault("schedule", {})["eta"] = args.eta
    if getattr(args, "steps", None) is not None:
        over.setdefault("train", {})["steps"] = args.steps
    if getattr(args, "independent_noise", False):
        over.setdefault("train", {})["independent_noise"] = True
    if getattr(args, "sampler", None) is not None:
        over.setdefault("sampler", {})["kind"] = args.sampler
    if getattr(args, "ensemble", None) is not None:
        over.setdefault("sampler", {})["ensemble"] = args.ensemble
    if args.config is not None and not Path(args.config).exists():
        raise CLIError("missing-config", f"config file {args.config} not found")
    return load_config(args.config, over)


def _write_json(path: Path, obj) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")
    tmp.replace(path)


def _read_manifest(run: Path) -> dict:
    path = run / "manifest.json"
    if not path.exists():
        raise CLIError("missing-run", f"{run} has no manifest.json")
    return json.loads(path.read_text())


def generate_dataset(ds: dict) -> Dataset:
    """Build the configured synthetic dataset; the normalizer comes from the training part only."""
    n, length, seed = ds["num_sequences"], ds["length"], ds["seed"]
    if ds["generator"] == "linear_gaussian":
        tr = ds["transition"]
        if tr == "rotation":
            A = rotation_transition(ds["dim"], ds["radius"], ds["angle"])
        elif isinstance(tr, str):
            raise CLIError("config", f"dataset.transition {tr!r} is neither a number nor 'rotation'")
        else:
            A = float(tr)
        out = gen_linear_gaussian(n, length, ds["dim"], A, ds["noise_scale"], seed)
    else:
        out = gen_advected_blobs(n, length, ds["grid"], tuple(ds["velocity"]), ds["velocity_noise"],
                                 ds["num_blobs"], ds["width"], seed)
    n_train = n - ds["test_sequences"]
    train = out.frames[:n_train]
    scale = float(train.std())
    out.meta["normalizer"] = {"shift": float(train.mean()), "scale": scale if scale > 0 else 1.0}
    out.meta["split"] = {"train": n_train, "test": ds["test_sequences"]}
    return out


def _load_data(path: Path, fingerprint: str | None = None) -> Dataset:
    if not path.exists():
        raise CLIError("missing-dataset", f"dataset {path} not found (run gen-data first)")
    ds = load_dataset(path)
    if fingerprint is not None and ds.fingerprint != fingerprint:
        raise CLIError("dataset-mismatch", f"{path} fingerprint differs from the run manifest")
    return ds


def _split(ds: Dataset) -> tuple[Dataset, Dataset]:
    n_train = ds.meta.get("split", {}).get("train")
    if n_train is None:
        raise CLIError("bad-dataset", "dataset metadata lacks a train/test split")
    return ds.split(n_train)


def make_schedule(sch: dict):
    kw = {"beta_start": sch["beta_start"], "beta_end": sch["beta_end"]} if sch["family"] == "linear" else {}
    return build_schedule(sch["T"], sch["family"], eta=sch["eta"], sigma=sch["sigma"],
                          gamma_rule=sch["gamma_rule"], **kw)


def _model(manifest: dict) -> ResidualMLP:
    m = manifest["model"]
    return ResidualMLP(tuple(m["frame_shape"]), m["S"], m["P"], width=m["width"], depth=m["depth"],
                       time_dim=m["time_dim"], linear_skip=m.get("linear_skip", True))


def held_out_windows(ds: Dataset, P: int, S: int, cases: int) -> np.ndarray:
    """Up to ``cases`` test windows spread evenly over the held-out sequences."""
    _, test = _split(ds)
    w = window_array(test, P, S)
    return w[:: max(1, len(w) // cases)][:cases]


def _case_id(path: Path) -> int:
    return int(path.stem.split("_")[1])


# -- commands ----------------------------------------------------------------


def cmd_gen_data(args) -> int:
    cfg = _load_cfg(args)
    if args.seed is not None:
        cfg["dataset"]["seed"] = args.seed
    path = Path(args.out) if args.out else _resolve(cfg["dataset"]["path"])
    if path.exists() and not args.force:
        raise CLIError("exists", f"{path} exists (use --force to overwrite)")
    ds = generate_dataset(cfg["dataset"])
    save_dataset(path, ds, force=args.force)
    print(f"{path} {ds.fingerprint}")
    return 0


def cmd_train(args) -> int:
    if args.resume:
        run = Path(args.resume)
        manifest = _read_manifest(run)
        cfg = manifest["config"]
        if args.steps is not None:
            cfg["train"]["steps"] = args.steps
        validate(cfg)
        ckpt = latest_checkpoint(run / "checkpoints")
        if ckpt is None:
            raise CLIError("missing-checkpoint", f"{run}/checkpoints holds no checkpoint to resume from")
    else:
        cfg = _load_cfg(args)
        run = Path(args.out) if args.out else _resolve(cfg["out"])
        if (run / "manifest.json").exists():
            if not args.force:
                raise CLIError("exists", f"run directory {run} already holds a run (use --force or --resume)")
            shutil.rmtree(run)
        ckpt = None
        manifest = None

    data_path = _resolve(cfg["dataset"]["path"]) if manifest is None else Path(manifest["dataset"]["path"])
    ds = _load_data(data_path, None if manifest is None else manifest["dataset"]["fingerprint"])
    train_ds, _ = _split(ds)
    P, S = cfg["window"]["P"], cfg["window"]["S"]
    if train_ds.frames.shape[1] < P + S + 1:
        raise CLIError("config", f"sequences of length {train_ds.frames.shape[1]} are shorter than P + S + 1")
    windows = window_array(train_ds, P, S)
    schedule = make_schedule(cfg["schedule"])
    m = cfg["model"]
    model = ResidualMLP(ds.frame_shape, S, P, width=m["width"], depth=m["depth"], time_dim=m["time_dim"])
    tr = cfg["train"]
    tcfg = TrainConfig(steps=tr["steps"], batch_size=tr["batch_size"], learning_rate=tr["learning_rate"],
                       optimizer=tr["optimizer"], seed=cfg["seed"], eval_every=tr["eval_every"],
                       checkpoint_every=tr["checkpoint_every"], independent_noise=tr["independent_noise"])

    if manifest is None:
        run.mkdir(parents=True, exist_ok=True)
        manifest = {
            "version": MANIFEST_VERSION,
            "label": "dpm" if schedule.is_standard else "dydiff",
            "seed": cfg["seed"],
            "config": cfg,
            "schedule": schedule.to_manifest(),
            "dataset": {"path": str(data_path.resolve()), "fingerprint": ds.fingerprint,
                        "frame_shape": list(ds.frame_shape), **ds.meta["split"]},
            "model": model.config(),
        }
    manifest["config"] = cfg
    _write_json(run / "manifest.json", manifest)
    res = train_loop(model, windows, schedule, tcfg, run / "checkpoints", run / "loss.csv", resume_from=ckpt)
    manifest["trained_steps"] = tr["steps"]
    manifest["final_checkpoint"] = str(res.checkpoints[-1].relative_to(run)) if res.checkpoints else None
    if res.losses:
        manifest["final_loss"] = res.losses[-1][1]
    _write_json(run / "manifest.json", manifest)
    print(run)
    return 0


def _params(run: Path, model: ResidualMLP) -> np.ndarray:
    ckpt = latest_checkpoint(run / "checkpoints")
    if ckpt is None:
        raise CLIError("missing-checkpoint", f"{run} has no checkpoints (train first)")
    return load_params(ckpt / "params", model)


def cmd_sample(args) -> int:
    run = Path(args.run)
    manifest = _read_manifest(run)
    cfg = manifest["config"]
    smp = dict(cfg["sampler"])
    for key, val in (("kind", args.sampler), ("ensemble", args.ensemble), ("num_steps", args.num_steps)):
        if val is not None:
            smp[key] = val
    if args.stochastic:
        smp["stochastic"] = True
    seed = cfg["seed"] if args.seed is None else args.seed
    try:
        validate({**cfg, "sampler": smp})
    except ConfigError as exc:
        raise CLIError("config", str(exc)) from None
    scfg = SamplerConfig(smp["kind"], smp["num_steps"], smp["stochastic"])

    out = Path(args.out) if args.out else run / "samples"
    if out.exists() and any(out.glob("case_*.dydf")):
        if not args.force:
            raise CLIError("exists", f"{out} already holds samples (use --force)")
        shutil.rmtree(out)
    out.mkdir(parents=True, exist_ok=True)

    ds = _load_data(Path(manifest["dataset"]["path"]), manifest["dataset"]["fingerprint"])
    model = _model(manifest)
    params = _params(run, model)
    denoise = model.bind(params)
    schedule = make_schedule(cfg["schedule"])
    P, S = model.P, model.S
    cases = held_out_windows(ds, P, S, smp["cases"])
    M = smp["ensemble"]

    curves = []
    for i, w in enumerate(cases):
        obs = np.repeat(w[None, : P + 1], M, axis=0)
        records: list = []
        pred = sample(denoise, obs, schedule, scfg, make_rng(seed, 2, i), S, record=records)
        tag = {"case_id": i, "units": "normalized", "sampler": smp["kind"], "seed": seed}
        save_dataset(out / f"case_{i:04d}.dydf", Dataset(pred, dict(tag)), force=True)
        save_dataset(out / f"truth_{i:04d}.dydf", Dataset(w[None, P + 1 :], dict(tag)), force=True)
        curves.append(latent_error_curve(records, pred, schedule))
        if args.dump_latents:
            lat = np.stack([r["latent"] for r in records] + [pred])
            meta = dict(tag, timesteps=[r["t"] for r in records] + [0])
            save_dataset(out / f"latents_{i:04d}.dydf", Dataset(lat, meta), force=True)

    with open(out / "latent_error.csv", "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["step", "t", "distance"])
        for k, t in enumerate(c[0] for c in curves[0]):
            wr.writerow([k, t, repr(float(np.mean([c[k][1] for c in curves])))])
    _write_json(out / "sampling.json", {"kind": smp["kind"], "num_steps": smp["num_steps"],
                                        "stochastic": smp["stochastic"], "ensemble": M, "seed": seed,
                                        "cases": len(cases)})
    print(out)
    return 0


def metric_key(metric: str, pool: str, window: int) -> str:
    return metric if pool == "none" else f"{metric}_{pool}{window}"


def evaluate_samples(samples: Path, metrics_cfg: dict) -> tuple[list[tuple], dict]:
    """Score every ``case_XXXX.dydf`` in ``samples`` against its truth file."""
    case_files = sorted(samples.glob("case_*.dydf"))
    if not case_files:
        raise CLIError("missing-samples", f"no case files in {samples}")
    pairs = []
    for path in case_files:
        cid = _case_id(path)
        truth_path = samples / f"truth_{cid:04d}.dydf"
        if not truth_path.exists():
            raise CLIError("missing-truth", f"case {cid:04d}: truth file {truth_path.name} not found")
        pairs.append((cid, load_dataset(path).frames, load_dataset(truth_path).frames[0]))

    thr = metrics_cfg["csi_threshold"]
    if thr == "p90":
        thr = float(np.percentile(np.concatenate([t.ravel() for _, _, t in pairs]), 90))
    w_crps, w_csi = metrics_cfg["crps_window"], metrics_cfg["csi_window"]
    rows = []
    sum_normalized = None
    for cid, ens, truth in pairs:
        spatial = truth.ndim >= 3
        mean = ens.mean(axis=0)
        if ens.shape[0] >= 2:
            rows.append((cid, "crps", "none", 1, crps_ensemble(ens, truth)))
            if spatial and w_crps > 1:
                for pool in ("avg", "max"):
                    rows.append((cid, "crps", pool, w_crps, crps_ensemble(ens, truth, pool, w_crps)))
            if truth.ndim == 2:
                cs = crps_sum(ens, truth)
                sum_normalized = cs.normalized if sum_normalized is None else sum_normalized and cs.normalized
                rows.append((cid, "crps_sum", "none", 1, cs.value))
        if spatial or w_csi == 1:
            pool = "avg" if w_csi > 1 else "none"
            rows.append((cid, "csi", pool, w_csi, csi(mean, truth, thr, w_csi)))
        if metrics_cfg["psnr_range"] > 0:
            rows.append((cid, "psnr", "none", 1, psnr(mean, truth, metrics_cfg["psnr_range"])))
    if pairs[0][1].shape[0] < 2:
        log.warning("ensemble of one member: CRPS rows skipped")

    summary: dict = {"csi_threshold": thr, "cases": len(pairs)}
    if sum_normalized is not None:
        summary["crps_sum_normalized"] = sum_normalized
    groups: dict[str, list[float]] = {}
    for _, metric, pool, window, value in rows:
        groups.setdefault(metric_key(metric, pool, window), []).append(value)
    summary["metrics"] = {k: {"mean": float(np.mean(v)), "std": float(np.std(v)), "n": len(v)}
                          for k, v in groups.items()}
    return rows, summary


def cmd_eval(args) -> int:
    run = Path(args.run)
    manifest = _read_manifest(run)
    metrics_cfg = dict(manifest["config"]["metrics"])
    if args.config is not None:
        metrics_cfg = load_config(args.config)["metrics"]
    samples = Path(args.samples) if args.samples else run / "samples"
    rows, summary = evaluate_samples(samples, metrics_cfg)
    with open(run / "metrics.csv", "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["case_id", "metric", "pool", "window", "value"])
        for cid, metric, pool, window, value in rows:
            wr.writerow([cid, metric, pool, window, repr(float(value))])
    _write_json(run / "summary.json", summary)
    for k, v in summary["metrics"].items():
        print(f"{k} {v['mean']:.6g} +- {v['std']:.3g}")
    return 0


def cmd_compare(args) -> int:
    runs = [Path(r) for r in args.runs]
    out = Path(args.out) if args.out else out_root() / "comparison"
    out.mkdir(parents=True, exist_ok=True)
    table = []
    curves = []
    for run in runs:
        manifest = _read_manifest(run)
        spath = run / "summary.json"
        if not spath.exists():
            raise CLIError("missing-summary", f"{run} has no summary.json (run eval first)")
        summary = json.loads(spath.read_text())
        cfg = manifest["config"]
        table.append({
            "run": str(run),
            "label": manifest["label"],
            "eta": cfg["schedule"]["eta"],
            "independent_noise": cfg["train"]["independent_noise"],
            "seed": manifest["seed"],
            "metrics": {k: v["mean"] for k, v in summary["metrics"].items()},
        })
        lpath = run / "samples" / "latent_error.csv"
        if lpath.exists():
            with open(lpath, newline="") as fh:
                curves += [(str(run), r["step"], r["t"], r["distance"]) for r in csv.DictReader(fh)]

    keys = list(dict.fromkeys(k for row in table for k in row["metrics"]))
    ref = table[0]["metrics"]
    header = ["run", "label", "eta", "independent_noise", "seed"]
    header += [c for k in keys for c in (k, f"{k}_delta")]
    with open(out / "comparison.csv", "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(header)
        for row in table:
            cells = [row["run"], row["label"], row["eta"], row["independent_noise"], row["seed"]]
            for k in keys:
                v = row["metrics"].get(k)
                d = v - ref[k] if v is not None and k in ref else None
                cells += ["" if v is None else repr(v), "" if d is None else repr(d)]
            wr.writerow(cells)
    with open(out / "latent_error.csv", "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["run", "step", "t", "distance"])
        wr.writerows(curves)
    for row in table:
        shown = " ".join(f"{k}={row['metrics'][k]:.5g}" for k in keys if k in row["metrics"])
        print(f"{row['label']:7s} eta={row['eta']:<4} indep={int(row['independent_noise'])} {shown}  {row['run']}")
    print(out)
    return 0


# -- argument parsing --------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        print(f"dydiff-error: usage: {message}", file=sys.stderr)
        raise SystemExit(2)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="dydiff", description=__doc__.split("\n")[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen-data", help="generate a synthetic dataset file")
    g.add_argument("--config")
    g.add_argument("--seed", type=int, help="overrides dataset.seed")
    g.add_argument("--out", help="dataset path (default: dataset.path)")
    g.add_argument("--force", action="store_true")

    t = sub.add_parser("train", help="train a denoiser into a run directory")
    t.add_argument("--config")
    t.add_argument("--seed", type=int)
    t.add_argument("--out", help="run directory (default: the config's out)")
    t.add_argument("--steps", type=int)
    t.add_argument("--eta", type=float)
    t.add_argument("--independent-noise", action="store_true")
    t.add_argument("--resume", metavar="RUN", help="continue the run in RUN from its latest checkpoint")
    t.add_argument("--force", action="store_true")

    s = sub.add_parser("sample", help="draw ensemble forecasts for the test windows")
    s.add_argument("--run", required=True)
    s.add_argument("--seed", type=int)
    s.add_argument("--out", help="samples directory (default: RUN/samples)")
    s.add_argument("--sampler", choices=("dydiff-ddim", "dydiff-ddpm", "dpm-ddim", "dpm-ddpm"))
    s.add_argument("--ensemble", type=int)
    s.add_argument("--num-steps", type=int)
    s.add_argument("--stochastic", action="store_true")
    s.add_argument("--dump-latents", action="store_true")
    s.add_argument("--force", action="store_true")

    e = sub.add_parser("eval", help="score samples against truth")
    e.add_argument("--run", required=True)
    e.add_argument("--samples", help="samples directory (default: RUN/samples)")
    e.add_argument("--config", help="take the [metrics] table from this config instead")

    c = sub.add_parser("compare", help="tabulate several evaluated runs")
    c.add_argument("--runs", nargs="+", required=True)
    c.add_argument("--out")
    return p


COMMANDS = {"gen-data": cmd_gen_data, "train": cmd_train, "sample": cmd_sample, "eval": cmd_eval,
            "compare": cmd_compare}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return COMMANDS[args.command](args)
    except CLIError as exc:
        code, msg = exc.code, str(exc)
    except ConfigError as exc:
        code, msg = "config", str(exc)
    except NumericFailure as exc:
        code, msg = "numeric", str(exc)
    except FileExistsError as exc:
        code, msg = "exists", str(exc)
    except (FileNotFoundError, ValueError, OSError) as exc:
        code, msg = "failed", str(exc)
    print(f"dydiff-error: {code}: {' '.join(msg.split())}", file=sys.stderr)
    return 1


if __name__ == "__main__":
    sys.exit(main())
