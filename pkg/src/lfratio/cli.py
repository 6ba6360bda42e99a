"""Command-line interface: ``lfratio <simulate|train|sample|posterior|diagnose|rank>``.

Every command accepts ``--config FILE`` (YAML). Values given as flags override
the file. The merged configuration is printed, written to
``<out>/<command>_config.yaml`` and hashed; the hash (``config_digest``) and
the master seed are embedded in every JSON artifact and in a ``.json``
sidecar next to every CSV.

Config schema (all keys optional)::

    seed: 0
    out: runs/exp1
    workers: 1
    task: {name: gauss1d, params: {sigma: 0.5}}
    simulate: {n: 10000}
    train: {data: data.csv, n: 15000, kind: DNRE, epochs: 1000, batch_size: 256,
            lr: 0.001, hidden: [64, 64, 64], val_fraction: 0.333, bnre_lambda: 100}
    estimator: {checkpoint: ckpt.json | oracle, kind: DNRE, mc_samples: 10000, bank_seed: 0}
    sample: {x_obs: "0.1,0.2", sampler: rwmh | hmc, n_chains: 8, n_draws: 1000,
             proposal_std: 0.1, step_size: 0.1, n_leapfrog: 10, target_accept: 0.65,
             burn_in: null, thin: 1, init_pool: 0}
    posterior: {x_obs: ..., low: [-1, -1], high: [1, 1], resolution: 100}
    diagnose: {metrics: [ratio-mse, coverage, c2st, log-post-truth], n_pairs: 100,
               n_samples: 200, theta_num: 0.0, grid_points: 200, x_obs: ..., n_ref: 1000,
               proposal_std: 0.05, init_pool: 10000}
    rank: {checkpoints: [a.json, b.json], x_target: ..., candidates: cands.csv, k: 10}

Exit codes: 0 success, 2 usage error, 3 data error, 4 numeric error.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np
import yaml

from . import diagnostics as diag
from .estimators import (
    CheckpointError,
    EstimatorKind,
    OracleEstimator,
    TrainConfig,
    TrainingError,
    estimator_task,
    load,
    save,
    save_curves,
    train,
)
from .numcore.rng import derive_seed, make_rng
from .posterior import NumericError, PosteriorEvaluator, posterior_grid
from .samplers import HmcConfig, LogRatioTarget, hmc_sample, resampled_init, rwmh_sample
from .tasks import generate_dataset, get_task, load_dataset, save_dataset

log = logging.getLogger("lfratio")

OUTPUT_ENV = "LFRATIO_OUTPUT"
ARTIFACT_VERSION = 1
EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 2, 3, 4


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


# --------------------------------------------------------------------------- config


def _set(cfg: dict, dotted: str, value) -> None:
    if value is None:
        return
    node = cfg
    *head, last = dotted.split(".")
    for key in head:
        node = node.setdefault(key, {})
    node[last] = value


def _get(cfg: dict, dotted: str, default=None):
    node = cfg
    for key in dotted.split("."):
        if not isinstance(node, dict) or key not in node:
            return default
        node = node[key]
    return node


def config_digest(cfg: dict) -> str:
    blob = json.dumps(cfg, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def load_config(path) -> dict:
    if path is None:
        return {}
    try:
        data = yaml.safe_load(Path(path).read_text())
    except OSError as exc:
        raise DataError(f"cannot read config {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise DataError(f"malformed config {path}: {exc}") from exc
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise DataError(f"config {path} must be a mapping")
    return data


class Run:
    """Resolved configuration plus an output directory that all writes go through."""

    def __init__(self, command: str, cfg: dict):
        self.command = command
        self.cfg = cfg
        self.seed = int(cfg.get("seed", 0))
        out = cfg.get("out") or os.environ.get(OUTPUT_ENV) or "lfratio-out"
        self.out = Path(out).resolve()
        self.digest = config_digest(cfg)
        self.workers = int(cfg.get("workers", 1))
        if self.workers < 1:
            raise UsageError("--workers must be >= 1")

    def path(self, name: str) -> Path:
        p = (self.out / name).resolve()
        if self.out != p and self.out not in p.parents:
            raise UsageError(f"refusing to write outside the output directory: {name}")
        p.parent.mkdir(parents=True, exist_ok=True)
        return p

    def stamp(self) -> dict:
        return {
            "format_version": ARTIFACT_VERSION,
            "master_seed": self.seed,
            "config_digest": self.digest,
            "command": self.command,
        }

    def write_json(self, name: str, payload: dict) -> Path:
        p = self.path(name)
        p.write_text(json.dumps({**self.stamp(), **payload}, indent=2, sort_keys=True, default=diag._json_default) + "\n")
        return p

    def sidecar(self, csv_path: Path, payload: dict | None = None) -> Path:
        return self.write_json(csv_path.name + ".json", payload or {})

    def announce(self) -> None:
        self.out.mkdir(parents=True, exist_ok=True)
        text = yaml.safe_dump(self.cfg, sort_keys=True)
        self.path(f"{self.command}_config.yaml").write_text(text)
        print(f"# {self.command}: master seed {self.seed}, config digest {self.digest}")
        print(text, end="")


# --------------------------------------------------------------------------- inputs


def parse_vector(value, dim: int | None = None, what: str = "x_obs") -> np.ndarray:
    """Comma-separated numbers, a list, or a path to a one-row CSV (header optional)."""
    if value is None:
        raise UsageError(f"{what} is required")
    if isinstance(value, (list, tuple)):
        vec = np.asarray(value, dtype=np.float64)
    elif isinstance(value, (int, float)):
        vec = np.array([float(value)])
    else:
        text = str(value)
        if Path(text).suffix == ".csv" or Path(text).is_file():
            try:
                rows = [r for r in csv.reader(Path(text).read_text().splitlines()) if r]
            except OSError as exc:
                raise DataError(f"cannot read {what} file {text}: {exc}") from exc
            rows = [r for r in rows if not _is_header(r)]
            if len(rows) != 1:
                raise DataError(f"{what} file {text} must hold exactly one data row")
            text = ",".join(rows[0])
        try:
            vec = np.array([float(v) for v in text.split(",")], dtype=np.float64)
        except ValueError as exc:
            raise UsageError(f"cannot parse {what} {value!r}: {exc}") from exc
    if not np.all(np.isfinite(vec)):
        raise UsageError(f"{what} must be finite")
    if dim is not None and vec.shape[0] != dim:
        raise UsageError(f"{what} has {vec.shape[0]} entries, expected {dim}")
    return vec


def _is_header(row) -> bool:
    try:
        [float(v) for v in row]
        return False
    except ValueError:
        return True


def read_matrix(path, dim: int, what: str) -> np.ndarray:
    try:
        rows = [r for r in csv.reader(Path(path).read_text().splitlines()) if r and not r[0].startswith("#")]
    except OSError as exc:
        raise DataError(f"cannot read {what} {path}: {exc}") from exc
    rows = [r for r in rows if not _is_header(r)]
    try:
        arr = np.array([[float(v) for v in r] for r in rows], dtype=np.float64)
    except ValueError as exc:
        raise DataError(f"malformed {what} {path}: {exc}") from exc
    if arr.ndim != 2 or arr.shape[0] == 0 or arr.shape[1] != dim:
        raise DataError(f"{what} {path} must have rows of {dim} numbers")
    return arr


def task_from_cfg(cfg: dict):
    name = _get(cfg, "task.name")
    if name is None:
        raise UsageError("a task is required (--task)")
    try:
        return get_task(name, **(_get(cfg, "task.params") or {}))
    except KeyError as exc:
        raise UsageError(str(exc)) from exc
    except (TypeError, ValueError) as exc:
        raise UsageError(f"bad task parameters: {exc}") from exc


def estimator_from(spec, cfg: dict, kind_default="DNRE"):
    """Load a checkpoint, or build the exact oracle when ``spec == 'oracle'``."""
    if spec is None:
        raise UsageError("--checkpoint is required")
    if str(spec) == "oracle":
        task = task_from_cfg(cfg)
        if task.log_likelihood is None:
            raise UsageError(f"task {task.name} has no exact likelihood for an oracle")
        kind = EstimatorKind.parse(_get(cfg, "estimator.kind", kind_default))
        return OracleEstimator(task, kind), task
    try:
        est = load(spec)
    except FileNotFoundError as exc:
        raise DataError(f"checkpoint not found: {spec}") from exc
    except CheckpointError as exc:
        raise DataError(str(exc)) from exc
    task = estimator_task(est)
    if _get(cfg, "task.name") is not None:
        given = task_from_cfg(cfg)
        if given.name != task.name:
            raise UsageError(f"checkpoint was trained on {task.name}, not {given.name}")
    return est, task


def evaluator_for(est, task, cfg: dict) -> PosteriorEvaluator:
    return PosteriorEvaluator(
        est,
        task.prior,
        mc_samples=int(_get(cfg, "estimator.mc_samples", 10_000)),
        bank_seed=int(_get(cfg, "estimator.bank_seed", 0)),
    )


# --------------------------------------------------------------------------- commands


def cmd_simulate(run: Run) -> None:
    cfg = run.cfg
    task = task_from_cfg(cfg)
    n = _get(cfg, "simulate.n")
    if n is None or int(n) < 1:
        raise UsageError("--n must be a positive integer")
    ds = generate_dataset(task, int(n), run.seed)
    path = run.path("dataset.csv")
    save_dataset(ds, path, extra_meta=run.stamp())
    print(f"wrote {len(ds)} rows to {path}")


def cmd_train(run: Run) -> None:
    cfg = run.cfg
    data_path = _get(cfg, "train.data")
    if data_path is not None:
        try:
            ds = load_dataset(data_path)
        except (OSError, ValueError, KeyError) as exc:
            raise DataError(f"cannot load dataset {data_path}: {exc}") from exc
        task = get_task(ds.task, **ds.task_params)
    else:
        task = task_from_cfg(cfg)
        n = int(_get(cfg, "train.n", 15_000))
        if n < 2:
            raise UsageError("--n must be >= 2")
        ds = generate_dataset(task, n, derive_seed(run.seed, "data"))
    fields = ("epochs", "batch_size", "lr", "hidden", "val_fraction", "bnre_lambda", "init")
    kw = {k: _get(cfg, f"train.{k}") for k in fields if _get(cfg, f"train.{k}") is not None}
    try:
        tc = TrainConfig(seed=run.seed, **kw)
        kind = EstimatorKind.parse(_get(cfg, "train.kind", "DNRE"))
    except (TypeError, ValueError) as exc:
        raise UsageError(str(exc)) from exc
    try:
        est, curves = train(ds, kind, tc, task=task)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    est.metadata.update(run.stamp())
    ckpt = save(est, run.path("checkpoint.json"))
    curve_path = save_curves(curves, run.path("loss_curve.csv"))
    run.sidecar(curve_path, {"estimator_digest": est.digest()})
    print(f"best epoch {est.metadata['best_epoch']}, val loss {est.metadata['best_val_loss']:.6f}")
    print(f"wrote {ckpt} and {curve_path}")


def cmd_sample(run: Run) -> None:
    cfg = run.cfg
    est, task = estimator_from(_get(cfg, "estimator.checkpoint"), cfg)
    x = parse_vector(_get(cfg, "sample.x_obs"), task.x_dim)
    target = LogRatioTarget(est, x, task.prior)
    sampler = _get(cfg, "sample.sampler", "rwmh")
    n_chains = int(_get(cfg, "sample.n_chains", 8))
    n_draws = int(_get(cfg, "sample.n_draws", 1000))
    burn_in = _get(cfg, "sample.burn_in")
    thin = int(_get(cfg, "sample.thin", 1))
    if n_chains < 1 or n_draws < 1 or thin < 1:
        raise UsageError("n_chains, n_draws and thin must be positive")
    init_pool = int(_get(cfg, "sample.init_pool", 0))
    init = resampled_init(target, n_chains, make_rng(derive_seed(run.seed, "init")), init_pool) if init_pool > 0 else None
    if sampler == "rwmh":
        chains = rwmh_sample(
            target,
            n_chains=n_chains,
            n_draws=n_draws,
            proposal_std=float(_get(cfg, "sample.proposal_std", 0.1)),
            burn_in=None if burn_in is None else int(burn_in),
            thin=thin,
            seed=run.seed,
            init=init,
        )
    elif sampler == "hmc":
        try:
            hc = HmcConfig(
                n_leapfrog=int(_get(cfg, "sample.n_leapfrog", 10)),
                step_size=float(_get(cfg, "sample.step_size", 0.1)),
                target_accept=float(_get(cfg, "sample.target_accept", 0.65)),
                burn_in=None if burn_in is None else int(burn_in),
                thin=thin,
            )
        except ValueError as exc:
            raise UsageError(str(exc)) from exc
        chains = hmc_sample(target, hc, n_chains=n_chains, n_draws=n_draws, seed=run.seed, init=init)
    else:
        raise UsageError(f"unknown sampler {sampler!r}; expected rwmh or hmc")
    man = chains.save(run.path("chains"), prefix="chain", extra={**run.stamp(), "x_obs": x.tolist(), "estimator": est.describe()})
    print(f"mean acceptance {float(np.mean(chains.acceptance_rate)):.3f}; manifest {man}")


def cmd_posterior(run: Run) -> None:
    cfg = run.cfg
    est, task = estimator_from(_get(cfg, "estimator.checkpoint"), cfg)
    x = parse_vector(_get(cfg, "posterior.x_obs"), task.x_dim)
    low, high = _get(cfg, "posterior.low"), _get(cfg, "posterior.high")
    if low is None or high is None:
        prior = task.prior
        if not hasattr(prior, "low"):
            raise UsageError("--low/--high are required for unbounded priors")
        low, high = prior.low, prior.high
    low = parse_vector(low, task.theta_dim, "low")
    high = parse_vector(high, task.theta_dim, "high")
    if np.any(high <= low):
        raise UsageError("grid bounds need low < high")
    ev = evaluator_for(est, task, cfg)
    try:
        grid = posterior_grid(ev, x, (low, high), int(_get(cfg, "posterior.resolution", 100)))
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    path = grid.save_csv(run.path("posterior_grid.csv"))
    run.sidecar(path, {"x_obs": x.tolist(), "evaluator": ev.describe()})
    print(f"wrote {path}")


METRICS = ("ratio-mse", "coverage", "c2st", "log-post-truth")


def cmd_diagnose(run: Run) -> None:
    cfg = run.cfg
    est, task = estimator_from(_get(cfg, "estimator.checkpoint"), cfg)
    metrics = _get(cfg, "diagnose.metrics") or ["ratio-mse"]
    unknown = [m for m in metrics if m not in METRICS]
    if unknown:
        raise UsageError(f"unknown metric(s) {unknown}; choose from {list(METRICS)}")
    report = diag.DiagnosticsReport(
        task=task.describe(),
        estimators={"estimator": est.digest()},
        seeds={"master": run.seed},
        config_digest=run.digest,
    )
    ev = evaluator_for(est, task, cfg)
    if ev.theta_prime_bank is not None:
        report.seeds["bank"] = ev.bank_seed
    n_pairs = int(_get(cfg, "diagnose.n_pairs", 100))
    for metric in metrics:
        seed = derive_seed(run.seed, metric)
        report.seeds[metric] = seed
        if metric == "ratio-mse":
            if task.log_likelihood is None:
                raise UsageError(f"task {task.name} has no exact ratio")
            theta_num = parse_vector(_get(cfg, "diagnose.theta_num", [0.0] * task.theta_dim), task.theta_dim, "theta_num")
            train_thetas = task.prior.sample(make_rng(seed, 0), 10_000)
            n_grid = int(_get(cfg, "diagnose.grid_points", 200))
            grid = np.stack([np.linspace(train_thetas[:, i].min(), train_thetas[:, i].max(), n_grid) for i in range(task.theta_dim)], axis=1)
            report.add(metric, {"mse": diag.ratio_mse(est, task, grid, theta_num[None, :], seed=seed), "grid_points": n_grid})
        elif metric == "coverage":
            curve = diag.evaluator_coverage(
                ev,
                task,
                n_pairs=n_pairs,
                n_samples=int(_get(cfg, "diagnose.n_samples", 200)),
                seed=seed,
                proposal_std=float(_get(cfg, "diagnose.proposal_std", 0.05)),
                init_pool=int(_get(cfg, "diagnose.init_pool", 10_000)),
                workers=run.workers,
            )
            p = curve.save_csv(run.path("coverage.csv"))
            run.sidecar(p)
            report.add(metric, curve.to_dict())
        elif metric == "c2st":
            if task.reference_sample is None:
                raise UsageError(f"task {task.name} has no reference sampler")
            x = parse_vector(_get(cfg, "diagnose.x_obs"), task.x_dim)
            n_ref = int(_get(cfg, "diagnose.n_ref", 1000))
            ref = task.reference_sample(x, n_ref, make_rng(seed, 0))
            target = LogRatioTarget(est, x, task.prior)
            chains = rwmh_sample(
                target,
                n_chains=8,
                n_draws=-(-n_ref // 8),
                proposal_std=float(_get(cfg, "diagnose.proposal_std", 0.05)),
                seed=derive_seed(seed, 1),
                init=resampled_init(target, 8, make_rng(seed, 1), int(_get(cfg, "diagnose.init_pool", 10_000))),
            )
            res = diag.c2st_details(chains.pooled()[:n_ref], ref, seed=seed)
            report.add(metric, {"accuracy": res.accuracy, "fold_scores": res.fold_scores, "x_obs": x.tolist(), "n": n_ref})
        elif metric == "log-post-truth":
            thetas, xs = diag.joint_pairs(task, n_pairs, seed)
            block = diag.log_posterior_at_truth(ev.log_posterior, thetas, xs)
            report.add(metric, block)
    path = run.path("diagnostics.json")
    payload = {**report.to_dict(), **run.stamp()}
    path.write_text(json.dumps(payload, indent=2, sort_keys=True, default=diag._json_default) + "\n")
    for name, block in report.metrics.items():
        summary = {k: v for k, v in block.items() if isinstance(v, (int, float))}
        print(f"{name}: {summary}")
    print(f"wrote {path}")


def cmd_rank(run: Run) -> None:
    cfg = run.cfg
    specs = _get(cfg, "rank.checkpoints") or []
    if not specs:
        raise UsageError("at least one --checkpoint is required")
    loaded = [estimator_from(s, cfg) for s in specs]
    ests = [e for e, _ in loaded]
    task = loaded[0][1]
    x = parse_vector(_get(cfg, "rank.x_target"), task.x_dim, "x_target")
    cands_path = _get(cfg, "rank.candidates")
    if cands_path is None:
        raise UsageError("--candidates is required")
    cands = read_matrix(cands_path, task.theta_dim, "candidates")
    k = int(_get(cfg, "rank.k", 10))
    if k < 1:
        raise UsageError("--k must be >= 1")
    names = [Path(str(s)).stem if str(s) != "oracle" else f"oracle{i}" for i, s in enumerate(specs)]
    try:
        table = diag.rank_candidates(
            ests,
            task.prior,
            x,
            cands,
            k,
            names=names,
            mc_samples=int(_get(cfg, "estimator.mc_samples", 10_000)),
            bank_seed=int(_get(cfg, "estimator.bank_seed", 0)),
        )
    except ValueError as exc:
        raise DataError(str(exc)) from exc
    path = table.save_csv(run.path("ranking.csv"))
    run.sidecar(path, table.to_dict())
    print(f"top-{table.k}: " + "; ".join(f"{n}={table.orders[i, :table.k].tolist()}" for i, n in enumerate(table.names)))
    print(f"wrote {path}")


COMMANDS = {
    "simulate": cmd_simulate,
    "train": cmd_train,
    "sample": cmd_sample,
    "posterior": cmd_posterior,
    "diagnose": cmd_diagnose,
    "rank": cmd_rank,
}


# --------------------------------------------------------------------------- argument parsing


def _floats(text):
    return [float(v) for v in str(text).split(",")]


def _ints(text):
    return [int(v) for v in str(text).split(",")]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lfratio", description="Amortized likelihood-ratio estimation and likelihood-free MCMC.")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML config file; flags override it")
    common.add_argument("--out", help=f"output directory (default ${OUTPUT_ENV} or ./lfratio-out)")
    common.add_argument("--seed", type=int, help="master seed")
    common.add_argument("--workers", type=int, help="parallel workers for independent units")
    common.add_argument("--task", help="task name (gauss1d, two_moons, gl, glu, gm)")
    common.add_argument("--sigma", type=float, help="gauss1d noise scale")
    common.add_argument("-v", "--verbose", action="store_true")

    est = argparse.ArgumentParser(add_help=False)
    est.add_argument("--checkpoint", help="checkpoint JSON or 'oracle'")
    est.add_argument("--kind", help="estimator kind for the oracle (NRE, BNRE, DNRE)")
    est.add_argument("--mc-samples", type=int, help="theta' bank size for DNRE posteriors")
    est.add_argument("--bank-seed", type=int)

    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", parents=[common], help="draw a training dataset")
    p.add_argument("--n", type=int)

    p = sub.add_parser("train", parents=[common], help="fit a ratio estimator")
    p.add_argument("--data", help="dataset CSV from `simulate`")
    p.add_argument("--n", type=int, help="simulate this many rows when --data is absent")
    p.add_argument("--kind")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--hidden", type=_ints, help="comma-separated hidden widths")
    p.add_argument("--val-fraction", type=float)
    p.add_argument("--bnre-lambda", type=float)

    p = sub.add_parser("sample", parents=[common, est], help="MCMC from an estimated posterior")
    p.add_argument("--x-obs", help="comma-separated values or a one-row CSV")
    p.add_argument("--sampler", choices=["rwmh", "hmc"])
    p.add_argument("--n-chains", type=int)
    p.add_argument("--n-draws", type=int)
    p.add_argument("--proposal-std", type=float)
    p.add_argument("--step-size", type=float)
    p.add_argument("--n-leapfrog", type=int)
    p.add_argument("--target-accept", type=float)
    p.add_argument("--burn-in", type=int)
    p.add_argument("--thin", type=int)
    p.add_argument("--init-pool", type=int, help="start chains from this many prior draws resampled by density")

    p = sub.add_parser("posterior", parents=[common, est], help="log posterior on a grid")
    p.add_argument("--x-obs")
    p.add_argument("--low", type=_floats)
    p.add_argument("--high", type=_floats)
    p.add_argument("--resolution", type=int)

    p = sub.add_parser("diagnose", parents=[common, est], help="diagnostics report")
    p.add_argument("--metric", action="append", choices=METRICS)
    p.add_argument("--n-pairs", type=int)
    p.add_argument("--n-samples", type=int)
    p.add_argument("--x-obs")
    p.add_argument("--n-ref", type=int)

    p = sub.add_parser("rank", parents=[common], help="rank candidate parameters")
    p.add_argument("--checkpoint", action="append", help="repeat for each estimator")
    p.add_argument("--kind")
    p.add_argument("--x-target")
    p.add_argument("--candidates", help="CSV of candidate parameters")
    p.add_argument("--k", type=int)
    p.add_argument("--mc-samples", type=int)
    p.add_argument("--bank-seed", type=int)
    return parser


FLAG_KEYS = {
    "out": "out",
    "seed": "seed",
    "workers": "workers",
    "task": "task.name",
    "sigma": "task.params.sigma",
    "kind": None,  # depends on command
    "checkpoint": None,
    "mc_samples": "estimator.mc_samples",
    "bank_seed": "estimator.bank_seed",
    "n": None,
    "data": "train.data",
    "epochs": "train.epochs",
    "batch_size": "train.batch_size",
    "lr": "train.lr",
    "hidden": "train.hidden",
    "val_fraction": "train.val_fraction",
    "bnre_lambda": "train.bnre_lambda",
    "sampler": "sample.sampler",
    "n_chains": "sample.n_chains",
    "n_draws": "sample.n_draws",
    "proposal_std": "sample.proposal_std",
    "step_size": "sample.step_size",
    "n_leapfrog": "sample.n_leapfrog",
    "target_accept": "sample.target_accept",
    "burn_in": "sample.burn_in",
    "thin": "sample.thin",
    "init_pool": "sample.init_pool",
    "low": "posterior.low",
    "high": "posterior.high",
    "resolution": "posterior.resolution",
    "metric": "diagnose.metrics",
    "n_pairs": "diagnose.n_pairs",
    "n_samples": "diagnose.n_samples",
    "n_ref": "diagnose.n_ref",
    "x_target": "rank.x_target",
    "candidates": "rank.candidates",
    "k": "rank.k",
}


def resolve_config(args) -> dict:
    cfg = load_config(args.config)
    cmd = args.command
    for attr, key in FLAG_KEYS.items():
        value = getattr(args, attr, None)
        if value is None:
            continue
        if attr == "kind":
            key = "train.kind" if cmd == "train" else "estimator.kind"
        elif attr == "checkpoint":
            key = "rank.checkpoints" if cmd == "rank" else "estimator.checkpoint"
        elif attr == "n":
            key = "simulate.n" if cmd == "simulate" else "train.n"
        _set(cfg, key, value)
    x_obs = getattr(args, "x_obs", None)
    if x_obs is not None:
        _set(cfg, "diagnose.x_obs" if cmd == "diagnose" else f"{cmd}.x_obs", x_obs)
    cfg.setdefault("seed", 0)
    cfg.setdefault("workers", 1)
    return cfg


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else 0
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        run = Run(args.command, cfg)
        run.announce()
        COMMANDS[args.command](run)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NumericError, TrainingError, FloatingPointError) as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return 0


if __name__ == "__main__":
    sys.exit(main())
