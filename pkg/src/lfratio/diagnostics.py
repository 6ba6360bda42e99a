"""Quantitative checks for trained (or oracle) ratio estimators."""

from __future__ import annotations

import csv
import json
import logging
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from .numcore.rng import make_rng
from .posterior import PosteriorEvaluator
from .samplers import DensityTarget, rwmh_sample

log = logging.getLogger(__name__)

REPORT_VERSION = 1


# --------------------------------------------------------------------------- ratio MSE


def ratio_mse(est, task, theta_grid, theta_num=None, seed: int = 0) -> float:
    """Mean squared error of the estimated log ratio against the exact one.

    The numerator parameter is held at ``theta_num`` (zero by default) and the
    denominator sweeps ``theta_grid``; one observation ``x ~ p(x | theta_num)``
    is drawn per grid point. NRE/BNRE are composed from two passes.
    """
    if task.log_likelihood is None:
        raise ValueError(f"task {task.name} has no exact log ratio")
    grid = np.atleast_2d(np.asarray(theta_grid, dtype=np.float64))
    if grid.shape[1] != task.theta_dim:
        grid = grid.reshape(-1, task.theta_dim)
    n = grid.shape[0]
    num = np.zeros((1, task.theta_dim)) if theta_num is None else np.atleast_2d(theta_num)
    num = np.repeat(num, n, axis=0)
    xs = task.simulator(num, make_rng(seed))
    truth = task.log_ratio(xs, num, grid)
    pred = est.log_ratio(xs, num, grid, pairwise=not est.kind.pairwise)
    return float(np.mean((pred - truth) ** 2))


def theta_sweep(thetas, n: int = 200) -> np.ndarray:
    """Evenly spaced 1-D grid from the minimum to the maximum of ``thetas``."""
    t = np.asarray(thetas, dtype=np.float64).reshape(-1)
    return np.linspace(t.min(), t.max(), n)[:, None]


# --------------------------------------------------------------------------- C2ST


@dataclass
class C2stResult:
    accuracy: float
    fold_scores: list
    dropped_features: list


def c2st_details(samples_a, samples_b, seed: int = 0, folds: int = 5, max_epochs: int = 200) -> C2stResult:
    """Classifier two-sample test.

    Pooled samples are z-scored; an MLP with two hidden layers of ``10 * dim``
    ReLU units is trained (Adam) to separate ``a`` (label 0) from ``b``
    (label 1). Returns the mean ``folds``-fold cross-validated accuracy.
    Constant features carry no information and are dropped.
    """
    from sklearn.exceptions import ConvergenceWarning
    from sklearn.model_selection import KFold, cross_val_score
    from sklearn.neural_network import MLPClassifier

    a = np.atleast_2d(np.asarray(samples_a, dtype=np.float64))
    b = np.atleast_2d(np.asarray(samples_b, dtype=np.float64))
    if a.shape != b.shape:
        raise ValueError(f"c2st needs equal sample shapes, got {a.shape} and {b.shape}")
    if a.shape[0] < 100:
        raise ValueError("c2st needs at least 100 samples per set")
    data = np.concatenate([a, b], axis=0)
    labels = np.concatenate([np.zeros(a.shape[0]), np.ones(b.shape[0])])
    std = data.std(axis=0)
    keep = std > 0
    dropped = [int(i) for i in np.flatnonzero(~keep)]
    if not np.any(keep):
        return C2stResult(0.5, [0.5] * folds, dropped)
    data = (data[:, keep] - data[:, keep].mean(axis=0)) / std[keep]
    dim = data.shape[1]
    clf = MLPClassifier(
        hidden_layer_sizes=(10 * dim, 10 * dim),
        activation="relu",
        solver="adam",
        max_iter=max_epochs,
        random_state=seed % (2**32),
    )
    cv = KFold(n_splits=folds, shuffle=True, random_state=seed % (2**32))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ConvergenceWarning)
        scores = cross_val_score(clf, data, labels, cv=cv, scoring="accuracy")
    return C2stResult(float(np.mean(scores)), [float(s) for s in scores], dropped)


def c2st(samples_a, samples_b, seed: int = 0, folds: int = 5) -> float:
    return c2st_details(samples_a, samples_b, seed=seed, folds=folds).accuracy


# --------------------------------------------------------------------------- expected coverage


@dataclass
class CoverageCurve:
    levels: np.ndarray
    coverage: np.ndarray
    n_pairs: int
    n_samples: int
    ranks: np.ndarray
    mc_samples: Optional[int] = None

    @property
    def max_deviation(self) -> float:
        return float(np.max(np.abs(self.coverage - self.levels)))

    def binomial_se(self) -> np.ndarray:
        return np.sqrt(self.levels * (1.0 - self.levels) / self.n_pairs)

    def to_dict(self) -> dict:
        return {
            "levels": self.levels.tolist(),
            "coverage": self.coverage.tolist(),
            "n_pairs": self.n_pairs,
            "n_samples": self.n_samples,
            "mc_samples": self.mc_samples,
            "max_deviation": self.max_deviation,
        }

    def save_csv(self, path) -> Path:
        path = Path(path)
        with open(path, "w") as fh:
            fh.write("level,coverage\n")
            for lv, cv in zip(self.levels, self.coverage):
                fh.write(f"{lv!r},{cv!r}\n")
        return path


def coverage_from_ranks(ranks, n_samples: int, levels) -> np.ndarray:
    """Fraction of pairs whose normalised rank is at least ``1 - level``."""
    frac = np.asarray(ranks, dtype=np.float64) / n_samples
    levels = np.asarray(levels, dtype=np.float64)
    # small slack so that level 1 - k/S lines up with rank k exactly
    return np.array([np.mean(frac >= 1.0 - lv - 1e-12) for lv in levels])


def hpd_rank(log_prob_true: float, log_prob_samples, rng: np.random.Generator) -> int:
    """Number of posterior samples with lower density than the true parameter.

    Ties are split uniformly at random so that flat densities still give
    uniform ranks.
    """
    s = np.asarray(log_prob_samples)
    less = int(np.sum(s < log_prob_true))
    ties = int(np.sum(s == log_prob_true))
    return less + (int(rng.integers(0, ties + 1)) if ties else 0)


def expected_coverage(
    log_prob_fn: Callable,
    sample_fn: Callable,
    thetas,
    xs,
    n_samples: int = 1000,
    levels=None,
    seed: int = 0,
    workers: int = 1,
    mc_samples: Optional[int] = None,
) -> CoverageCurve:
    """Expected coverage of highest-posterior-density regions.

    For each pair ``(theta*, x)`` drawn from the joint, ``n_samples`` draws
    come from ``sample_fn(x, n, rng)`` and ``theta*`` is ranked by
    ``log_prob_fn(x, thetas)`` among them. Pair ``j`` uses its own stream
    derived from ``(seed, j)``, so results do not depend on ``workers``.
    """
    if n_samples < 100:
        raise ValueError("expected coverage needs at least 100 posterior samples per pair")
    thetas = np.atleast_2d(np.asarray(thetas, dtype=np.float64))
    xs = np.atleast_2d(np.asarray(xs, dtype=np.float64))
    if levels is None:
        levels = np.linspace(0.0, 1.0, 21)
    levels = np.asarray(levels, dtype=np.float64)

    def one(j):
        rng = make_rng(seed, j)
        samples = sample_fn(xs[j], n_samples, rng)
        lps = log_prob_fn(xs[j], samples)
        lpt = float(log_prob_fn(xs[j], thetas[j : j + 1])[0])
        return hpd_rank(lpt, lps, rng)

    n = thetas.shape[0]
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            ranks = np.array(list(pool.map(one, range(n))))
    else:
        ranks = np.array([one(j) for j in range(n)])
    cov = coverage_from_ranks(ranks, n_samples, levels)
    return CoverageCurve(levels, cov, n, n_samples, ranks, mc_samples)


def joint_pairs(task, n: int, seed: int):
    """``n`` pairs ``(theta*, x)`` from the joint ``p(theta) p(x|theta)``."""
    rng = make_rng(seed)
    thetas = task.prior.sample(rng, n)
    return thetas, task.simulator(thetas, rng)


def mcmc_sampler(log_prob_fn, prior, proposal_std, n_chains: int = 4, thin: int = 1, burn_in: int = 200, init_pool: int = 0):
    """``sample_fn`` for :func:`expected_coverage` using random-walk MH on ``log_prob_fn``.

    With ``init_pool > 0`` chains start from prior draws resampled in
    proportion to their density, which shortens burn-in for narrow posteriors.
    """

    def sample(x, n, rng):
        per_chain = -(-n // n_chains)
        target = DensityTarget(lambda t: log_prob_fn(x, t), prior.dim, prior=prior)
        init = None
        if init_pool > 0:
            pool = prior.sample(rng, init_pool)
            lp = log_prob_fn(x, pool)
            w = np.exp(lp - np.max(lp))
            init = pool[rng.choice(init_pool, size=n_chains, p=w / w.sum())]
        chains = rwmh_sample(
            target,
            n_chains=n_chains,
            n_draws=per_chain,
            proposal_std=proposal_std,
            burn_in=burn_in,
            thin=thin,
            seed=int(rng.integers(2**62)),
            init=init,
        )
        return chains.pooled()[:n]

    return sample


def evaluator_coverage(
    evaluator: PosteriorEvaluator,
    task,
    n_pairs: int = 100,
    n_samples: int = 200,
    levels=None,
    seed: int = 0,
    proposal_std=0.05,
    n_chains: int = 4,
    thin: int = 2,
    burn_in: int = 200,
    init_pool: int = 0,
    workers: int = 1,
) -> CoverageCurve:
    """Expected coverage of ``evaluator`` with MCMC posterior samples drawn from it."""
    thetas, xs = joint_pairs(task, n_pairs, seed)
    sample_fn = mcmc_sampler(evaluator.log_posterior, task.prior, proposal_std, n_chains, thin, burn_in, init_pool)
    mc = evaluator.mc_samples if evaluator.estimator.kind.pairwise else None
    return expected_coverage(
        evaluator.log_posterior, sample_fn, thetas, xs, n_samples, levels, seed=seed, workers=workers, mc_samples=mc
    )


# --------------------------------------------------------------------------- log posterior at truth


def log_posterior_at_truth(log_prob_fn, thetas, xs) -> dict:
    """Mean and standard deviation of the log posterior at the generating parameter.

    ``-inf`` values are counted and excluded from the statistics.
    """
    thetas = np.atleast_2d(np.asarray(thetas, dtype=np.float64))
    xs = np.atleast_2d(np.asarray(xs, dtype=np.float64))
    if thetas.shape[0] == 0:
        raise ValueError("need at least one pair")
    vals = np.array([float(log_prob_fn(x, t[None, :])[0]) for t, x in zip(thetas, xs)])
    finite = np.isfinite(vals)
    kept = vals[finite]
    return {
        "mean": float(kept.mean()) if kept.size else float("nan"),
        "std": float(kept.std()) if kept.size else float("nan"),
        "n": int(kept.size),
        "n_neg_inf": int(np.sum(np.isneginf(vals))),
        "values": vals.tolist(),
    }


# --------------------------------------------------------------------------- ranking


def rank_from_scores(scores) -> np.ndarray:
    """Candidate indices by descending score; ties keep index order."""
    return np.argsort(-np.asarray(scores, dtype=np.float64), kind="stable")


@dataclass
class RankingTable:
    candidates: np.ndarray
    scores: np.ndarray  # (n_estimators, n_candidates)
    names: list
    k: int
    orders: np.ndarray = field(init=False)
    overlap: np.ndarray = field(init=False)

    def __post_init__(self):
        self.orders = np.stack([rank_from_scores(s) for s in self.scores])
        tops = [set(o[: self.k].tolist()) for o in self.orders]
        n = len(tops)
        self.overlap = np.array([[len(tops[i] & tops[j]) for j in range(n)] for i in range(n)], dtype=int)

    def save_csv(self, path) -> Path:
        path = Path(path)
        n_est, n_cand = self.scores.shape
        ranks = np.empty_like(self.orders)
        for e in range(n_est):
            ranks[e, self.orders[e]] = np.arange(n_cand)
        dim = self.candidates.shape[1]
        with open(path, "w", newline="") as fh:
            fh.write("# descending score; ties broken by lower candidate index\n")
            w = csv.writer(fh, lineterminator="\n")
            header = ["candidate"] + [f"theta_{i}" for i in range(dim)]
            for name in self.names:
                header += [f"score_{name}", f"rank_{name}"]
            w.writerow(header)
            for c in range(n_cand):
                row = [c] + [repr(float(v)) for v in self.candidates[c]]
                for e in range(n_est):
                    row += [repr(float(self.scores[e, c])), int(ranks[e, c])]
                w.writerow(row)
        return path

    def to_dict(self) -> dict:
        return {
            "names": self.names,
            "k": self.k,
            "top_k": {n: self.orders[i, : self.k].tolist() for i, n in enumerate(self.names)},
            "overlap": self.overlap.tolist(),
            "tie_break": "lower candidate index first",
        }


def rank_candidates(
    estimators: Sequence,
    prior,
    x_target,
    candidates,
    k: int,
    names: Optional[list] = None,
    mc_samples: int = 10_000,
    bank_seed: int = 0,
) -> RankingTable:
    """Score candidates by estimated log posterior under each estimator.

    DNRE estimators all use the same theta' bank (same ``bank_seed``).
    """
    candidates = np.atleast_2d(np.asarray(candidates, dtype=np.float64))
    if candidates.shape[0] == 0:
        raise ValueError("no candidates")
    if not estimators:
        raise ValueError("no estimators")
    dims = {e.theta_dim for e in estimators}
    if len(dims) != 1 or candidates.shape[1] not in dims:
        raise ValueError("estimators and candidates disagree on the parameter dimension")
    k = min(int(k), candidates.shape[0])
    scores = []
    for est in estimators:
        ev = PosteriorEvaluator(est, prior, mc_samples=mc_samples, bank_seed=bank_seed)
        s = ev.log_posterior(x_target, candidates)
        if not np.all(np.isfinite(s)):
            raise ValueError("candidate outside prior support or non-finite score")
        scores.append(s)
    names = names or [f"{e.kind.value}_{i}" for i, e in enumerate(estimators)]
    return RankingTable(candidates, np.array(scores), list(names), k)


# --------------------------------------------------------------------------- report


@dataclass
class DiagnosticsReport:
    task: dict
    estimators: dict = field(default_factory=dict)
    seeds: dict = field(default_factory=dict)
    metrics: dict = field(default_factory=dict)
    config_digest: Optional[str] = None

    def add(self, name: str, block) -> None:
        self.metrics[name] = block

    def to_dict(self) -> dict:
        return {
            "format_version": REPORT_VERSION,
            "task": self.task,
            "estimators": self.estimators,
            "seeds": self.seeds,
            "config_digest": self.config_digest,
            "metrics": self.metrics,
        }

    def save(self, path) -> Path:
        path = Path(path)
        path.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True, default=_json_default) + "\n")
        return path


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    raise TypeError(f"not JSON serializable: {type(o)}")
