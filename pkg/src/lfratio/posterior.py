"""Posterior log-densities from ratio estimators.

NRE/BNRE: ``log p(theta|x) ~ l(x, theta) + log p(theta)``.

DNRE has no evidence term, so it is integrated out with ``M`` prior draws
``theta'_i`` (the "bank"):

    1 / p(theta|x) ~ 1 / p(theta) * mean_i 1 / r(x | theta, theta'_i)

which in log space is

    log p(theta|x) ~ -logsumexp_i(-l(x, theta, theta'_i)) + log M + log p(theta).

The bank is drawn once per evaluator and reused, so differences between
``theta`` values are not contaminated by fresh Monte Carlo noise.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from scipy.special import logsumexp

from .numcore.rng import make_rng

_MAX_ROWS = 1 << 17


class NumericError(ArithmeticError):
    pass


def _check_logits(est, values):
    if np.any(np.isnan(values)):
        raise NumericError("estimator returned NaN")
    if not getattr(est, "allows_infinite", False) and not np.all(np.isfinite(values)):
        raise NumericError("estimator returned a non-finite log ratio")
    return values


@dataclass
class PosteriorEvaluator:
    estimator: object
    prior: object
    mc_samples: int = 10_000
    bank_seed: int = 0
    theta_prime_bank: Optional[np.ndarray] = field(default=None, repr=False)

    def __post_init__(self):
        if self.mc_samples < 1:
            raise ValueError("mc_samples must be >= 1")
        if self.estimator.kind.pairwise:
            if self.theta_prime_bank is None:
                self.theta_prime_bank = self.prior.sample(make_rng(self.bank_seed), self.mc_samples)
            else:
                self.theta_prime_bank = np.atleast_2d(np.asarray(self.theta_prime_bank, dtype=np.float64))
                self.mc_samples = self.theta_prime_bank.shape[0]
            if not np.all(self.prior.in_support(self.theta_prime_bank)):
                raise ValueError("theta' bank has rows outside the prior support")

    def log_posterior(self, x, theta) -> np.ndarray:
        """Estimated log posterior for each row of ``theta`` (``-inf`` outside the prior support)."""
        theta = np.atleast_2d(np.asarray(theta, dtype=np.float64))
        lp = self.prior.log_prob(theta)
        out = np.full(theta.shape[0], -np.inf)
        ok = np.isfinite(lp)
        if not np.any(ok):
            return out
        idx = np.flatnonzero(ok)
        if self.estimator.kind.pairwise:
            out[idx] = self._dnre_log_evidence_ratio(x, theta[idx]) + lp[idx]
        else:
            out[idx] = _check_logits(self.estimator, self.estimator.log_ratio(x, theta[idx])) + lp[idx]
        return out

    def _dnre_log_evidence_ratio(self, x, theta):
        bank = self.theta_prime_bank
        m = bank.shape[0]
        per_chunk = max(1, _MAX_ROWS // m)
        out = np.empty(theta.shape[0])
        for s in range(0, theta.shape[0], per_chunk):
            t = theta[s : s + per_chunk]
            k = t.shape[0]
            lr = self.estimator.log_ratio(x, np.repeat(t, m, axis=0), np.tile(bank, (k, 1)))
            lr = _check_logits(self.estimator, lr).reshape(k, m)
            with np.errstate(invalid="ignore"):
                out[s : s + k] = -logsumexp(-lr, axis=1) + math.log(m)
        return out

    def describe(self) -> dict:
        d = {"estimator": self.estimator.describe(), "prior": self.prior.to_dict()}
        if self.estimator.kind.pairwise:
            d.update(mc_samples=self.mc_samples, bank_seed=self.bank_seed)
        return d


def log_posterior(ev: PosteriorEvaluator, x, theta):
    return ev.log_posterior(x, theta)


@dataclass
class PosteriorGrid:
    axes: list
    log_density: np.ndarray

    def rows(self):
        if len(self.axes) == 1:
            for t, v in zip(self.axes[0], self.log_density):
                yield (t, v)
        else:
            for i, a in enumerate(self.axes[0]):
                for j, b in enumerate(self.axes[1]):
                    yield (a, b, self.log_density[i, j])

    def save_csv(self, path) -> Path:
        path = Path(path)
        header = ["theta0", "log_posterior"] if len(self.axes) == 1 else ["theta0", "theta1", "log_posterior"]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for row in self.rows():
                w.writerow([repr(float(v)) for v in row])
        return path


def posterior_grid(ev: PosteriorEvaluator, x, bounds, resolution: int = 100) -> PosteriorGrid:
    """Log posterior on a regular grid; row-major with the first axis slowest.

    ``bounds`` is ``(low, high)`` with one entry per parameter dimension.
    """
    lo = np.atleast_1d(np.asarray(bounds[0], dtype=np.float64))
    hi = np.atleast_1d(np.asarray(bounds[1], dtype=np.float64))
    dim = lo.shape[0]
    if dim > 2:
        raise ValueError("posterior_grid supports at most 2 parameter dimensions")
    if dim != ev.estimator.theta_dim:
        raise ValueError("grid bounds do not match the parameter dimension")
    axes = [np.linspace(lo[i], hi[i], resolution) for i in range(dim)]
    if dim == 1:
        pts = axes[0][:, None]
        return PosteriorGrid(axes, ev.log_posterior(x, pts))
    g0, g1 = np.meshgrid(axes[0], axes[1], indexing="ij")
    pts = np.stack([g0.ravel(), g1.ravel()], axis=1)
    return PosteriorGrid(axes, ev.log_posterior(x, pts).reshape(resolution, resolution))
