"""Likelihood-free MCMC: random-walk Metropolis-Hastings and HMC.

Chains advance in lockstep as rows of one array, so every estimator call is a
single batched forward pass. Targets expose two operations:

* ``log_accept(theta, theta_star, cache)``: the log posterior difference
  ``-U(theta*) + U(theta)`` and the cache entry for ``theta*``;
* ``grad_log_posterior(theta, rng)``: ``-grad U(theta)``.

For a DNRE the potential difference needs one pass,
``l(x, theta*, theta) + log p(theta*) - log p(theta)``; for NRE/BNRE it is
``l(x, theta*) - l(x, theta)`` plus the prior difference, with ``l(x, theta)``
cached for the current state.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from .numcore.rng import make_rng
from .posterior import NumericError, _check_logits

log = logging.getLogger(__name__)

MANIFEST_VERSION = 1


class LogRatioTarget:
    """Posterior target defined by a ratio estimator (or an analytic oracle)."""

    def __init__(self, estimator, x, prior):
        self.estimator = estimator
        self.kind = estimator.kind
        self.x = np.asarray(x, dtype=np.float64).reshape(-1)
        if self.x.shape[0] != estimator.x_dim:
            raise ValueError(f"observation has dimension {self.x.shape[0]}, estimator expects {estimator.x_dim}")
        self.prior = prior
        self.dim = estimator.theta_dim

    def init_cache(self, theta):
        if self.kind.pairwise:
            return None
        return _check_logits(self.estimator, self.estimator.log_ratio(self.x, theta))

    def log_accept(self, theta, theta_star, cache):
        lp = self.prior.log_prob(theta)
        lp_star = self.prior.log_prob(theta_star)
        delta = np.full(theta.shape[0], -np.inf)
        new_cache = None if cache is None else cache.copy()
        ok = np.isfinite(lp_star)
        if np.any(ok):
            if self.kind.pairwise:
                lr = self.estimator.log_ratio(self.x, theta_star[ok], theta[ok])
                delta[ok] = _check_logits(self.estimator, lr) + lp_star[ok] - lp[ok]
            else:
                l_star = _check_logits(self.estimator, self.estimator.log_ratio(self.x, theta_star[ok]))
                with np.errstate(invalid="ignore"):
                    delta[ok] = l_star - cache[ok] + lp_star[ok] - lp[ok]
                new_cache[ok] = l_star
        return delta, new_cache

    def relative_log_density(self, theta, theta_ref=None):
        """Log posterior up to a constant, with pairwise ratios taken against ``theta_ref``.

        ``theta_ref`` defaults to the centre of the prior; any fixed value
        shifts every entry by the same amount.
        """
        theta = np.atleast_2d(np.asarray(theta, dtype=np.float64))
        lp = self.prior.log_prob(theta)
        out = np.full(theta.shape[0], -np.inf)
        ok = np.isfinite(lp)
        if self.kind.pairwise:
            ref = _prior_center(self.prior) if theta_ref is None else np.asarray(theta_ref, dtype=np.float64)
            lr = self.estimator.log_ratio(self.x, theta[ok], np.broadcast_to(ref, theta[ok].shape))
        else:
            lr = self.estimator.log_ratio(self.x, theta[ok])
        out[ok] = _check_logits(self.estimator, lr) + lp[ok]
        return out

    def grad_log_ratio(self, theta, rng: Optional[np.random.Generator] = None):
        return grad_log_ratio(self.estimator, self.x, theta, self.prior, rng)

    def grad_log_posterior(self, theta, rng=None):
        return self.grad_log_ratio(theta, rng) + self.prior.grad_log_prob(theta)

    def describe(self) -> dict:
        return {"estimator": self.estimator.describe(), "x": self.x.tolist()}


class DensityTarget:
    """Target given directly by a log density (and optionally its gradient)."""

    def __init__(self, log_prob: Callable, dim: int, grad: Optional[Callable] = None, prior=None):
        self.log_prob = log_prob
        self.grad = grad
        self.dim = dim
        self.prior = prior

    def init_cache(self, theta):
        return self.log_prob(theta)

    def log_accept(self, theta, theta_star, cache):
        new = self.log_prob(theta_star)
        if np.any(np.isnan(new)):
            raise NumericError("target log density returned NaN")
        with np.errstate(invalid="ignore"):
            delta = new - cache
        return np.where(np.isneginf(new), -np.inf, delta), new

    def grad_log_posterior(self, theta, rng=None):
        if self.grad is None:
            raise ValueError("this target has no gradient")
        return self.grad(theta)

    def describe(self) -> dict:
        return {"density": getattr(self.log_prob, "__name__", "custom")}


def grad_log_ratio(estimator, x, theta, prior=None, rng=None):
    """Input-gradient of the log-ratio logit with respect to ``theta``.

    NRE/BNRE differentiate ``l(x, theta)``. DNRE differentiates
    ``l(x, theta, theta')`` with ``theta'`` drawn afresh from ``prior`` on every
    call (one draw per row).
    """
    theta = np.atleast_2d(np.asarray(theta, dtype=np.float64))
    if estimator.kind.pairwise:
        if prior is None or rng is None:
            raise ValueError("DNRE gradients need a prior and an rng to draw theta'")
        tp = prior.sample(rng, theta.shape[0])
        return estimator.grad_theta(x, theta, tp)
    return estimator.grad_theta(x, theta)


def grad_log_ratio_via_ratio(estimator, x, theta, theta_prime=None):
    """Baseline: grad r / r with r = exp(l), i.e. the chain rule through exp.

    Agrees with :func:`grad_log_ratio` for moderate logits but underflows to
    0/0 once ``exp(l)`` does (``l`` below about -745).
    """
    theta = np.atleast_2d(np.asarray(theta, dtype=np.float64))
    tp = theta_prime if estimator.kind.pairwise else None
    ell = estimator.logit(x, theta, tp)
    r = np.exp(ell)
    grad_r = r[:, None] * estimator.grad_theta(x, theta, tp)
    with np.errstate(invalid="ignore", divide="ignore"):
        return grad_r / r[:, None]


def mh_accept_log_prob(target, theta, theta_star) -> np.ndarray:
    """``min(0, log posterior difference)`` for a symmetric proposal; ``-inf`` outside the support."""
    theta = np.atleast_2d(np.asarray(theta, dtype=np.float64))
    theta_star = np.atleast_2d(np.asarray(theta_star, dtype=np.float64))
    delta, _ = target.log_accept(theta, theta_star, target.init_cache(theta))
    return np.minimum(0.0, delta)


# --------------------------------------------------------------------------- chain output


@dataclass
class ChainSet:
    draws: np.ndarray  # (n_chains, n_draws, dim)
    acceptance_rate: np.ndarray
    sampler: str
    config: dict
    seed: int
    step_size_trace: list = field(default_factory=list)
    final_step_size: Optional[float] = None
    divergences: Optional[np.ndarray] = None
    warnings: list = field(default_factory=list)

    @property
    def n_chains(self) -> int:
        return self.draws.shape[0]

    def pooled(self) -> np.ndarray:
        return self.draws.reshape(-1, self.draws.shape[-1])

    def manifest(self) -> dict:
        return {
            "format_version": MANIFEST_VERSION,
            "sampler": self.sampler,
            "config": self.config,
            "seed": self.seed,
            "n_chains": self.n_chains,
            "n_draws": int(self.draws.shape[1]),
            "acceptance": [float(a) for a in self.acceptance_rate],
            "mean_acceptance": float(np.mean(self.acceptance_rate)),
            "divergences": None if self.divergences is None else [int(d) for d in self.divergences],
            "final_step_size": self.final_step_size,
            "warnings": list(self.warnings),
        }

    def save(self, out_dir, prefix: str = "chain", extra: Optional[dict] = None) -> Path:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        dim = self.draws.shape[-1]
        for c in range(self.n_chains):
            with open(out_dir / f"{prefix}_{c}.csv", "w", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(["step"] + [f"theta_{i}" for i in range(dim)])
                for s, row in enumerate(self.draws[c]):
                    w.writerow([s] + [repr(float(v)) for v in row])
        man = self.manifest()
        if extra:
            man.update(extra)
        path = out_dir / f"{prefix}_manifest.json"
        path.write_text(json.dumps(man, indent=2, sort_keys=True) + "\n")
        return path


def _prior_center(prior) -> np.ndarray:
    if hasattr(prior, "low"):
        return (np.asarray(prior.low) + np.asarray(prior.high)) / 2
    return np.asarray(prior.mean, dtype=np.float64)


def resampled_init(target, n_chains: int, rng: np.random.Generator, pool_size: int = 10_000) -> np.ndarray:
    """Chain starting points drawn from prior samples reweighted by the target density.

    For narrow posteriors this replaces a long burn-in: chains begin near the
    posterior mass instead of wherever the prior put them.
    """
    if target.prior is None:
        raise ValueError("resampled_init needs a target with a prior")
    pool = target.prior.sample(rng, int(pool_size))
    if hasattr(target, "relative_log_density"):
        logw = target.relative_log_density(pool)
        if np.any(np.isposinf(logw)):
            # the default reference has zero likelihood; compare against the best draw instead
            logw = target.relative_log_density(pool, pool[np.argmax(logw)])
    else:
        logw = target.log_prob(pool)
    if not np.any(np.isfinite(logw)):
        raise NumericError("no prior draw has finite target density")
    w = np.exp(logw - np.max(logw))
    return pool[rng.choice(pool.shape[0], size=n_chains, p=w / w.sum())]


def _initial_states(target, n_chains, rng, init):
    if init is not None:
        theta = np.array(np.broadcast_to(np.atleast_2d(init), (n_chains, target.dim)), dtype=np.float64)
    elif target.prior is not None:
        theta = target.prior.sample(rng, n_chains)
    else:
        raise ValueError("no prior to initialise chains from; pass init=")
    return theta


# --------------------------------------------------------------------------- random-walk MH


def rwmh_sample(
    target,
    n_chains: int = 8,
    n_draws: int = 1000,
    proposal_std=0.1,
    burn_in: Optional[int] = None,
    thin: int = 1,
    seed: int = 0,
    init=None,
) -> ChainSet:
    """Random-walk Metropolis-Hastings with isotropic Gaussian proposals.

    Runs ``burn_in + n_draws * thin`` iterations per chain and keeps every
    ``thin``-th state after burn-in. ``burn_in`` defaults to a quarter of the
    kept iterations.
    """
    std = np.asarray(proposal_std, dtype=np.float64)
    if not np.all(std > 0):
        raise ValueError("proposal_std must be positive")
    thin = int(thin)
    if burn_in is None:
        burn_in = (n_draws * thin) // 4
    rng = make_rng(seed)
    theta = _initial_states(target, n_chains, rng, init)
    cache = target.init_cache(theta)
    dim = theta.shape[1]

    draws = np.empty((n_chains, n_draws, dim))
    accepted = np.zeros(n_chains)
    burn_accepted = np.zeros(n_chains)
    total = burn_in + n_draws * thin
    for it in range(total):
        prop = theta + std * rng.standard_normal((n_chains, dim))
        delta, new_cache = target.log_accept(theta, prop, cache)
        log_u = np.log(rng.random(n_chains))
        acc = log_u < np.minimum(0.0, delta)
        theta[acc] = prop[acc]
        if cache is not None:
            cache[acc] = new_cache[acc]
        if it < burn_in:
            burn_accepted += acc
        else:
            accepted += acc
            k = it - burn_in
            if (k + 1) % thin == 0:
                draws[:, k // thin] = theta

    warnings = []
    if burn_in > 0 and np.any(burn_accepted == 0):
        warnings.append(f"{int(np.sum(burn_accepted == 0))} chain(s) accepted no moves during burn-in")
        log.warning(warnings[-1])
    config = {
        "n_chains": n_chains,
        "n_draws": n_draws,
        "proposal_std": std.tolist(),
        "burn_in": burn_in,
        "thin": thin,
    }
    return ChainSet(
        draws=draws,
        acceptance_rate=accepted / max(1, n_draws * thin),
        sampler="rwmh",
        config=config,
        seed=int(seed),
        warnings=warnings,
    )


# --------------------------------------------------------------------------- HMC


@dataclass
class HmcConfig:
    n_leapfrog: int = 10
    step_size: float = 0.1
    target_accept: float = 0.65
    gamma: float = 0.05
    t0: float = 10.0
    kappa: float = 0.75
    mu: Optional[float] = None
    burn_in: Optional[int] = None
    thin: int = 1
    adapt: bool = True
    jitter: float = 0.2

    def __post_init__(self):
        if self.n_leapfrog < 1:
            raise ValueError("n_leapfrog must be >= 1")
        if not self.step_size > 0:
            raise ValueError("step_size must be positive")
        if not 0.0 < self.target_accept < 1.0:
            raise ValueError("target_accept must lie in (0, 1)")
        if not 0.0 <= self.jitter < 1.0:
            raise ValueError("jitter must lie in [0, 1)")


class DualAveraging:
    """Nesterov dual averaging of log step size toward a target acceptance."""

    def __init__(self, step_size, target, gamma=0.05, t0=10.0, kappa=0.75, mu=None):
        self.target = target
        self.gamma, self.t0, self.kappa = gamma, t0, kappa
        self.mu = math.log(10.0 * step_size) if mu is None else mu
        self.log_eps = math.log(step_size)
        self.log_eps_bar = 0.0
        self.h_bar = 0.0
        self.t = 0

    def update(self, accept_stat: float) -> float:
        self.t += 1
        t = self.t
        w = 1.0 / (t + self.t0)
        self.h_bar = (1.0 - w) * self.h_bar + w * (self.target - accept_stat)
        self.log_eps = self.mu - math.sqrt(t) / self.gamma * self.h_bar
        eta = t ** (-self.kappa)
        self.log_eps_bar = eta * self.log_eps + (1.0 - eta) * self.log_eps_bar
        return math.exp(self.log_eps)

    @property
    def final_step_size(self) -> float:
        return math.exp(self.log_eps_bar) if self.t > 0 else math.exp(self.log_eps)


def leapfrog(theta, momentum, step_size, n_steps, grad_log_post, grad0=None):
    """``n_steps`` leapfrog steps for ``H = -log post(theta) + |m|^2 / 2``.

    ``grad_log_post`` returns ``-grad U``. Returns ``(theta, momentum, grad)``
    with ``grad`` evaluated at the final position.
    """
    theta = np.array(theta, dtype=np.float64)
    m = np.array(momentum, dtype=np.float64)
    g = grad_log_post(theta) if grad0 is None else grad0
    m += 0.5 * step_size * g
    for i in range(n_steps):
        theta += step_size * m
        g = grad_log_post(theta)
        m += (step_size if i < n_steps - 1 else 0.5 * step_size) * g
    return theta, m, g


def hmc_sample(target, cfg: Optional[HmcConfig] = None, n_chains: int = 8, n_draws: int = 1000, seed: int = 0, init=None) -> ChainSet:
    """Hamiltonian Monte Carlo with a fixed number of leapfrog steps.

    During burn-in the shared step size is adapted by dual averaging, fed with
    the acceptance probability averaged over all chains at each iteration;
    afterwards it is frozen at the averaged value. Each iteration scales the
    step size by a uniform factor in ``1 +/- cfg.jitter``. Trajectories that turn
    non-finite are rejected and counted as divergences.
    """
    cfg = cfg or HmcConfig()
    thin = int(cfg.thin)
    burn_in = cfg.burn_in if cfg.burn_in is not None else (n_draws * thin) // 4
    rng = make_rng(seed)
    theta = _initial_states(target, n_chains, rng, init)
    cache = target.init_cache(theta)
    dim = theta.shape[1]

    def grad_fn(t):
        fin = np.all(np.isfinite(t), axis=1)
        if fin.all():
            return target.grad_log_posterior(t, rng)
        g = np.full_like(t, np.nan)
        if fin.any():
            g[fin] = target.grad_log_posterior(t[fin], rng)
        return g

    da = DualAveraging(cfg.step_size, cfg.target_accept, cfg.gamma, cfg.t0, cfg.kappa, cfg.mu)
    eps = cfg.step_size
    trace = []
    draws = np.empty((n_chains, n_draws, dim))
    accepted = np.zeros(n_chains)
    divergences = np.zeros(n_chains, dtype=int)
    grad = grad_fn(theta)
    total = burn_in + n_draws * thin
    for it in range(total):
        m0 = rng.standard_normal((n_chains, dim))
        # jitter breaks the resonance between a fixed trajectory length and the target's scales
        eps_it = eps * (1.0 + cfg.jitter * (2.0 * rng.random() - 1.0)) if cfg.jitter else eps
        with np.errstate(over="ignore", invalid="ignore"):
            th_new, m_new, g_new = leapfrog(theta, m0, eps_it, cfg.n_leapfrog, grad_fn, grad0=grad)
        finite = np.all(np.isfinite(th_new), axis=1) & np.all(np.isfinite(m_new), axis=1)
        safe_prop = np.where(finite[:, None], th_new, theta)
        delta, new_cache = target.log_accept(theta, safe_prop, cache)
        with np.errstate(invalid="ignore", over="ignore"):
            kinetic = 0.5 * np.sum(m0 * m0, axis=1) - 0.5 * np.sum(m_new * m_new, axis=1)
            rho = np.minimum(0.0, delta + kinetic)
        bad = ~finite | np.isnan(rho)
        rho = np.where(bad, -np.inf, rho)
        divergences += bad
        acc = np.log(rng.random(n_chains)) < rho
        theta[acc] = th_new[acc]
        grad[acc] = g_new[acc]
        if cache is not None:
            cache[acc] = new_cache[acc]
        if it < burn_in:
            if cfg.adapt:
                eps = da.update(float(np.mean(np.exp(rho))))
                trace.append(eps)
                if it == burn_in - 1:
                    eps = da.final_step_size
        else:
            accepted += acc
            k = it - burn_in
            if (k + 1) % thin == 0:
                draws[:, k // thin] = theta

    config = {**asdict(cfg), "burn_in": burn_in, "n_chains": n_chains, "n_draws": n_draws}
    warnings = []
    if np.any(divergences):
        warnings.append(f"{int(divergences.sum())} divergent trajectories")
    return ChainSet(
        draws=draws,
        acceptance_rate=accepted / max(1, n_draws * thin),
        sampler="hmc",
        config=config,
        seed=int(seed),
        step_size_trace=trace,
        final_step_size=eps,
        divergences=divergences,
        warnings=warnings,
    )
