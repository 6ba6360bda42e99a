"""Benchmark problems: priors, simulators and analytic oracles.

Adopted generative forms (from the public SBI benchmark task definitions):

* ``gauss1d``: theta ~ N(0, s^2), x ~ N(theta, s^2); posterior N(x/2, s^2/2).
* ``two_moons``: theta ~ U(-1, 1)^2, a ~ U(-pi/2, pi/2), r ~ N(0.1, 0.01^2),
  p = (r cos a + 0.25, r sin a),
  x = p + (-|theta1 + theta2| / sqrt 2, (-theta1 + theta2) / sqrt 2).
* ``gaussian_linear``: theta ~ N(0, 0.1 I_10), x ~ N(theta, 0.1 I_10);
  posterior N(x/2, 0.05 I).
* ``gaussian_linear_uniform``: theta ~ U(-1, 1)^10, x ~ N(theta, 0.1 I_10);
  posterior is N(x, 0.1 I) truncated to the box, independently per dimension.
* ``gaussian_mixture``: theta ~ U(-10, 10)^2,
  x ~ 0.5 N(theta, I) + 0.5 N(theta, 0.01 I).

Priors of benchmark tasks without a simulator here (kept for later extension):

* Lotka-Volterra: theta1, theta3 ~ LogNormal(-0.125, 0.5); theta2, theta4 ~ LogNormal(-3, 0.5).
* SIR: theta1 ~ LogNormal(log 0.4, 0.5), theta2 ~ LogNormal(log 1/8, 0.2).
* SLCP and SLCP with distractors: theta ~ U(-3, 3)^5.
* Bernoulli GLM (and raw): theta1 ~ N(0, 2), theta_2:10 ~ N(0, (F^T F)^-1) with
  F[i, i-2] = 1, F[i, i-1] = 1, F[i, i] = 1 + sqrt((i - 1) / 9).
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np
from scipy.special import log_ndtr, ndtr
from scipy.stats import truncnorm

from .numcore.rng import make_rng

FORMAT_VERSION = 1
_LOG_2PI = math.log(2.0 * math.pi)


def _rows(a, dim):
    a = np.asarray(a, dtype=np.float64)
    if a.ndim == 1:
        a = a[None, :]
    if a.ndim != 2 or a.shape[1] != dim:
        raise ValueError(f"expected rows of dimension {dim}, got shape {a.shape}")
    return a


# --------------------------------------------------------------------------- priors


@dataclass(frozen=True)
class UniformBoxPrior:
    low: tuple
    high: tuple
    kind: str = field(default="uniform-box", init=False)

    def __post_init__(self):
        lo, hi = np.asarray(self.low, float), np.asarray(self.high, float)
        if lo.shape != hi.shape or lo.ndim != 1 or not np.all(lo < hi):
            raise ValueError("uniform prior needs low < high in every dimension")
        object.__setattr__(self, "low", tuple(lo.tolist()))
        object.__setattr__(self, "high", tuple(hi.tolist()))

    @property
    def dim(self) -> int:
        return len(self.low)

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return rng.uniform(self.low, self.high, size=(n, self.dim))

    def in_support(self, theta) -> np.ndarray:
        t = _rows(theta, self.dim)
        return np.all((t >= self.low) & (t <= self.high), axis=1)

    def log_prob(self, theta) -> np.ndarray:
        t = _rows(theta, self.dim)
        lp = -np.sum(np.log(np.subtract(self.high, self.low)))
        return np.where(self.in_support(t), lp, -np.inf)

    def grad_log_prob(self, theta) -> np.ndarray:
        return np.zeros_like(_rows(theta, self.dim))

    def to_dict(self) -> dict:
        return {"kind": self.kind, "low": list(self.low), "high": list(self.high)}


@dataclass(frozen=True)
class DiagGaussianPrior:
    mean: tuple
    std: tuple
    kind: str = field(default="diagonal-gaussian", init=False)

    def __post_init__(self):
        mu, sd = np.asarray(self.mean, float), np.asarray(self.std, float)
        if mu.shape != sd.shape or mu.ndim != 1 or not np.all(sd > 0):
            raise ValueError("gaussian prior needs matching mean/std with std > 0")
        object.__setattr__(self, "mean", tuple(mu.tolist()))
        object.__setattr__(self, "std", tuple(sd.tolist()))

    @property
    def dim(self) -> int:
        return len(self.mean)

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return np.asarray(self.mean) + np.asarray(self.std) * rng.standard_normal((n, self.dim))

    def in_support(self, theta) -> np.ndarray:
        t = _rows(theta, self.dim)
        return np.all(np.isfinite(t), axis=1)

    def log_prob(self, theta) -> np.ndarray:
        t = _rows(theta, self.dim)
        z = (t - np.asarray(self.mean)) / np.asarray(self.std)
        return -0.5 * np.sum(z * z, axis=1) - np.sum(np.log(self.std)) - 0.5 * self.dim * _LOG_2PI

    def grad_log_prob(self, theta) -> np.ndarray:
        t = _rows(theta, self.dim)
        return -(t - np.asarray(self.mean)) / np.square(self.std)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "mean": list(self.mean), "std": list(self.std)}


def prior_from_dict(d: dict):
    if d["kind"] == "uniform-box":
        return UniformBoxPrior(tuple(d["low"]), tuple(d["high"]))
    if d["kind"] == "diagonal-gaussian":
        return DiagGaussianPrior(tuple(d["mean"]), tuple(d["std"]))
    raise ValueError(f"unknown prior kind {d['kind']!r}")


# --------------------------------------------------------------------------- tasks


@dataclass
class TaskSpec:
    """One benchmark problem.

    Oracles take ``x`` as a single observation (shape ``(x_dim,)``) or rows
    matching ``theta``; ``theta`` is ``(n, theta_dim)``. Outputs are ``(n,)``.
    """

    name: str
    theta_dim: int
    x_dim: int
    prior: object
    simulate: Callable[[np.ndarray, np.random.Generator], np.ndarray]
    log_likelihood: Optional[Callable] = None
    grad_log_likelihood: Optional[Callable] = None
    log_evidence: Optional[Callable] = None
    posterior_log_prob: Optional[Callable] = None
    posterior_sample: Optional[Callable] = None
    reference_sample: Optional[Callable] = None
    params: dict = field(default_factory=dict)

    def simulator(self, theta, rng: np.random.Generator) -> np.ndarray:
        theta = _rows(theta, self.theta_dim)
        x = self.simulate(theta, rng)
        if x.shape != (theta.shape[0], self.x_dim):
            raise RuntimeError(f"simulator for {self.name} returned shape {x.shape}")
        return x

    def log_ratio(self, x, theta, theta_prime) -> np.ndarray:
        """Exact log p(x|theta) - log p(x|theta')."""
        if self.log_likelihood is None:
            raise ValueError(f"task {self.name} has no analytic likelihood")
        a = self.log_likelihood(x, theta)
        b = self.log_likelihood(x, theta_prime)
        with np.errstate(invalid="ignore"):
            out = a - b
        # both impossible: ratio undefined, treat as impossible numerator
        return np.where(np.isneginf(a), -np.inf, out)

    def describe(self) -> dict:
        return {"name": self.name, "params": dict(self.params)}


def _gauss_loglik(x, theta, var):
    x = np.asarray(x, dtype=np.float64)
    d = x - theta
    k = theta.shape[1]
    return -0.5 * np.sum(d * d, axis=-1) / var - 0.5 * k * (_LOG_2PI + math.log(var))


def gauss1d_task(sigma: float = 0.5) -> TaskSpec:
    sigma = float(sigma)
    if not sigma > 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    var = sigma * sigma

    def simulate(theta, rng):
        return theta + sigma * rng.standard_normal(theta.shape)

    def loglik(x, theta):
        return _gauss_loglik(x, _rows(theta, 1), var)

    def grad_loglik(x, theta):
        return (np.asarray(x, dtype=np.float64) - _rows(theta, 1)) / var

    def log_evidence(x):
        return _gauss_loglik(np.zeros(1), _rows(x, 1), 2.0 * var)

    def post_log_prob(theta, x):
        x = np.asarray(x, dtype=np.float64).reshape(-1)
        return _gauss_loglik(x / 2.0, _rows(theta, 1), var / 2.0)

    def post_sample(x, n, rng):
        x = np.asarray(x, dtype=np.float64).reshape(1)
        return x / 2.0 + math.sqrt(var / 2.0) * rng.standard_normal((n, 1))

    return TaskSpec(
        name="gauss1d",
        theta_dim=1,
        x_dim=1,
        prior=DiagGaussianPrior((0.0,), (sigma,)),
        simulate=simulate,
        log_likelihood=loglik,
        grad_log_likelihood=grad_loglik,
        log_evidence=log_evidence,
        posterior_log_prob=post_log_prob,
        posterior_sample=post_sample,
        reference_sample=post_sample,
        params={"sigma": sigma},
    )


_TM_R_MEAN, _TM_R_STD, _TM_SHIFT = 0.1, 0.01, 0.25


def two_moons_forward(theta, a, r) -> np.ndarray:
    """Deterministic part of the two-moons simulator for given noise (a, r)."""
    theta = _rows(theta, 2)
    a, r = np.asarray(a, float), np.asarray(r, float)
    p = np.stack([r * np.cos(a) + _TM_SHIFT, r * np.sin(a)], axis=-1)
    s = np.stack(
        [-np.abs(theta[:, 0] + theta[:, 1]), -theta[:, 0] + theta[:, 1]], axis=-1
    ) / math.sqrt(2.0)
    return p + s


def _two_moons_loglik(x, theta):
    theta = _rows(theta, 2)
    x = np.asarray(x, dtype=np.float64)
    s = np.stack(
        [-np.abs(theta[:, 0] + theta[:, 1]), -theta[:, 0] + theta[:, 1]], axis=-1
    ) / math.sqrt(2.0)
    u = x - s
    u0 = u[..., 0] - _TM_SHIFT
    u1 = u[..., 1]
    r = np.hypot(u0, u1)
    # (a, r) -> (r cos a, r sin a) has Jacobian r; a is uniform on a width-pi interval
    z = (r - _TM_R_MEAN) / _TM_R_STD
    with np.errstate(divide="ignore"):
        ll = -0.5 * z * z - math.log(_TM_R_STD) - 0.5 * _LOG_2PI - math.log(math.pi) - np.log(r)
    return np.where(u0 > 0, ll, -np.inf)


def grid_reference_sampler(task: TaskSpec, resolution: int = 512, bounds=None):
    """Posterior sampler from a dense grid over a 2-D box.

    Cells are drawn with probability proportional to likelihood x prior at the
    cell centre; each draw is then jittered uniformly within its cell.
    """
    if task.theta_dim != 2:
        raise ValueError("grid reference sampler needs a 2-D parameter")
    if bounds is None:
        bounds = (task.prior.low, task.prior.high)
    lo, hi = np.asarray(bounds[0], float), np.asarray(bounds[1], float)

    def grid(x):
        width = (hi - lo) / resolution
        c0 = lo[0] + (np.arange(resolution) + 0.5) * width[0]
        c1 = lo[1] + (np.arange(resolution) + 0.5) * width[1]
        g0, g1 = np.meshgrid(c0, c1, indexing="ij")
        centres = np.stack([g0.ravel(), g1.ravel()], axis=1)
        logp = task.log_likelihood(x, centres) + task.prior.log_prob(centres)
        logp = logp - np.max(logp)
        p = np.exp(logp)
        return centres, p / p.sum(), width

    def sample(x, n, rng):
        centres, p, width = grid(x)
        idx = rng.choice(len(p), size=n, p=p)
        return centres[idx] + rng.uniform(-0.5, 0.5, size=(n, 2)) * width

    sample.grid = grid
    return sample


def two_moons_task() -> TaskSpec:
    def simulate(theta, rng):
        n = theta.shape[0]
        a = rng.uniform(-math.pi / 2.0, math.pi / 2.0, size=n)
        r = _TM_R_MEAN + _TM_R_STD * rng.standard_normal(n)
        return two_moons_forward(theta, a, r)

    task = TaskSpec(
        name="two_moons",
        theta_dim=2,
        x_dim=2,
        prior=UniformBoxPrior((-1.0, -1.0), (1.0, 1.0)),
        simulate=simulate,
        log_likelihood=_two_moons_loglik,
    )
    task.reference_sample = grid_reference_sampler(task)
    return task


_GL_VAR = 0.1


def gaussian_linear_task(dim: int = 10) -> TaskSpec:
    dim = int(dim)

    def simulate(theta, rng):
        return theta + math.sqrt(_GL_VAR) * rng.standard_normal(theta.shape)

    def loglik(x, theta):
        return _gauss_loglik(x, _rows(theta, dim), _GL_VAR)

    def grad_loglik(x, theta):
        return (np.asarray(x, dtype=np.float64) - _rows(theta, dim)) / _GL_VAR

    def log_evidence(x):
        return _gauss_loglik(np.zeros(dim), _rows(x, dim), 2.0 * _GL_VAR)

    def post_log_prob(theta, x):
        return _gauss_loglik(np.asarray(x, float) / 2.0, _rows(theta, dim), _GL_VAR / 2.0)

    def post_sample(x, n, rng):
        mu = np.asarray(x, dtype=np.float64).reshape(dim) / 2.0
        return mu + math.sqrt(_GL_VAR / 2.0) * rng.standard_normal((n, dim))

    return TaskSpec(
        name="gaussian_linear",
        theta_dim=dim,
        x_dim=dim,
        prior=DiagGaussianPrior((0.0,) * dim, (math.sqrt(_GL_VAR),) * dim),
        simulate=simulate,
        log_likelihood=loglik,
        grad_log_likelihood=grad_loglik,
        log_evidence=log_evidence,
        posterior_log_prob=post_log_prob,
        posterior_sample=post_sample,
        reference_sample=post_sample,
        params={"dim": dim},
    )


def gaussian_linear_uniform_task(dim: int = 10) -> TaskSpec:
    dim = int(dim)
    s = math.sqrt(_GL_VAR)
    prior = UniformBoxPrior((-1.0,) * dim, (1.0,) * dim)

    def simulate(theta, rng):
        return theta + s * rng.standard_normal(theta.shape)

    def loglik(x, theta):
        return _gauss_loglik(x, _rows(theta, dim), _GL_VAR)

    def grad_loglik(x, theta):
        return (np.asarray(x, dtype=np.float64) - _rows(theta, dim)) / _GL_VAR

    def _log_mass(x):
        # per-dimension mass of N(x_d, s^2) inside [-1, 1]: Phi((1-x)/s) - Phi((-1-x)/s)
        x = np.asarray(x, dtype=np.float64)
        return np.log(ndtr((1.0 - x) / s) - ndtr((-1.0 - x) / s))

    def log_evidence(x):
        x = _rows(x, dim)
        return np.sum(_log_mass(x), axis=1) - dim * math.log(2.0)

    def post_log_prob(theta, x):
        # truncated normal: N(theta_d; x_d, s^2) / mass_d on the box, zero outside
        theta = _rows(theta, dim)
        lp = _gauss_loglik(x, theta, _GL_VAR) - np.sum(_log_mass(x))
        return np.where(prior.in_support(theta), lp, -np.inf)

    def post_sample(x, n, rng):
        x = np.asarray(x, dtype=np.float64).reshape(dim)
        a, b = (-1.0 - x) / s, (1.0 - x) / s
        return truncnorm.rvs(a, b, loc=x, scale=s, size=(n, dim), random_state=rng)

    return TaskSpec(
        name="gaussian_linear_uniform",
        theta_dim=dim,
        x_dim=dim,
        prior=prior,
        simulate=simulate,
        log_likelihood=loglik,
        grad_log_likelihood=grad_loglik,
        log_evidence=log_evidence,
        posterior_log_prob=post_log_prob,
        posterior_sample=post_sample,
        reference_sample=post_sample,
        params={"dim": dim},
    )


_GM_VARS = (1.0, 0.01)


def gaussian_mixture_task() -> TaskSpec:
    prior = UniformBoxPrior((-10.0, -10.0), (10.0, 10.0))

    def simulate(theta, rng):
        n = theta.shape[0]
        wide = rng.random(n) < 0.5
        scale = np.where(wide, math.sqrt(_GM_VARS[0]), math.sqrt(_GM_VARS[1]))
        return theta + scale[:, None] * rng.standard_normal(theta.shape)

    def loglik(x, theta):
        theta = _rows(theta, 2)
        comps = [math.log(0.5) + _gauss_loglik(x, theta, v) for v in _GM_VARS]
        return np.logaddexp(*comps)

    def grad_loglik(x, theta):
        theta = _rows(theta, 2)
        d = np.asarray(x, dtype=np.float64) - theta
        lw = np.stack([_gauss_loglik(x, theta, v) for v in _GM_VARS], axis=1)
        w = np.exp(lw - np.logaddexp(lw[:, :1], lw[:, 1:]))
        return d * (w[:, :1] / _GM_VARS[0] + w[:, 1:] / _GM_VARS[1])

    def log_evidence(x):
        x = _rows(x, 2)
        # each isotropic component integrates over the box as a product of 1-D CDF differences
        comps = []
        for v in _GM_VARS:
            s = math.sqrt(v)
            m = np.log(ndtr((10.0 - x) / s) - ndtr((-10.0 - x) / s)).sum(axis=1)
            comps.append(math.log(0.5) + m)
        return np.logaddexp(*comps) - math.log(400.0)

    task = TaskSpec(
        name="gaussian_mixture",
        theta_dim=2,
        x_dim=2,
        prior=prior,
        simulate=simulate,
        log_likelihood=loglik,
        grad_log_likelihood=grad_loglik,
        log_evidence=log_evidence,
    )
    task.reference_sample = grid_reference_sampler(task)
    return task


TASKS = {
    "gauss1d": gauss1d_task,
    "two_moons": two_moons_task,
    "gaussian_linear": gaussian_linear_task,
    "gaussian_linear_uniform": gaussian_linear_uniform_task,
    "gaussian_mixture": gaussian_mixture_task,
}

ALIASES = {"tm": "two_moons", "gl": "gaussian_linear", "glu": "gaussian_linear_uniform", "gm": "gaussian_mixture"}


def get_task(name: str, **params) -> TaskSpec:
    key = ALIASES.get(name.lower(), name.lower())
    if key not in TASKS:
        raise KeyError(f"unknown task {name!r}; available: {sorted(TASKS)}")
    return TASKS[key](**params)


def task_from_description(desc: dict) -> TaskSpec:
    return get_task(desc["name"], **desc.get("params", {}))


# --------------------------------------------------------------------------- datasets


@dataclass
class Dataset:
    thetas: np.ndarray
    xs: np.ndarray
    seed: int
    task: str
    task_params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.thetas.shape[0] != self.xs.shape[0]:
            raise ValueError("thetas and xs must have the same number of rows")

    def __len__(self):
        return self.thetas.shape[0]

    def split(self, val_fraction: float, seed: int):
        """Random train/validation split."""
        if not 0.0 < val_fraction < 1.0:
            raise ValueError("val_fraction must lie in (0, 1)")
        n = len(self)
        perm = make_rng(seed, 7).permutation(n)
        n_val = max(1, int(round(n * val_fraction)))
        va, tr = perm[:n_val], perm[n_val:]
        return (
            Dataset(self.thetas[tr], self.xs[tr], self.seed, self.task, self.task_params),
            Dataset(self.thetas[va], self.xs[va], self.seed, self.task, self.task_params),
        )


def generate_dataset(task: TaskSpec, n: int, seed: int) -> Dataset:
    """``n`` prior draws, one simulation each."""
    n = int(n)
    if n < 1:
        raise ValueError(f"dataset size must be >= 1, got {n}")
    rng = make_rng(seed)
    thetas = task.prior.sample(rng, n)
    xs = task.simulator(thetas, rng)
    return Dataset(thetas, xs, int(seed), task.name, dict(task.params))


def save_dataset(ds: Dataset, path, extra_meta: Optional[dict] = None) -> tuple[Path, Path]:
    path = Path(path)
    d, k = ds.thetas.shape[1], ds.xs.shape[1]
    header = [f"theta_{i}" for i in range(d)] + [f"x_{i}" for i in range(k)]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for t, x in zip(ds.thetas, ds.xs):
            w.writerow([repr(float(v)) for v in t] + [repr(float(v)) for v in x])
    meta = {
        "format_version": FORMAT_VERSION,
        "task": ds.task,
        "task_params": ds.task_params,
        "n": len(ds),
        "seed": ds.seed,
    }
    if extra_meta:
        meta.update(extra_meta)
    meta_path = path.with_suffix(path.suffix + ".json")
    meta_path.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return path, meta_path


def load_dataset(path) -> Dataset:
    path = Path(path)
    meta_path = path.with_suffix(path.suffix + ".json")
    meta = json.loads(meta_path.read_text())
    if meta.get("format_version") != FORMAT_VERSION:
        raise ValueError(f"unsupported dataset format_version {meta.get('format_version')!r}")
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    d = sum(h.startswith("theta_") for h in header)
    arr = np.array([[float(v) for v in r] for r in body], dtype=np.float64).reshape(len(body), len(header))
    return Dataset(arr[:, :d].copy(), arr[:, d:].copy(), meta["seed"], meta["task"], meta.get("task_params", {}))
