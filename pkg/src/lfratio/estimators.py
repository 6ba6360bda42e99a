"""Amortized likelihood-ratio estimators: NRE, BNRE and DNRE.

All three are a single ELU MLP whose logit is read directly as a log ratio:

* NRE / BNRE take ``[x, theta]`` and estimate ``log p(x|theta) / p(x)``.
* DNRE takes ``[x, theta, theta']`` and estimates ``log p(x|theta) / p(x|theta')``.

Features are z-scored with statistics from the training set; ``theta`` and
``theta'`` share one set of statistics.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from enum import Enum
from pathlib import Path
from typing import Optional

import numpy as np

from .numcore.losses import sigmoid, softplus
from .numcore.mlp import MlpNetwork, _backward, _forward
from .numcore.optim import AdamState, adam_step
from .numcore.rng import make_rng
from .tasks import Dataset, TaskSpec, get_task, task_from_description

log = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1
DEFAULT_BNRE_LAMBDA = 100.0


class EstimatorKind(str, Enum):
    NRE = "NRE"
    BNRE = "BNRE"
    DNRE = "DNRE"

    @classmethod
    def parse(cls, value) -> "EstimatorKind":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).upper())
        except ValueError:
            raise ValueError(f"unknown estimator kind {value!r}; expected NRE, BNRE or DNRE") from None

    @property
    def pairwise(self) -> bool:
        return self is EstimatorKind.DNRE


class TrainingError(RuntimeError):
    pass


class CheckpointError(ValueError):
    pass


@dataclass
class TrainConfig:
    epochs: int = 1000
    batch_size: int = 256
    lr: float = 1e-3
    hidden: tuple = (64, 64, 64)
    seed: int = 0
    val_fraction: float = 0.1
    bnre_lambda: float = DEFAULT_BNRE_LAMBDA
    init: str = "uniform"

    def __post_init__(self):
        self.hidden = tuple(int(h) for h in self.hidden)
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2 (contrast pairs need two rows)")
        if not 0.0 < self.val_fraction < 1.0:
            raise ValueError("val_fraction must lie in (0, 1)")
        if not (math.isfinite(self.bnre_lambda) and self.bnre_lambda >= 0):
            raise ValueError("bnre_lambda must be finite and >= 0")
        if self.init not in ("uniform", "zeros"):
            raise ValueError("init must be 'uniform' or 'zeros'")


@dataclass
class Standardization:
    x_mean: np.ndarray
    x_std: np.ndarray
    theta_mean: np.ndarray
    theta_std: np.ndarray

    @classmethod
    def fit(cls, thetas, xs) -> "Standardization":
        def stats(a):
            m, s = a.mean(axis=0), a.std(axis=0)
            return m, np.where(s > 0, s, 1.0)

        xm, xs_ = stats(np.asarray(xs, float))
        tm, ts = stats(np.asarray(thetas, float))
        return cls(xm, xs_, tm, ts)

    @classmethod
    def identity(cls, x_dim, theta_dim) -> "Standardization":
        return cls(np.zeros(x_dim), np.ones(x_dim), np.zeros(theta_dim), np.ones(theta_dim))

    def to_dict(self) -> dict:
        return {k: np.asarray(v).tolist() for k, v in asdict(self).items()}

    @classmethod
    def from_dict(cls, d) -> "Standardization":
        return cls(*(np.asarray(d[k], dtype=np.float64) for k in ("x_mean", "x_std", "theta_mean", "theta_std")))


@dataclass
class RatioEstimator:
    kind: EstimatorKind
    net: MlpNetwork
    x_dim: int
    theta_dim: int
    standardization: Standardization
    task: dict = field(default_factory=dict)
    bnre_lambda: float = 0.0
    metadata: dict = field(default_factory=dict)

    allows_infinite = False

    def __post_init__(self):
        self.kind = EstimatorKind.parse(self.kind)
        n_theta = 2 if self.kind.pairwise else 1
        expected = self.x_dim + n_theta * self.theta_dim
        if self.net.input_dim != expected:
            raise ValueError(
                f"{self.kind.value} with x_dim={self.x_dim}, theta_dim={self.theta_dim} "
                f"needs input dimension {expected}, network has {self.net.input_dim}"
            )
        st = self.standardization
        if not (np.all(st.x_std > 0) and np.all(st.theta_std > 0)):
            raise ValueError("standardization stds must be positive")

    # -- evaluation ---------------------------------------------------------

    def _features(self, x, theta, theta_prime=None):
        st = self.standardization
        theta = np.atleast_2d(np.asarray(theta, dtype=np.float64))
        n = theta.shape[0]
        x = np.asarray(x, dtype=np.float64)
        x = np.broadcast_to(x.reshape(-1, self.x_dim), (n, self.x_dim))
        if theta.shape[1] != self.theta_dim:
            raise ValueError(f"theta must have dimension {self.theta_dim}, got {theta.shape}")
        cols = [(x - st.x_mean) / st.x_std, (theta - st.theta_mean) / st.theta_std]
        if theta_prime is not None:
            tp = np.atleast_2d(np.asarray(theta_prime, dtype=np.float64))
            tp = np.broadcast_to(tp, (n, self.theta_dim)) if tp.shape[0] == 1 else tp
            if tp.shape != (n, self.theta_dim):
                raise ValueError(f"theta_prime shape {tp.shape} does not match theta {theta.shape}")
            cols.append((tp - st.theta_mean) / st.theta_std)
        feats = np.concatenate(cols, axis=1)
        if not np.all(np.isfinite(feats)):
            raise ValueError("non-finite estimator input")
        return feats

    def logit(self, x, theta, theta_prime=None) -> np.ndarray:
        """Raw network output for rows of ``theta`` (and ``theta'`` for DNRE)."""
        if self.kind.pairwise and theta_prime is None:
            raise ValueError("DNRE needs theta_prime")
        if not self.kind.pairwise and theta_prime is not None:
            raise ValueError(f"{self.kind.value} takes no theta_prime in a single pass")
        out, _ = _forward(self.net, self._features(x, theta, theta_prime))
        return out

    def log_ratio(self, x, theta, theta_prime=None, pairwise: bool = False, symmetrize: bool = False):
        """Estimated log ratio.

        DNRE: ``log r(x | theta, theta')`` in one pass (``theta'`` required).
        NRE/BNRE: ``log r(x | theta)``; with ``pairwise=True`` and ``theta'``
        given, the two-pass difference ``l(x, theta) - l(x, theta')``.

        ``symmetrize`` (DNRE only, off by default) returns
        ``(l(x, t, t') - l(x, t', t)) / 2``. This is an evaluation convenience,
        not part of the trained method.
        """
        if self.kind.pairwise:
            if theta_prime is None:
                raise ValueError("DNRE log_ratio needs theta_prime")
            fwd = self.logit(x, theta, theta_prime)
            if symmetrize:
                theta, theta_prime = np.broadcast_arrays(np.atleast_2d(theta), np.atleast_2d(theta_prime))
                fwd = 0.5 * (fwd - self.logit(x, theta_prime, theta))
            return fwd
        if symmetrize:
            raise ValueError("symmetrize only applies to DNRE")
        if theta_prime is None:
            return self.logit(x, theta)
        if not pairwise:
            raise ValueError(
                f"{self.kind.value} estimates a likelihood-to-evidence ratio; "
                "pass pairwise=True to compose two passes"
            )
        theta = np.atleast_2d(theta)
        tp = np.atleast_2d(theta_prime)
        tp = np.broadcast_to(tp, theta.shape) if tp.shape[0] == 1 else tp
        return self.logit(x, theta) - self.logit(x, tp)

    def grad_theta(self, x, theta, theta_prime=None) -> np.ndarray:
        """Gradient of the logit with respect to the (unstandardized) ``theta`` slice."""
        feats = self._features(x, theta, theta_prime if self.kind.pairwise else None)
        _, cache = _forward(self.net, feats)
        _, dfeat = _backward(self.net, cache, np.ones(feats.shape[0]), want_input=True)
        d = self.theta_dim
        return dfeat[:, self.x_dim : self.x_dim + d] / self.standardization.theta_std

    def describe(self) -> dict:
        return {"kind": self.kind.value, "lambda": self.bnre_lambda, "task": self.task}

    # -- persistence --------------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "format_version": CHECKPOINT_VERSION,
            "estimator_kind": self.kind.value,
            "lambda": self.bnre_lambda,
            "layer_sizes": self.net.layer_sizes,
            "activation": self.net.activation,
            "weights": [w.tolist() for w in self.net.weights],
            "biases": [b.tolist() for b in self.net.biases],
            "x_dim": self.x_dim,
            "theta_dim": self.theta_dim,
            "standardization": self.standardization.to_dict(),
            "task": self.task,
            "training": self.metadata,
        }

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def save(est: RatioEstimator, path) -> Path:
    path = Path(path)
    path.write_text(json.dumps(est.to_dict(), sort_keys=True, indent=1) + "\n")
    return path


def load(path) -> RatioEstimator:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise CheckpointError(f"corrupt checkpoint {path}: {exc}") from exc
    if not isinstance(doc, dict):
        raise CheckpointError(f"corrupt checkpoint {path}: not a JSON object")
    version = doc.get("format_version")
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"checkpoint {path} has format_version {version!r}, expected {CHECKPOINT_VERSION}")
    try:
        net = MlpNetwork(
            [np.array(w, dtype=np.float64) for w in doc["weights"]],
            [np.array(b, dtype=np.float64) for b in doc["biases"]],
            activation=doc["activation"],
        )
        if net.layer_sizes != list(doc["layer_sizes"]):
            raise CheckpointError(f"checkpoint {path}: layer_sizes disagree with weights")
        return RatioEstimator(
            kind=doc["estimator_kind"],
            net=net,
            x_dim=int(doc["x_dim"]),
            theta_dim=int(doc["theta_dim"]),
            standardization=Standardization.from_dict(doc["standardization"]),
            task=doc.get("task", {}),
            bnre_lambda=float(doc.get("lambda", 0.0)),
            metadata=doc.get("training", {}),
        )
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, CheckpointError):
            raise
        raise CheckpointError(f"corrupt checkpoint {path}: {exc}") from exc


# --------------------------------------------------------------------------- exact oracle


class OracleEstimator:
    """Analytic ratio with the estimator interface, for oracle-level checks.

    ``kind=DNRE`` gives ``log p(x|t) - log p(x|t')``; ``kind=NRE`` gives
    ``log p(x|t) - log p(x)`` and needs the task's evidence.
    """

    allows_infinite = True

    def __init__(self, task: TaskSpec, kind="DNRE"):
        if task.log_likelihood is None:
            raise ValueError(f"task {task.name} has no analytic likelihood")
        self.kind = EstimatorKind.parse(kind)
        if not self.kind.pairwise and task.log_evidence is None:
            raise ValueError(f"task {task.name} has no analytic evidence for a {self.kind.value} oracle")
        self.task_spec = task
        self.x_dim = task.x_dim
        self.theta_dim = task.theta_dim
        self.task = task.describe()
        self.bnre_lambda = 0.0

    def _evidence(self, x):
        return self.task_spec.log_evidence(np.asarray(x, dtype=np.float64).reshape(-1, self.x_dim))

    def logit(self, x, theta, theta_prime=None):
        theta = np.atleast_2d(np.asarray(theta, dtype=np.float64))
        if self.kind.pairwise:
            if theta_prime is None:
                raise ValueError("DNRE needs theta_prime")
            tp = np.atleast_2d(np.asarray(theta_prime, dtype=np.float64))
            tp = np.broadcast_to(tp, theta.shape) if tp.shape[0] == 1 else tp
            return self.task_spec.log_ratio(np.asarray(x, float), theta, tp)
        if theta_prime is not None:
            raise ValueError(f"{self.kind.value} takes no theta_prime in a single pass")
        return self.task_spec.log_likelihood(np.asarray(x, float), theta) - self._evidence(x)

    def log_ratio(self, x, theta, theta_prime=None, pairwise: bool = False, symmetrize: bool = False):
        if self.kind.pairwise or theta_prime is None:
            return self.logit(x, theta, theta_prime)
        if not pairwise:
            raise ValueError("pass pairwise=True to compose two passes")
        theta = np.atleast_2d(theta)
        return self.task_spec.log_ratio(np.asarray(x, float), theta, np.atleast_2d(theta_prime))

    def grad_theta(self, x, theta, theta_prime=None):
        if self.task_spec.grad_log_likelihood is None:
            raise ValueError(f"task {self.task_spec.name} has no analytic score")
        # theta' (DNRE) and log p(x) (NRE) do not depend on theta
        return self.task_spec.grad_log_likelihood(np.asarray(x, float), np.atleast_2d(theta))

    def describe(self) -> dict:
        return {"kind": self.kind.value, "oracle": True, "task": self.task}

    def digest(self) -> str:
        return "oracle-" + hashlib.sha256(json.dumps(self.describe(), sort_keys=True).encode()).hexdigest()[:8]


def estimator_task(est) -> TaskSpec:
    if isinstance(est, OracleEstimator):
        return est.task_spec
    return task_from_description(est.task)


# --------------------------------------------------------------------------- training


def _bce_terms(lp, ln):
    """Mean BCE of positives (label 1) and negatives (label 0) with logit gradients."""
    n_pos, n_neg = lp.shape[0], ln.shape[0]
    loss = softplus(-lp).mean() + softplus(ln).mean()
    sp, sn = sigmoid(lp), sigmoid(ln)
    return loss, (sp - 1.0) / n_pos, sn / n_neg, sp, sn


def contrast_loss(kind, lp, ln, lam=0.0):
    """Batch loss and per-logit gradients for positive/negative logits."""
    loss, gp, gn, sp, sn = _bce_terms(lp, ln)
    if kind is EstimatorKind.BNRE:
        balance = sp.mean() + sn.mean() - 1.0
        loss = loss + lam * balance * balance
        c = 2.0 * lam * balance
        gp = gp + c * sp * (1.0 - sp) / lp.shape[0]
        gn = gn + c * sn * (1.0 - sn) / ln.shape[0]
    return loss, gp, gn


def dnre_loss(net, x_std, theta_std, theta_prime_std):
    """Loss on one batch: BCE(d(x, t, t'), 1) + BCE(d(x, t', t), 0), already-standardized inputs."""
    pos = np.concatenate([x_std, theta_std, theta_prime_std], axis=1)
    neg = np.concatenate([x_std, theta_prime_std, theta_std], axis=1)
    logits, _ = _forward(net, np.concatenate([pos, neg], axis=0))
    n = pos.shape[0]
    loss, _, _ = contrast_loss(EstimatorKind.DNRE, logits[:n], logits[n:])
    return float(loss)


def _batch_inputs(kind, xz, tz, tpz):
    if kind.pairwise:
        pos = np.concatenate([xz, tz, tpz], axis=1)
        neg = np.concatenate([xz, tpz, tz], axis=1)
    else:
        pos = np.concatenate([xz, tz], axis=1)
        neg = np.concatenate([xz, tpz], axis=1)
    return np.concatenate([pos, neg], axis=0)


def train(
    data: Dataset,
    kind,
    cfg: Optional[TrainConfig] = None,
    task: Optional[TaskSpec] = None,
    val_data: Optional[Dataset] = None,
    callback=None,
):
    """Fit a ratio estimator.

    NRE/BNRE contrast each joint pair ``(x_m, theta_m)`` against
    ``(x_m, theta_{m-1})`` (the theta batch rolled by one). DNRE draws a fresh
    ``theta'`` batch from the prior at every step and uses the label-1 triplet
    ``(x, theta, theta')`` against the swapped label-0 triplet
    ``(x, theta', theta)``.

    Returns ``(estimator, curves)`` where ``curves`` is a list of
    ``(epoch, train_loss, val_loss)`` and the estimator holds the parameters
    with the lowest validation loss. ``callback(epoch, train_loss, val_loss, net)``
    is called after every epoch when given.
    """
    cfg = cfg or TrainConfig()
    kind = EstimatorKind.parse(kind)
    lam = cfg.bnre_lambda if kind is EstimatorKind.BNRE else 0.0
    if task is None:
        task = get_task(data.task, **data.task_params)
    if val_data is None:
        train_data, val_data = data.split(cfg.val_fraction, cfg.seed)
    else:
        train_data = data
    n = len(train_data)
    if n < cfg.batch_size:
        raise ValueError(f"training set ({n}) is smaller than the batch size ({cfg.batch_size})")

    rng = make_rng(cfg.seed)
    st = Standardization.fit(train_data.thetas, train_data.xs)
    n_theta = 2 if kind.pairwise else 1
    sizes = [task.x_dim + n_theta * task.theta_dim, *cfg.hidden, 1]
    net = MlpNetwork.init(sizes, rng=rng, zeros=cfg.init == "zeros")
    params = net.parameters()
    opt = AdamState.for_params(params, lr=cfg.lr)

    def zx(a):
        return (a - st.x_mean) / st.x_std

    def zt(a):
        return (a - st.theta_mean) / st.theta_std

    xz, tz = zx(train_data.xs), zt(train_data.thetas)
    vxz, vtz = zx(val_data.xs), zt(val_data.thetas)
    if kind.pairwise:
        vtpz = zt(task.prior.sample(make_rng(cfg.seed, 1), len(val_data)))
    else:
        vtpz = np.roll(vtz, 1, axis=0)
    val_inputs = _batch_inputs(kind, vxz, vtz, vtpz)
    n_val = vxz.shape[0]

    def val_loss():
        logits, _ = _forward(net, val_inputs)
        loss, _, _ = contrast_loss(kind, logits[:n_val], logits[n_val:], lam)
        return float(loss)

    best = (val_loss(), net.copy(), 0)
    curves = []
    bs = cfg.batch_size
    for epoch in range(1, cfg.epochs + 1):
        perm = rng.permutation(n)
        total, count = 0.0, 0
        for b, start in enumerate(range(0, n, bs)):
            idx = perm[start : start + bs]
            m = idx.shape[0]
            if m < 2:
                continue
            bx, bt = xz[idx], tz[idx]
            if kind.pairwise:
                btp = zt(task.prior.sample(rng, m))
            else:
                btp = np.roll(bt, 1, axis=0)
            inputs = _batch_inputs(kind, bx, bt, btp)
            logits, cache = _forward(net, inputs)
            loss, gp, gn = contrast_loss(kind, logits[:m], logits[m:], lam)
            if not math.isfinite(loss):
                raise TrainingError(
                    f"non-finite loss at epoch {epoch}, batch {b}: loss={loss}, "
                    f"max |logit|={np.max(np.abs(logits)):.3g}"
                )
            grads, _ = _backward(net, cache, np.concatenate([gp, gn]))
            adam_step(params, grads, opt)
            total += loss * m
            count += m
        vl = val_loss()
        if not math.isfinite(vl):
            raise TrainingError(f"non-finite validation loss at epoch {epoch}: {vl}")
        curves.append((epoch, total / count, vl))
        if vl < best[0]:
            best = (vl, net.copy(), epoch)
        log.debug("epoch %d train %.5f val %.5f", epoch, total / count, vl)
        if callback is not None:
            callback(epoch, total / count, vl, net)

    meta = {
        "config": {**asdict(cfg), "hidden": list(cfg.hidden)},
        "best_epoch": best[2],
        "best_val_loss": best[0],
        "n_train": n,
        "n_val": n_val,
        "dataset_seed": data.seed,
    }
    est = RatioEstimator(
        kind=kind,
        net=best[1],
        x_dim=task.x_dim,
        theta_dim=task.theta_dim,
        standardization=st,
        task=task.describe(),
        bnre_lambda=lam,
        metadata=meta,
    )
    return est, curves


def save_curves(curves, path) -> Path:
    path = Path(path)
    with open(path, "w") as fh:
        fh.write("epoch,train_loss,val_loss\n")
        for e, tr, va in curves:
            fh.write(f"{e},{tr!r},{va!r}\n")
    return path


def log_ratio(est, x, theta, theta_prime=None, pairwise: bool = False, symmetrize: bool = False):
    return est.log_ratio(x, theta, theta_prime, pairwise=pairwise, symmetrize=symmetrize)
