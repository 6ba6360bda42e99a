"""Amortized likelihood-ratio estimation (NRE, BNRE, DNRE) with likelihood-free MCMC."""

from .estimators import (
    EstimatorKind,
    OracleEstimator,
    RatioEstimator,
    TrainConfig,
    load,
    log_ratio,
    save,
    train,
)
from .numcore import MlpNetwork
from .posterior import PosteriorEvaluator, log_posterior, posterior_grid
from .samplers import ChainSet, HmcConfig, LogRatioTarget, hmc_sample, rwmh_sample
from .tasks import TaskSpec, generate_dataset, get_task

__all__ = [
    "ChainSet",
    "EstimatorKind",
    "HmcConfig",
    "LogRatioTarget",
    "MlpNetwork",
    "OracleEstimator",
    "PosteriorEvaluator",
    "RatioEstimator",
    "TaskSpec",
    "TrainConfig",
    "generate_dataset",
    "get_task",
    "hmc_sample",
    "load",
    "log_posterior",
    "log_ratio",
    "posterior_grid",
    "rwmh_sample",
    "save",
    "train",
]
