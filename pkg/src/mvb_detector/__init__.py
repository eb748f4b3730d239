"""Bayesian change-point detection for discrete-time competing-risks survival data."""

__version__ = "0.1.0"

from .data import AllowedSet, DataError, Dataset, Observation, compute_allowed_set, parse_dataset
from .inference import (
    PosteriorSample,
    PosteriorSamples,
    per_time_bayes_factors,
    savage_dickey_K0,
    summarize,
)
from .likelihood import cumulative_hazard, log_likelihood, tvgeom_pmf
from .mcmc import KernelConfig, mcmc_step, run_chain
from .priors import Hyperparameters, prior_marginals
from .simgen import ScenarioSpec, generate_scenario, preset, sample_individual
from .state import BaselineHazards, ChangePointState, ModelState, RegressionState

__all__ = [
    "AllowedSet",
    "BaselineHazards",
    "ChangePointState",
    "DataError",
    "Dataset",
    "Hyperparameters",
    "KernelConfig",
    "ModelState",
    "Observation",
    "PosteriorSample",
    "PosteriorSamples",
    "RegressionState",
    "ScenarioSpec",
    "compute_allowed_set",
    "cumulative_hazard",
    "generate_scenario",
    "log_likelihood",
    "mcmc_step",
    "parse_dataset",
    "per_time_bayes_factors",
    "preset",
    "prior_marginals",
    "run_chain",
    "sample_individual",
    "savage_dickey_K0",
    "summarize",
    "tvgeom_pmf",
]
