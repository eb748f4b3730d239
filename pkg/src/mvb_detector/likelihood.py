"""Multinomial-logit hazards and the observed-data likelihood."""

from __future__ import annotations

import numpy as np

from .data import CovariatePatterns, Dataset
from .state import ModelState


def log_normalizer(eta: np.ndarray) -> np.ndarray:
    """log(1 + sum_r exp(eta_r)) over the last axis, computed stably."""
    eta = np.asarray(eta, dtype=float)
    top = np.maximum(eta.max(axis=-1), 0.0)
    rest = np.exp(eta - top[..., None]).sum(axis=-1)
    # log1p keeps full relative precision when every eta is very negative
    return np.where(top > 0, top + np.log(np.exp(-top) + rest), np.log1p(rest))


def hazards(eta_t) -> tuple[np.ndarray, float]:
    """Cause-specific hazards and their sum for one linear-predictor vector."""
    eta = np.asarray(eta_t, dtype=float)
    if not np.all(np.isfinite(eta)):
        raise ValueError("linear predictor must be finite")
    lse = log_normalizer(eta)
    return np.exp(eta - lse), float(-np.expm1(-lse))


def tvgeom_pmf(phi) -> np.ndarray:
    """Probability mass of a Time-Varying Geometric law on 1..t_max+1."""
    phi = np.asarray(phi, dtype=float)
    if np.any((phi < 0) | (phi > 1)) or not np.all(np.isfinite(phi)):
        raise ValueError("success probabilities must lie in [0, 1]")
    survive = np.concatenate(([1.0], np.cumprod(1.0 - phi)))
    return np.concatenate((phi * survive[:-1], survive[-1:]))


def linear_predictor(alpha: np.ndarray, beta: np.ndarray, x: np.ndarray) -> np.ndarray:
    """eta[g, r, t] = alpha[r, t] + x[g] . beta[r]."""
    shift = x @ beta.T if beta.size else np.zeros((x.shape[0], alpha.shape[0]))
    return alpha[None, :, :] + shift[:, :, None]


def pattern_log_likelihood(patterns: CovariatePatterns, alpha: np.ndarray, beta: np.ndarray) -> float:
    eta = linear_predictor(alpha, beta, patterns.x)
    lse = log_normalizer(np.moveaxis(eta, 1, -1))  # (g, t)
    weight = patterns.events.sum(axis=1) + patterns.at_risk
    return float(np.sum(patterns.events * eta) - np.sum(weight * lse))


def log_likelihood(dataset: Dataset, state: ModelState) -> float:
    """Observed-data log-likelihood summed over individuals.

    Individuals sharing a covariate row are evaluated together through event
    and at-risk counts.
    """
    alpha, beta = state.bh.alpha, state.reg.beta
    if alpha.shape != (dataset.m, dataset.t_max) or beta.shape != (dataset.m, dataset.p):
        raise ValueError(
            f"state shape alpha{alpha.shape}/beta{beta.shape} does not match "
            f"dataset (m={dataset.m}, t_max={dataset.t_max}, p={dataset.p})"
        )
    return pattern_log_likelihood(dataset.patterns, alpha, beta)


def cumulative_hazard(state_draw: ModelState, x, r: int) -> np.ndarray:
    """Running sum of the cause-r hazard over t = 1..t_max for covariates ``x``."""
    m = state_draw.m
    if not 1 <= r <= m:
        raise ValueError(f"risk {r} outside 1..{m}")
    x = np.asarray(x, dtype=float).reshape(1, -1)
    if x.shape[1] != state_draw.p:
        raise ValueError("profile dimension does not match the number of covariates")
    eta = linear_predictor(state_draw.bh.alpha, state_draw.reg.beta, x)[0]  # (m, t)
    lam = np.exp(eta[r - 1] - log_normalizer(eta.T))
    return np.cumsum(lam)
