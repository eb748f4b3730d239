"""Prior over change points, baseline levels and regression coefficients."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from functools import cached_property

import numpy as np

from .data import AllowedSet
from .state import BaselineHazards, ChangePointState, RegressionState

log = logging.getLogger(__name__)

LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class Hyperparameters:
    """Fixed prior settings.

    ``psi[k - 1]`` is the probability of the cause configuration whose binary
    code is k, risk 1 being the least significant bit.
    """

    m: int
    p: int = 0
    t_max: int = 0
    mu_alpha: float = -9.0
    sigma2_alpha: float = 3.0
    sigma2_beta: float = 1.0
    pi_K: float = 0.5
    psi: tuple[float, ...] = field(default=())

    def __post_init__(self) -> None:
        if not self.psi:
            k = 2**self.m - 1
            object.__setattr__(self, "psi", tuple([1.0 / k] * k))
        psi = np.asarray(self.psi, dtype=float)
        if psi.size != 2**self.m - 1:
            raise ValueError(f"psi needs {2**self.m - 1} entries for m={self.m}, got {psi.size}")
        if np.any(psi < 0) or abs(psi.sum() - 1.0) > 1e-12:
            raise ValueError("psi must be a probability vector")
        if self.sigma2_alpha <= 0 or self.sigma2_beta <= 0:
            raise ValueError("prior variances must be positive")
        if not 0.0 < self.pi_K < 1.0:
            raise ValueError("pi_K must lie in (0, 1)")

    def with_shape(self, m: int, p: int, t_max: int) -> "Hyperparameters":
        psi = self.psi if m == self.m else ()
        return replace(self, m=m, p=p, t_max=t_max, psi=psi)

    @cached_property
    def log_psi(self) -> np.ndarray:
        with np.errstate(divide="ignore"):
            return np.log(np.asarray(self.psi))

    def config_bits(self) -> np.ndarray:
        """Row k-1 holds the risk indicators of configuration code k."""
        codes = np.arange(1, 2**self.m)
        return ((codes[:, None] >> np.arange(self.m)) & 1).astype(bool)

    def sample_config(self, rng: np.random.Generator) -> np.ndarray:
        """Draw a non-zero cause configuration from Ber_0(psi)."""
        k = rng.choice(len(self.psi), p=self.psi)
        return ((k + 1) >> np.arange(self.m)) & 1 == 1


def log_pK(K: int, n_allowed: int, pi_K: float) -> float:
    """Geometric(pi_K) prior on K truncated to 0..n_allowed, p(K) ∝ pi_K (1 - pi_K)^K."""
    if K < 0 or K > n_allowed:
        return -math.inf
    norm = -math.expm1((n_allowed + 1) * math.log1p(-pi_K))
    return math.log(pi_K) + K * math.log1p(-pi_K) - math.log(norm)


def log_comb(n: int, k: int) -> float:
    return math.lgamma(n + 1) - math.lgamma(k + 1) - math.lgamma(n - k + 1)


def log_prior_changepoints(cp: ChangePointState, hyper: Hyperparameters, allowed: AllowedSet) -> float:
    """log p(K) - log C(|T|, K) + sum over change points of log psi(z_t)."""
    gamma = cp.gamma
    mask = allowed.mask
    if gamma.shape != mask.shape or (gamma & ~mask).any():
        log.debug("change point outside the allowed set: %s", np.flatnonzero(gamma & ~mask) + 1)
        return -math.inf
    n_allowed = len(allowed)
    K = int(gamma.sum())
    out = log_pK(K, n_allowed, hyper.pi_K) - log_comb(n_allowed, K)
    if K:
        codes = (cp.z[:, gamma].T.astype(np.int64) << np.arange(cp.m)).sum(axis=1)
        out += float(hyper.log_psi[codes - 1].sum())
    return out


@dataclass(frozen=True)
class PriorMarginals:
    pK0: float
    p_gamma1: float
    p_z1: np.ndarray  # per risk, P(z_rt = 1) at any allowed t
    pK: np.ndarray  # full prior on K = 0..|T|
    expected_K: float

    def __iter__(self):
        yield self.pK0
        yield self.p_gamma1
        yield self.p_z1


def prior_marginals(hyper: Hyperparameters, allowed: AllowedSet | int) -> PriorMarginals:
    """Analytic prior marginals of K, gamma_t and z_rt."""
    n_allowed = allowed if isinstance(allowed, int) else len(allowed)
    ks = np.arange(n_allowed + 1)
    pK = np.exp([log_pK(int(k), n_allowed, hyper.pi_K) for k in ks])
    if n_allowed == 0:
        return PriorMarginals(1.0, 0.0, np.zeros(hyper.m), np.ones(1), 0.0)
    expected = float(np.dot(ks, pK))
    p_gamma1 = expected / n_allowed
    per_risk = hyper.config_bits().T @ np.asarray(hyper.psi)  # sum of psi over configs containing r
    pK0 = hyper.pi_K / -math.expm1((n_allowed + 1) * math.log1p(-hyper.pi_K))
    return PriorMarginals(pK0, p_gamma1, p_gamma1 * per_risk, pK, expected)


def normal_logpdf(x, mean, var):
    x = np.asarray(x, dtype=float)
    return -0.5 * (LOG_2PI + np.log(var) + (x - mean) ** 2 / var)


def log_prior_alpha(levels: list[np.ndarray], hyper: Hyperparameters) -> float:
    return float(sum(normal_logpdf(lv, hyper.mu_alpha, hyper.sigma2_alpha).sum() for lv in levels))


def log_prior_continuous(bh: BaselineHazards, reg: RegressionState, hyper: Hyperparameters) -> float:
    """Gaussian levels, spike-and-slab coefficients; the uniform prior on pi_beta adds 0."""
    if not 0.0 <= reg.pi_beta <= 1.0:
        raise ValueError("pi_beta must lie in [0, 1]")
    out = log_prior_alpha(bh.levels(), hyper)
    p = reg.beta.shape[1]
    if p:
        incl = reg.inclusion
        out += float(normal_logpdf(reg.beta[incl], 0.0, hyper.sigma2_beta).sum())
        b = int(incl.sum())
        excl = incl.size - b
        with np.errstate(divide="ignore"):
            out += (b * math.log(reg.pi_beta) if b else 0.0) + (excl * math.log1p(-reg.pi_beta) if excl else 0.0)
    return out
