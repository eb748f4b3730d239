"""Gumbel-mixture data augmentation for the multinomial-logit hazards.

Each at-risk cell (individual i, period l, risk r) receives a latent utility
``u`` and a mixture component ``c`` such that, given ``c``,
``u ~ N(eta + xi_c, s2_c)``. Conditionally on the augmentation the model is
Gaussian in the baseline levels and the regression coefficients.
"""

from __future__ import annotations

import hashlib
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import rng as streams
from .data import CellLayout, Dataset
from .priors import LOG_2PI, Hyperparameters
from .state import ChangePointState, ModelState, RegressionState, segment_index


@dataclass(frozen=True)
class MixtureTable:
    weights: np.ndarray
    means: np.ndarray
    variances: np.ndarray

    def __post_init__(self) -> None:
        w = np.asarray(self.weights, dtype=float)
        if np.any(w <= 0) or abs(w.sum() - 1.0) > 1e-12:
            raise ValueError("mixture weights must be positive and sum to one")
        if np.any(np.asarray(self.variances) <= 0):
            raise ValueError("mixture variances must be positive")

    def __len__(self) -> int:
        return len(self.weights)

    def density(self, u) -> np.ndarray:
        u = np.asarray(u, dtype=float)[..., None]
        z = (u - self.means) ** 2 / self.variances
        return np.sum(self.weights * np.exp(-0.5 * z) / np.sqrt(2 * np.pi * self.variances), axis=-1)

    def checksum(self) -> str:
        text = ";".join(
            ",".join(repr(float(v)) for v in col) for col in (self.weights, self.means, self.variances)
        )
        return hashlib.sha256(text.encode()).hexdigest()


# Ten-component normal approximation of the standard Gumbel density
# exp(-u - exp(-u)), Fruhwirth-Schnatter & Fruhwirth (2007), Table 1.
# The published weights are rounded and sum to 0.99957; they are
# renormalized here.
_RAW_WEIGHTS = (0.00397, 0.0396, 0.168, 0.147, 0.125, 0.101, 0.104, 0.116, 0.107, 0.088)
_MEANS = (5.09, 3.29, 1.82, 1.24, 0.764, 0.391, 0.0431, -0.306, -0.673, -1.06)
_VARIANCES = (4.50, 2.02, 1.10, 0.422, 0.198, 0.107, 0.0778, 0.0766, 0.0947, 0.146)

GUMBEL_MIXTURE = MixtureTable(
    np.array(_RAW_WEIGHTS) / math.fsum(_RAW_WEIGHTS),
    np.array(_MEANS),
    np.array(_VARIANCES),
)
GUMBEL_MIXTURE_SHA256 = "d8a24b0ede4f7b6d94cffe2f5c342cda632537eb729c9439609cf0af056cef5c"

_LOG_COMPONENT = np.log(GUMBEL_MIXTURE.weights) - 0.5 * np.log(GUMBEL_MIXTURE.variances)
_PRECISION = 1.0 / GUMBEL_MIXTURE.variances
_LOG_NORM = -0.5 * (LOG_2PI + np.log(GUMBEL_MIXTURE.variances))
_MEANS_COL = GUMBEL_MIXTURE.means[:, None]
_HALF_NEG_PRECISION_COL = -0.5 * _PRECISION[:, None]
_LOG_COMPONENT_COL = _LOG_COMPONENT[:, None]

CHUNK_CELLS = 2048


@dataclass
class AugmentedData:
    """Latent utilities ``u[k, r]`` and 0-based component indices ``c[k, r]``.

    Rows follow the dataset's :class:`~mvb_detector.data.CellLayout`.
    """

    layout: CellLayout
    u: np.ndarray
    c: np.ndarray
    _stats: dict = field(default_factory=dict, repr=False)

    @property
    def precision(self) -> np.ndarray:
        return _PRECISION[self.c]

    def residual(self, beta: np.ndarray) -> np.ndarray:
        """u - xi_c - x.beta_r: the part of u explained by the baseline level."""
        d = self.u - GUMBEL_MIXTURE.means[self.c]
        if beta.size:
            d = d - self.layout.x @ beta.T
        return d

    def stats(self, reg: RegressionState, t_max: int) -> "CellStats":
        key = (reg.beta.tobytes(), t_max)
        if key not in self._stats:
            self._stats.clear()
            self._stats[key] = CellStats.build(self, reg.beta, t_max)
        return self._stats[key]


@dataclass(frozen=True)
class CellStats:
    """Per (risk, period) sums over cells of tau, tau d, tau d^2 and log-normalizers.

    Accumulation runs over cells in layout order, so results are reproducible.
    """

    prec: np.ndarray
    prec_d: np.ndarray
    prec_d2: np.ndarray
    log_norm: np.ndarray

    @classmethod
    def build(cls, aug: AugmentedData, beta: np.ndarray, t_max: int) -> "CellStats":
        m = aug.u.shape[1]
        d = aug.residual(beta)
        tau = aug.precision
        idx = (np.arange(m)[None, :] * t_max + aug.layout.time[:, None]).ravel()
        size = m * t_max

        def acc(w):
            return np.bincount(idx, weights=w.ravel(), minlength=size).reshape(m, t_max)

        return cls(acc(tau), acc(tau * d), acc(tau * d * d), acc(_LOG_NORM[aug.c]))


def _eta_cells(layout: CellLayout, alpha: np.ndarray, beta: np.ndarray) -> np.ndarray:
    eta = alpha.T[layout.time]
    if beta.size:
        eta = eta + layout.x @ beta.T
    return eta


def _augment_chunk(eta: np.ndarray, cause: np.ndarray, unif: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    m = eta.shape[1]
    exp0 = -np.log(unif[:, 0])
    expr = -np.log(unif[:, 1 : 1 + m])
    lse = np.logaddexp(0.0, np.logaddexp.reduce(eta, axis=1))
    first = (np.log(exp0) - lse)[:, None]
    second = np.log(expr) - eta
    ev = np.flatnonzero(cause >= 0)
    second[ev, cause[ev]] = -np.inf
    u = -np.logaddexp(first, second)

    # component posteriors laid out (component, cell) for contiguous reductions
    logp = (u - eta).reshape(1, -1) - _MEANS_COL
    np.square(logp, out=logp)
    logp *= _HALF_NEG_PRECISION_COL
    logp += _LOG_COMPONENT_COL
    logp -= logp.max(axis=0)
    np.exp(logp, out=logp)
    cdf = logp
    for k in range(1, cdf.shape[0]):  # row-wise running sum; faster than cumsum(axis=0)
        cdf[k] += cdf[k - 1]
    target = unif[:, 1 + m : 1 + 2 * m].reshape(-1) * cdf[-1]
    c = np.minimum(np.count_nonzero(cdf < target, axis=0), len(GUMBEL_MIXTURE) - 1).reshape(u.shape)
    return u, c


def _outputs_per_cell(m: int) -> int:
    return 4 * math.ceil((1 + 2 * m) / 4)


def sample_augmented(
    dataset: Dataset, state: ModelState, seed: int, iteration: int, *, workers: int = 1
) -> AugmentedData:
    """Draw (u, c) for every cell given the current linear predictors.

    The uniforms of cell k are the Philox outputs at a fixed offset of the
    stream keyed by ``(seed, iteration)``, so chunking and worker count do
    not change the result.
    """
    layout = dataset.cells
    eta = _eta_cells(layout, state.bh.alpha, state.reg.beta)
    if not np.all(np.isfinite(eta)):
        raise ValueError("non-finite linear predictor")
    n_cells, m = eta.shape
    per = _outputs_per_cell(m)
    u = np.empty((n_cells, m))
    c = np.empty((n_cells, m), dtype=np.int64)

    def run(lo: int) -> None:
        hi = min(lo + CHUNK_CELLS, n_cells)
        unif = streams.uniforms(seed, streams.AUGMENT, iteration, lo * per, (hi - lo) * per).reshape(hi - lo, per)
        u[lo:hi], c[lo:hi] = _augment_chunk(eta[lo:hi], layout.event_cause[lo:hi], unif)

    starts = range(0, n_cells, CHUNK_CELLS)
    if workers > 1 and n_cells > CHUNK_CELLS:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(run, starts))
    else:
        for lo in starts:
            run(lo)
    return AugmentedData(layout, u, c)


def augmented_loglik(aug: AugmentedData, state: ModelState) -> float:
    """Sum over cells of log N(u | eta + xi_c, s2_c)."""
    eta = _eta_cells(aug.layout, state.bh.alpha, state.reg.beta)
    if eta.shape != aug.u.shape:
        raise ValueError("augmented data do not match the state dimensions")
    resid = aug.u - eta - GUMBEL_MIXTURE.means[aug.c]
    return float(np.sum(_LOG_NORM[aug.c] - 0.5 * resid * resid * _PRECISION[aug.c]))


@dataclass(frozen=True)
class IntervalSums:
    """Statistics summed over each (risk, cause-specific interval) pair.

    ``inverse`` maps every (risk, period) cell, flattened risk-major, to its
    pair; pairs are ordered by risk, then time.
    """

    prec: np.ndarray
    prec_d: np.ndarray
    prec_d2: np.ndarray
    log_norm: np.ndarray
    risk: np.ndarray
    inverse: np.ndarray


def interval_sums(stats: CellStats, z: np.ndarray) -> IntervalSums:
    m, t_max = z.shape
    seg = segment_index(z)
    idx = (seg + np.arange(m)[:, None] * t_max).ravel()
    used, inverse = np.unique(idx, return_inverse=True)
    size = used.size

    def acc(a):
        return np.bincount(inverse, weights=a.ravel(), minlength=size)

    return IntervalSums(
        acc(stats.prec), acc(stats.prec_d), acc(stats.prec_d2), acc(stats.log_norm), used // t_max, inverse
    )


def marginal_from_stats(stats: CellStats, z: np.ndarray, hyper: Hyperparameters, temperature: float = 1.0) -> float:
    """log of the augmented likelihood with every baseline level integrated out.

    With temperature T each Gaussian cell term is raised to the power T.
    """
    if temperature == 0.0:
        return 0.0
    s = interval_sums(stats, z)
    T = temperature
    inv_var = 1.0 / hyper.sigma2_alpha
    prec = inv_var + T * s.prec
    mean = (hyper.mu_alpha * inv_var + T * s.prec_d) / prec
    out = T * (s.log_norm - 0.5 * s.prec_d2) - 0.5 * np.log(hyper.sigma2_alpha * prec)
    out += 0.5 * (mean * mean * prec - hyper.mu_alpha**2 * inv_var)
    return float(out.sum())


def marginal_augmented_loglik(
    aug: AugmentedData,
    cp: ChangePointState,
    reg: RegressionState,
    hyper: Hyperparameters,
    temperature: float = 1.0,
) -> float:
    return marginal_from_stats(aug.stats(reg, cp.t_max), cp.z, hyper, temperature)


def alpha_full_conditional(
    stats: CellStats, z: np.ndarray, hyper: Hyperparameters, temperature: float = 1.0
) -> tuple[np.ndarray, np.ndarray, IntervalSums]:
    """Gaussian full conditional of every cause-specific level.

    Returns (mean, variance, sums) over (risk, interval) pairs in time order.
    """
    s = interval_sums(stats, z)
    inv_var = 1.0 / hyper.sigma2_alpha
    var = 1.0 / (inv_var + temperature * s.prec)
    mean = var * (hyper.mu_alpha * inv_var + temperature * s.prec_d)
    return mean, var, s
