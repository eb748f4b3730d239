"""Local-global MCMC over change points, baseline levels and coefficients.

One sweep (:func:`mcmc_step`) draws the Gumbel-mixture augmentation, moves
change points with the baseline levels integrated out, redraws the levels and
the regression block from their augmented full conditionals, and finally
moves change points again against the exact likelihood with explicit level
proposals.

Every Metropolis-Hastings ratio is assembled as
``log target(new) - log target(old) + log q(reverse) - log q(forward)``
with change-point locations restricted to the allowed set.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from . import rng as streams
from .augmentation import (
    GUMBEL_MIXTURE,
    AugmentedData,
    alpha_full_conditional,
    marginal_from_stats,
    sample_augmented,
)
from .data import AllowedSet, Dataset, compute_allowed_set
from .inference import PosteriorSamples
from .likelihood import pattern_log_likelihood
from .priors import Hyperparameters, log_prior_alpha, log_prior_changepoints, normal_logpdf
from .state import BaselineHazards, ChangePointState, ModelState, check_invariants

log = logging.getLogger(__name__)

MOVE_NAMES = (
    "local_split",
    "local_merge",
    "local_shuffle",
    "local_z",
    "global_split",
    "global_merge",
    "global_shuffle",
    "global_z",
    "inclusion",
)


@dataclass
class KernelConfig:
    iterations: int = 100_000
    burn_in: int = 10_000
    thin: int = 1
    seed: int = 0
    global_moves_enabled: bool = True
    likelihood_temperature: float = 1.0
    rw_sd: float = 1.0
    workers: int = 1
    debug: bool = False
    # test hook: added to every split log-ratio (and subtracted from merges)
    split_log_bias: float = 0.0

    def __post_init__(self) -> None:
        if self.iterations < 0 or self.burn_in < 0:
            raise ValueError("iterations and burn_in must be non-negative")
        if self.burn_in > self.iterations:
            raise ValueError("burn_in must not exceed iterations")
        if self.thin < 1:
            raise ValueError("thin must be at least 1")
        if not 0.0 <= self.likelihood_temperature <= 1.0:
            raise ValueError("likelihood_temperature must lie in [0, 1]")
        if self.rw_sd <= 0:
            raise ValueError("rw_sd must be positive")


@dataclass
class MoveCounters:
    proposed: dict = field(default_factory=lambda: dict.fromkeys(MOVE_NAMES, 0))
    accepted: dict = field(default_factory=lambda: dict.fromkeys(MOVE_NAMES, 0))
    nan_ratios: int = 0

    def decide(self, move: str, log_ratio: float, rng: np.random.Generator) -> bool:
        self.proposed[move] += 1
        u = rng.random()
        if math.isnan(log_ratio):
            self.nan_ratios += 1
            return False
        ok = u < math.exp(min(0.0, log_ratio))
        if ok:
            self.accepted[move] += 1
        return ok

    def reject(self, move: str) -> None:
        self.proposed[move] += 1

    def rates(self) -> dict:
        return {k: (self.accepted[k] / self.proposed[k] if self.proposed[k] else None) for k in MOVE_NAMES}

    def merge(self, other: "MoveCounters") -> None:
        for k in MOVE_NAMES:
            self.proposed[k] += other.proposed[k]
            self.accepted[k] += other.accepted[k]
        self.nan_ratios += other.nan_ratios


# ---------------------------------------------------------------------------
# proposal bookkeeping


def split_probability(K: int, n_allowed: int) -> float:
    if K == 0:
        return 1.0
    return 0.5 if K < n_allowed else 0.0


def _free_positions(gamma: np.ndarray, mask: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Allowed, unoccupied 0-based positions and the interval each falls in."""
    free = np.flatnonzero(mask & ~gamma)
    return free, np.cumsum(gamma)[free]


def log_split_proposal(gamma: np.ndarray, mask: np.ndarray, tt: int) -> float:
    """log probability that a split from ``gamma`` proposes position ``tt``.

    An interval is picked uniformly among those holding a free allowed
    position, then a position uniformly inside it.
    """
    K, n_allowed = int(gamma.sum()), int(mask.sum())
    s = split_probability(K, n_allowed)
    free, group = _free_positions(gamma, mask)
    hit = group[free == tt]
    if s == 0.0 or hit.size == 0:
        return -math.inf
    n_groups = np.unique(group).size
    return math.log(s) - math.log(n_groups) - math.log(int((group == hit[0]).sum()))


def log_merge_proposal(K: int, n_allowed: int) -> float:
    s = split_probability(K, n_allowed)
    if K == 0 or s == 1.0:
        return -math.inf
    return math.log1p(-s) - math.log(K)


def _draw_split_position(gamma: np.ndarray, mask: np.ndarray, rng: np.random.Generator) -> int | None:
    free, group = _free_positions(gamma, mask)
    if free.size == 0:
        return None
    groups = np.unique(group)
    g = groups[rng.integers(groups.size)]
    members = free[group == g]
    return int(members[rng.integers(members.size)])


def _interval_end(zrow: np.ndarray, tt: int) -> int:
    """Exclusive end of the cause-specific interval that contains ``tt``."""
    nxt = np.flatnonzero(zrow[tt + 1 :])
    return tt + 1 + int(nxt[0]) if nxt.size else zrow.size


def _code(cfg: np.ndarray) -> int:
    return int(np.dot(cfg, 1 << np.arange(cfg.size)))


@dataclass
class _Context:
    allowed: AllowedSet
    hyper: Hyperparameters
    rng: np.random.Generator
    counters: MoveCounters
    prefix: str
    levels: bool  # propose explicit baseline levels (global moves)
    rw_sd: float = 1.0
    log_bias: float = 0.0

    @property
    def mask(self) -> np.ndarray:
        return self.allowed.mask


def _split_or_merge(z, alpha, cur, target, ctx: _Context):
    hyper, rng, mask = ctx.hyper, ctx.rng, ctx.mask
    gamma = z.any(axis=0)
    K, n_allowed = int(gamma.sum()), len(ctx.allowed)
    var = ctx.rw_sd**2
    alpha_new = alpha.copy() if ctx.levels else alpha
    z_new = z.copy()

    if rng.random() < split_probability(K, n_allowed):
        move = ctx.prefix + "split"
        tt = _draw_split_position(gamma, mask, rng)
        if tt is None:
            ctx.counters.reject(move)
            return z, alpha, cur
        cfg = hyper.sample_config(rng)
        z_new[:, tt] = cfg
        log_q = log_split_proposal(gamma, mask, tt) + hyper.log_psi[_code(cfg) - 1]
        log_q_rev = log_merge_proposal(K + 1, n_allowed)
        if ctx.levels:
            for r in np.flatnonzero(cfg):
                left = alpha[r, tt]
                new = rng.normal(left, ctx.rw_sd)
                alpha_new[r, tt : _interval_end(z[r], tt)] = new
                log_q += float(normal_logpdf(new, left, var))
        bias = ctx.log_bias
    else:
        move = ctx.prefix + "merge"
        cps = np.flatnonzero(gamma)
        tt = int(cps[rng.integers(K)])
        cfg = z[:, tt].copy()
        z_new[:, tt] = False
        log_q = log_merge_proposal(K, n_allowed)
        log_q_rev = log_split_proposal(z_new.any(axis=0), mask, tt) + hyper.log_psi[_code(cfg) - 1]
        if ctx.levels:
            for r in np.flatnonzero(cfg):
                left, right = alpha[r, tt - 1], alpha[r, tt]
                alpha_new[r, tt : _interval_end(z[r], tt)] = left
                log_q_rev += float(normal_logpdf(right, left, var))
        bias = -ctx.log_bias

    new = target(z_new, alpha_new)
    if ctx.counters.decide(move, new - cur + log_q_rev - log_q + bias, rng):
        return z_new, alpha_new, new
    return z, alpha, cur


def _shuffle(z, alpha, cur, target, ctx: _Context):
    gamma = z.any(axis=0)
    cps = np.flatnonzero(gamma)
    K = cps.size
    if K == 0:
        return z, alpha, cur
    rng, move = ctx.rng, ctx.prefix + "shuffle"
    k = int(rng.integers(K))
    tt = int(cps[k])
    lo = int(cps[k - 1]) if k > 0 else 0
    hi = int(cps[k + 1]) if k < K - 1 else z.shape[1]
    cand = np.flatnonzero(ctx.mask[lo + 1 : hi]) + lo + 1
    new_t = int(cand[rng.integers(cand.size)])
    if new_t == tt:
        ctx.counters.decide(move, 0.0, rng)
        return z, alpha, cur
    cfg = z[:, tt].copy()
    z_new = z.copy()
    z_new[:, tt] = False
    z_new[:, new_t] = cfg
    alpha_new = alpha
    if ctx.levels:
        alpha_new = alpha.copy()
        for r in np.flatnonzero(cfg):
            if new_t > tt:
                alpha_new[r, tt:new_t] = alpha[r, tt - 1]
            else:
                alpha_new[r, new_t:tt] = alpha[r, tt]
    new = target(z_new, alpha_new)
    if ctx.counters.decide(move, new - cur, rng):
        return z_new, alpha_new, new
    return z, alpha, cur


def _update_z(z, alpha, cur, target, ctx: _Context):
    gamma = z.any(axis=0)
    cps = np.flatnonzero(gamma)
    if cps.size == 0:
        return z, alpha, cur
    rng, hyper = ctx.rng, ctx.hyper
    tt = int(cps[rng.integers(cps.size)])
    old = z[:, tt].copy()
    cfg = hyper.sample_config(rng)
    z_new = z.copy()
    z_new[:, tt] = cfg
    log_q = hyper.log_psi[_code(cfg) - 1]
    log_q_rev = hyper.log_psi[_code(old) - 1]
    alpha_new = alpha
    if ctx.levels:
        alpha_new = alpha.copy()
        var = ctx.rw_sd**2
        for r in range(z.shape[0]):
            if cfg[r] and not old[r]:
                left = alpha[r, tt]
                new = rng.normal(left, ctx.rw_sd)
                alpha_new[r, tt : _interval_end(z[r], tt)] = new
                log_q += float(normal_logpdf(new, left, var))
            elif old[r] and not cfg[r]:
                left, right = alpha[r, tt - 1], alpha[r, tt]
                alpha_new[r, tt : _interval_end(z[r], tt)] = left
                log_q_rev += float(normal_logpdf(right, left, var))
    new = target(z_new, alpha_new)
    if ctx.counters.decide(ctx.prefix + "z", new - cur + log_q_rev - log_q, rng):
        return z_new, alpha_new, new
    return z, alpha, cur


# ---------------------------------------------------------------------------
# targets


def local_log_target(z, stats, allowed, hyper, temperature) -> float:
    """log p(gamma, z) + T log p(y | u, c, zeta): baseline levels integrated out."""
    return log_prior_changepoints(ChangePointState(z), hyper, allowed) + marginal_from_stats(
        stats, z, hyper, temperature
    )


def global_log_target(z, alpha, beta, dataset, allowed, hyper, temperature) -> float:
    """log p(gamma, z) + log p(alpha*) + T log p(y | theta)."""
    cp = ChangePointState(z)
    out = log_prior_changepoints(cp, hyper, allowed)
    out += log_prior_alpha(BaselineHazards(alpha).alpha_star(cp), hyper)
    if temperature:
        out += temperature * pattern_log_likelihood(dataset.patterns, alpha, beta)
    return out


# ---------------------------------------------------------------------------
# kernels


def local_split_merge_shuffle(
    state: ModelState,
    aug: AugmentedData,
    allowed: AllowedSet,
    hyper: Hyperparameters,
    rng: np.random.Generator,
    *,
    temperature: float = 1.0,
    counters: MoveCounters | None = None,
    log_bias: float = 0.0,
) -> ModelState:
    """Split-or-merge then shuffle of overall change points, levels integrated out.

    The returned state keeps the old ``alpha`` matrix; it is stale until
    :func:`gibbs_alpha` redraws the levels.
    """
    stats = aug.stats(state.reg, state.t_max)
    ctx = _Context(allowed, hyper, rng, counters or MoveCounters(), "local_", False, log_bias=log_bias)

    def target(z, _alpha):
        return local_log_target(z, stats, allowed, hyper, temperature)

    z, alpha = state.cp.z, state.bh.alpha
    cur = target(z, alpha)
    z, alpha, cur = _split_or_merge(z, alpha, cur, target, ctx)
    z, alpha, cur = _shuffle(z, alpha, cur, target, ctx)
    return ModelState(ChangePointState(z), state.bh, state.reg)


def local_update_z(
    state: ModelState,
    aug: AugmentedData,
    allowed: AllowedSet,
    hyper: Hyperparameters,
    rng: np.random.Generator,
    *,
    temperature: float = 1.0,
    counters: MoveCounters | None = None,
) -> ModelState:
    """Redraw the cause configuration at one uniformly chosen change point."""
    stats = aug.stats(state.reg, state.t_max)
    ctx = _Context(allowed, hyper, rng, counters or MoveCounters(), "local_", False)

    def target(z, _alpha):
        return local_log_target(z, stats, allowed, hyper, temperature)

    z = state.cp.z
    z, _, _ = _update_z(z, state.bh.alpha, target(z, None), target, ctx)
    return ModelState(ChangePointState(z), state.bh, state.reg)


def gibbs_alpha(
    state: ModelState,
    aug: AugmentedData,
    hyper: Hyperparameters,
    rng: np.random.Generator,
    *,
    temperature: float = 1.0,
) -> ModelState:
    """Draw every cause-specific level from its Gaussian full conditional."""
    stats = aug.stats(state.reg, state.t_max)
    mean, var, sums = alpha_full_conditional(stats, state.cp.z, hyper, temperature)
    levels = rng.normal(mean, np.sqrt(var))
    alpha = levels[sums.inverse].reshape(state.cp.z.shape)
    return ModelState(state.cp, BaselineHazards(alpha), state.reg)


def coefficient_posterior(G: np.ndarray, h: np.ndarray, subset: np.ndarray, sigma2_beta: float):
    """Gaussian conditional of the included coefficients.

    Returns (mean, Cholesky factor of the precision) for
    Sigma_B = (I / sigma2_beta + G_BB)^-1 and mu_B = Sigma_B h_B.
    """
    prec = G[np.ix_(subset, subset)] + np.eye(subset.size) / sigma2_beta
    try:
        chol = np.linalg.cholesky(prec)
    except np.linalg.LinAlgError:
        raise np.linalg.LinAlgError("coefficient precision matrix is not positive definite") from None
    mean = np.linalg.solve(chol.T, np.linalg.solve(chol, h[subset]))
    return mean, chol


def _inclusion_log_marginal(G, h, subset, hyper, pi_beta, p) -> float:
    """log p(u | B) + log p(B | pi_beta) up to a constant, with beta_B integrated out."""
    b = subset.size
    if 0.0 < pi_beta < 1.0:
        out = b * math.log(pi_beta) + (p - b) * math.log1p(-pi_beta)
    else:
        out = 0.0 if b == (p if pi_beta >= 1.0 else 0) else -math.inf
    if b == 0:
        return out
    mean, chol = coefficient_posterior(G, h, subset, hyper.sigma2_beta)
    # 0.5 log|Sigma_B| - b log sigma_beta + 0.5 h' Sigma_B h
    return out - np.log(np.diag(chol)).sum() - 0.5 * b * math.log(hyper.sigma2_beta) + 0.5 * float(h[subset] @ mean)


def update_beta(
    state: ModelState,
    aug: AugmentedData,
    hyper: Hyperparameters,
    rng: np.random.Generator,
    *,
    temperature: float = 1.0,
    counters: MoveCounters | None = None,
) -> ModelState:
    """Refresh pi_beta, toggle inclusion indicators, then draw included coefficients."""
    reg = state.reg.copy()
    m, p = reg.beta.shape
    b_total = int(reg.inclusion.sum())
    reg.pi_beta = float(rng.beta(1 + b_total, 1 + m * p - b_total))
    if p == 0:
        return ModelState(state.cp, state.bh, reg)

    counters = counters or MoveCounters()
    layout = aug.layout
    x = layout.x
    tau_all = temperature * aug.precision
    base = aug.u - GUMBEL_MIXTURE.means[aug.c] - state.bh.alpha.T[layout.time]
    for r in range(m):
        tau = tau_all[:, r]
        G = (x * tau[:, None]).T @ x
        h = x.T @ (tau * base[:, r])
        incl = reg.inclusion[r].copy()
        cur = _inclusion_log_marginal(G, h, np.flatnonzero(incl), hyper, reg.pi_beta, p)
        for j in range(p):
            incl[j] = not incl[j]
            new = _inclusion_log_marginal(G, h, np.flatnonzero(incl), hyper, reg.pi_beta, p)
            if counters.decide("inclusion", new - cur, rng):
                cur = new
            else:
                incl[j] = not incl[j]
        subset = np.flatnonzero(incl)
        beta_r = np.zeros(p)
        if subset.size:
            mean, chol = coefficient_posterior(G, h, subset, hyper.sigma2_beta)
            beta_r[subset] = mean + np.linalg.solve(chol.T, rng.standard_normal(subset.size))
        reg.inclusion[r] = incl
        reg.beta[r] = beta_r
    return ModelState(state.cp, state.bh, reg)


def global_split_merge_shuffle(
    state: ModelState,
    dataset: Dataset,
    allowed: AllowedSet,
    hyper: Hyperparameters,
    cfg: KernelConfig,
    rng: np.random.Generator,
    *,
    counters: MoveCounters | None = None,
) -> ModelState:
    """Split-or-merge then shuffle against the exact likelihood."""
    T, beta = cfg.likelihood_temperature, state.reg.beta
    ctx = _Context(
        allowed, hyper, rng, counters or MoveCounters(), "global_", True, cfg.rw_sd, cfg.split_log_bias
    )

    def target(z, alpha):
        return global_log_target(z, alpha, beta, dataset, allowed, hyper, T)

    z, alpha = state.cp.z, state.bh.alpha
    cur = target(z, alpha)
    z, alpha, cur = _split_or_merge(z, alpha, cur, target, ctx)
    z, alpha, cur = _shuffle(z, alpha, cur, target, ctx)
    return ModelState(ChangePointState(z), BaselineHazards(alpha), state.reg)


def global_update_z(
    state: ModelState,
    dataset: Dataset,
    allowed: AllowedSet,
    hyper: Hyperparameters,
    cfg: KernelConfig,
    rng: np.random.Generator,
    *,
    counters: MoveCounters | None = None,
) -> ModelState:
    """Redraw one cause configuration with explicit level births and deaths."""
    T, beta = cfg.likelihood_temperature, state.reg.beta
    ctx = _Context(allowed, hyper, rng, counters or MoveCounters(), "global_", True, cfg.rw_sd)

    def target(z, alpha):
        return global_log_target(z, alpha, beta, dataset, allowed, hyper, T)

    z, alpha = state.cp.z, state.bh.alpha
    z, alpha, _ = _update_z(z, alpha, target(z, alpha), target, ctx)
    return ModelState(ChangePointState(z), BaselineHazards(alpha), state.reg)


def mcmc_step(
    state: ModelState,
    dataset: Dataset,
    allowed: AllowedSet,
    hyper: Hyperparameters,
    cfg: KernelConfig,
    rng: np.random.Generator,
    iteration: int,
    counters: MoveCounters | None = None,
) -> ModelState:
    """One local-global sweep. ``iteration`` keys the augmentation stream."""
    counters = counters if counters is not None else MoveCounters()
    T = cfg.likelihood_temperature
    mask = allowed.mask

    def audit(s: ModelState, with_alpha: bool = True) -> None:
        if cfg.debug:
            if with_alpha:
                check_invariants(s, mask)
            elif (s.cp.gamma & ~mask).any() or s.cp.z[:, 0].any():
                raise AssertionError("change point outside the allowed set")

    aug = sample_augmented(dataset, state, cfg.seed, iteration, workers=cfg.workers)
    state = local_split_merge_shuffle(
        state, aug, allowed, hyper, rng, temperature=T, counters=counters, log_bias=cfg.split_log_bias
    )
    audit(state, with_alpha=False)
    state = local_update_z(state, aug, allowed, hyper, rng, temperature=T, counters=counters)
    audit(state, with_alpha=False)
    state = gibbs_alpha(state, aug, hyper, rng, temperature=T)
    audit(state)
    state = update_beta(state, aug, hyper, rng, temperature=T, counters=counters)
    audit(state)
    if cfg.global_moves_enabled:
        state = global_split_merge_shuffle(state, dataset, allowed, hyper, cfg, rng, counters=counters)
        audit(state)
        state = global_update_z(state, dataset, allowed, hyper, cfg, rng, counters=counters)
        audit(state)
    return state


@dataclass
class ChainResult:
    samples: PosteriorSamples
    counters: MoveCounters
    manifest: dict


def run_chain(
    dataset: Dataset,
    hyper: Hyperparameters,
    cfg: KernelConfig,
    *,
    allowed: AllowedSet | None = None,
    on_sample: Callable[[int, ModelState], None] | None = None,
    progress: Callable[[int], None] | None = None,
) -> ChainResult:
    """Run one chain from the empty model and keep every ``thin``-th post-burn-in state."""
    started = time.time()
    allowed = allowed if allowed is not None else compute_allowed_set(dataset)
    hyper = hyper.with_shape(dataset.m, dataset.p, dataset.t_max)
    state = ModelState.initial(dataset.m, dataset.t_max, dataset.p, hyper.mu_alpha)
    rng = streams.generator(cfg.seed, streams.MOVES)
    counters = MoveCounters()

    n_keep = (cfg.iterations - cfg.burn_in) // cfg.thin
    samples = PosteriorSamples.allocate(n_keep, dataset.m, dataset.t_max, dataset.p)
    j = 0
    for it in range(1, cfg.iterations + 1):
        state = mcmc_step(state, dataset, allowed, hyper, cfg, rng, it, counters)
        if it > cfg.burn_in and (it - cfg.burn_in) % cfg.thin == 0:
            samples.record(j, it, state)
            j += 1
            if on_sample is not None:
                on_sample(it, state)
        if progress is not None:
            progress(it)
    if counters.nan_ratios:
        log.warning("%d acceptance ratios were NaN", counters.nan_ratios)

    manifest = {
        "seed": cfg.seed,
        "kernel": asdict(cfg),
        "hyperparameters": {**asdict(hyper), "psi": list(hyper.psi)},
        "data": {"n": dataset.n, "m": dataset.m, "p": dataset.p, "t_max": dataset.t_max},
        "allowed": list(allowed.allowed),
        "acceptance": {
            "proposed": dict(counters.proposed),
            "accepted": dict(counters.accepted),
            "rates": counters.rates(),
            "nan_ratios": counters.nan_ratios,
        },
        "samples": len(samples),
        "wall_clock_seconds": time.time() - started,
    }
    return ChainResult(samples, counters, manifest)
