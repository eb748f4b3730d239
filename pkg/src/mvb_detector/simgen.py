"""Synthetic competing-risks data drawn from the model."""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field

import numpy as np

from . import rng as streams
from .data import Dataset, Observation


@dataclass(frozen=True)
class ScenarioSpec:
    """Simulation truth and design.

    ``alpha`` is the (m, t_max) baseline log-odds schedule. ``covariates`` is
    ``"none"``, ``"normal"`` (iid standard normal) or an explicit (n, p) array.
    """

    alpha: np.ndarray
    n: int
    beta: np.ndarray | None = None
    covariates: str | np.ndarray = "none"
    censor_fraction: float = 0.0
    seed: int = 0
    name: str = "custom"

    def __post_init__(self) -> None:
        alpha = np.atleast_2d(np.asarray(self.alpha, dtype=float))
        object.__setattr__(self, "alpha", alpha)
        cov = self.covariates
        if isinstance(cov, str):
            if cov not in ("none", "normal"):
                raise ValueError(f"unknown covariate generator {cov!r}")
            if cov == "normal" and self.beta is None:
                raise ValueError("normal covariates need a beta matrix")
        else:
            cov = np.asarray(cov, dtype=float)
            if cov.ndim != 2 or cov.shape[0] != self.n:
                raise ValueError("fixed covariates must be an (n, p) array")
            object.__setattr__(self, "covariates", cov)
        if self.beta is None:
            p = 0 if isinstance(cov, str) else cov.shape[1]
            beta = np.zeros((alpha.shape[0], p))
        else:
            beta = np.asarray(self.beta, dtype=float).reshape(alpha.shape[0], -1)
        if not isinstance(cov, str) and beta.shape[1] != cov.shape[1]:
            raise ValueError(f"beta has {beta.shape[1]} columns but covariates have {cov.shape[1]}")
        if isinstance(cov, str) and cov == "none" and beta.shape[1]:
            raise ValueError("beta given without covariates")
        object.__setattr__(self, "beta", beta)
        if not 0.0 <= self.censor_fraction <= 1.0:
            raise ValueError("censor_fraction must lie in [0, 1]")
        if self.n < 1:
            raise ValueError("n must be positive")
        if not np.all(np.isfinite(alpha)):
            raise ValueError("alpha schedule must cover 1..t_max with finite values")

    @property
    def m(self) -> int:
        return self.alpha.shape[0]

    @property
    def t_max(self) -> int:
        return self.alpha.shape[1]

    @property
    def p(self) -> int:
        return self.beta.shape[1]

    @property
    def z(self) -> np.ndarray:
        """True cause-specific change-point indicators."""
        z = np.zeros(self.alpha.shape, dtype=bool)
        z[:, 1:] = self.alpha[:, 1:] != self.alpha[:, :-1]
        return z

    @property
    def change_points(self) -> list[int]:
        return [int(t) for t in np.flatnonzero(self.z.any(axis=0)) + 1]


def piecewise_alpha(t_max: int, levels: list[tuple[float, ...]], starts: list[int]) -> np.ndarray:
    """Build an (m, t_max) schedule; ``levels[k]`` holds from time ``starts[k]`` on."""
    if not starts or starts[0] != 1:
        raise ValueError("the first level must start at t = 1")
    alpha = np.empty((len(levels[0]), t_max))
    bounds = list(starts) + [t_max + 1]
    for lv, a, b in zip(levels, bounds[:-1], bounds[1:]):
        alpha[:, a - 1 : b - 1] = np.asarray(lv, dtype=float)[:, None]
    return alpha


def _category_probs(eta: np.ndarray) -> np.ndarray:
    """P(no event), P(cause 1..m) for linear predictors over the last axis."""
    full = np.concatenate((np.zeros(eta.shape[:-1] + (1,)), eta), axis=-1)
    top = full.max(axis=-1, keepdims=True)
    if np.isposinf(top).any():
        w = np.where(np.isposinf(top), np.isposinf(full).astype(float), np.exp(full - np.where(np.isposinf(top), 0, top)))
    else:
        w = np.exp(full - top)
    return w / w.sum(axis=-1, keepdims=True)


def _draw_times(eta: np.ndarray, unif: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Event times and causes from per-period categorical draws.

    ``eta`` is (n, m, t_max); ``unif`` is (n, t_max + 1), the last column
    choosing the cause reported for individuals surviving past t_max.
    """
    n, m, t_max = eta.shape
    probs = _category_probs(np.swapaxes(eta, 1, 2))  # (n, t_max, m+1)
    cdf = np.cumsum(probs, axis=-1)
    cat = np.minimum((cdf < unif[:, :t_max, None] * cdf[..., -1:]).sum(axis=-1), m)
    hit = cat > 0
    first = np.where(hit.any(axis=1), hit.argmax(axis=1), t_max)
    times = first + 1
    rows = np.arange(n)
    status = np.empty(n, dtype=np.int64)
    done = first < t_max
    status[done] = cat[rows[done], first[done]]

    # beyond the horizon: cause drawn in proportion to the hazards at t_max
    last = probs[:, -1, 1:]
    tot = last.sum(axis=1, keepdims=True)
    last = np.where(tot > 0, last / np.where(tot > 0, tot, 1.0), 1.0 / m)
    pick = np.minimum((np.cumsum(last, axis=1) < unif[:, t_max : t_max + 1]).sum(axis=1), m - 1) + 1
    status[~done] = pick[~done]
    return times.astype(np.int64), status


def sample_individual(alpha, beta, x, t_max: int, rng: np.random.Generator) -> Observation:
    """Draw one (time, cause) pair by walking t = 1..t_max.

    Survivors get time t_max + 1 with a cause drawn in proportion to the
    hazards at t_max.
    """
    alpha = np.atleast_2d(np.asarray(alpha, dtype=float))[:, :t_max]
    beta = np.asarray(beta, dtype=float).reshape(alpha.shape[0], -1)
    x = np.asarray(x, dtype=float).reshape(-1)
    if x.size != beta.shape[1] or alpha.shape[1] != t_max:
        raise ValueError("dimension mismatch between alpha, beta, x and t_max")
    eta = alpha + (beta @ x)[:, None] if x.size else alpha
    t, s = _draw_times(eta[None], rng.random((1, t_max + 1)))
    return Observation(int(t[0]), int(s[0]), tuple(float(v) for v in x))


@dataclass
class Simulation:
    dataset: Dataset
    spec: ScenarioSpec
    censored_rows: list[int] = field(default_factory=list)  # 1-based data rows

    def truth(self) -> dict:
        spec = self.spec
        z = spec.z
        return {
            "name": spec.name,
            "seed": spec.seed,
            "n": spec.n,
            "m": spec.m,
            "p": spec.p,
            "t_max": spec.t_max,
            "censor_fraction": spec.censor_fraction,
            "change_points": spec.change_points,
            "z": {str(t): [int(r) + 1 for r in np.flatnonzero(z[:, t - 1])] for t in spec.change_points},
            "alpha": spec.alpha.tolist(),
            "beta": spec.beta.tolist(),
            "censored_rows": self.censored_rows,
        }


def _covariates(spec: ScenarioSpec) -> np.ndarray:
    cov = spec.covariates
    if isinstance(cov, str):
        if cov == "normal":
            return streams.generator(spec.seed, streams.COVARIATES).standard_normal((spec.n, spec.p))
        return np.zeros((spec.n, spec.p))
    return np.asarray(cov, dtype=float)


def generate_scenario(spec: ScenarioSpec) -> Simulation:
    """Draw ``spec.n`` individuals and apply uniform random censoring.

    Individual i reads its uniforms from a fixed offset of the simulation
    stream, so the draws do not depend on evaluation order.
    """
    x = _covariates(spec)
    t_max = spec.t_max
    per = 4 * math.ceil((t_max + 1) / 4)
    unif = streams.uniforms(spec.seed, streams.SIMULATE, 0, 0, spec.n * per).reshape(spec.n, per)
    eta = spec.alpha[None] + (x @ spec.beta.T)[:, :, None]
    times, status = _draw_times(eta, unif[:, : t_max + 1])

    k = math.floor(spec.censor_fraction * spec.n)
    censored: list[int] = []
    if k > 0:
        eligible = np.flatnonzero(times >= 2)
        if eligible.size < k:
            raise ValueError(f"only {eligible.size} individuals can be censored, {k} requested")
        rng = streams.generator(spec.seed, streams.CENSOR)
        chosen = np.sort(rng.choice(eligible, size=k, replace=False))
        times[chosen] = rng.integers(1, times[chosen])
        status[chosen] = 0
        censored = [int(i) + 1 for i in chosen]
    return Simulation(Dataset(times, status, x, spec.m, t_max), spec, censored)


# ---------------------------------------------------------------------------
# presets

PRESETS = ("sim3", "appendix-b")
APPENDIX_B_HORIZON = 100


def preset(name: str, seed: int = 0, censor: float = 0.0, n: int | None = None) -> ScenarioSpec:
    """Shipped scenarios.

    ``sim3``: n=300, t_max=20, three risks, change points at t=6 (all risks)
    and t=13 (risks 1 and 2). ``appendix-b``: n=100, three risks with constant
    log-odds (-2, -3, -4) and no change point.
    """
    if name == "sim3":
        alpha = piecewise_alpha(20, [(-9, -9, -9), (-4, -3, -3), (-2, -2, -3)], [1, 6, 13])
        return ScenarioSpec(alpha, n or 300, censor_fraction=censor, seed=seed, name=name)
    if name == "appendix-b":
        alpha = piecewise_alpha(APPENDIX_B_HORIZON, [(-2, -3, -4)], [1])
        return ScenarioSpec(alpha, n or 100, censor_fraction=censor, seed=seed, name=name)
    raise ValueError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}")


def write_truth(sim: Simulation, path: str | os.PathLike) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(sim.truth(), fh, indent=2)
        fh.write("\n")
