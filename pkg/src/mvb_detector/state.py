"""Parameter containers shared by the prior, likelihood and sampler."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class ChangePointState:
    """Cause-specific change-point indicators.

    ``z[r, t-1]`` is 1 when risk r+1 changes level at time t. The overall
    indicator gamma and the count K are derived from ``z``.
    """

    z: np.ndarray

    @property
    def m(self) -> int:
        return self.z.shape[0]

    @property
    def t_max(self) -> int:
        return self.z.shape[1]

    @property
    def gamma(self) -> np.ndarray:
        return self.z.any(axis=0)

    @property
    def change_points(self) -> np.ndarray:
        """Sorted 1-based times with gamma_t = 1."""
        return np.flatnonzero(self.gamma) + 1

    @property
    def K(self) -> int:
        return int(self.gamma.sum())

    @property
    def interval_lengths(self) -> np.ndarray:
        edges = np.concatenate(([1], self.change_points, [self.t_max + 1]))
        return np.diff(edges)

    def config_code(self, t: int) -> int:
        """Binary code of z_t with risk 1 as the least significant bit."""
        col = self.z[:, t - 1]
        return int(np.dot(col, 1 << np.arange(self.m)))

    def copy(self) -> "ChangePointState":
        return ChangePointState(self.z.copy())

    @classmethod
    def empty(cls, m: int, t_max: int) -> "ChangePointState":
        return cls(np.zeros((m, t_max), dtype=bool))


@dataclass
class BaselineHazards:
    """Baseline log-odds alpha[r, t-1], constant on cause-specific intervals."""

    alpha: np.ndarray

    def alpha_star(self, cp: ChangePointState) -> list[np.ndarray]:
        """Unique levels per risk, in time order."""
        out = []
        for r in range(self.alpha.shape[0]):
            starts = np.flatnonzero(cp.z[r])
            starts = np.concatenate(([0], starts[starts > 0]))
            out.append(self.alpha[r, starts].copy())
        return out

    def levels(self) -> list[np.ndarray]:
        """Unique levels per risk, read off the points where alpha changes."""
        out = []
        for row in self.alpha:
            starts = np.concatenate(([0], np.flatnonzero(row[1:] != row[:-1]) + 1))
            out.append(row[starts].copy())
        return out

    @classmethod
    def from_levels(cls, cp: ChangePointState, levels: list[np.ndarray]) -> "BaselineHazards":
        seg = segment_index(cp.z)
        alpha = np.empty(cp.z.shape)
        for r, lv in enumerate(levels):
            alpha[r] = np.asarray(lv, dtype=float)[seg[r]]
        return cls(alpha)

    def copy(self) -> "BaselineHazards":
        return BaselineHazards(self.alpha.copy())


@dataclass
class RegressionState:
    beta: np.ndarray  # (m, p)
    inclusion: np.ndarray  # (m, p) bool
    pi_beta: float = 0.5

    @property
    def b(self) -> np.ndarray:
        return self.inclusion.sum(axis=1)

    def included(self, r: int) -> np.ndarray:
        """Indices B_r of covariates with non-zero coefficient for risk r."""
        return np.flatnonzero(self.inclusion[r])

    def copy(self) -> "RegressionState":
        return RegressionState(self.beta.copy(), self.inclusion.copy(), self.pi_beta)

    @classmethod
    def empty(cls, m: int, p: int) -> "RegressionState":
        return cls(np.zeros((m, p)), np.zeros((m, p), dtype=bool), 0.5)


@dataclass
class ModelState:
    cp: ChangePointState
    bh: BaselineHazards
    reg: RegressionState

    @property
    def m(self) -> int:
        return self.cp.m

    @property
    def t_max(self) -> int:
        return self.cp.t_max

    @property
    def p(self) -> int:
        return self.reg.beta.shape[1]

    def copy(self) -> "ModelState":
        return ModelState(self.cp.copy(), self.bh.copy(), self.reg.copy())

    @classmethod
    def initial(cls, m: int, t_max: int, p: int, mu_alpha: float) -> "ModelState":
        """Empty model: no change points, alpha at the prior mean, beta = 0."""
        return cls(
            ChangePointState.empty(m, t_max),
            BaselineHazards(np.full((m, t_max), float(mu_alpha))),
            RegressionState.empty(m, p),
        )


def segment_index(z: np.ndarray) -> np.ndarray:
    """Cause-specific interval index of every (risk, time) cell."""
    seg = np.cumsum(z, axis=1)
    seg -= z[:, :1]  # a flag at t = 1 never opens an interval
    return seg


def check_invariants(state: ModelState, allowed_mask: np.ndarray | None = None) -> None:
    """Raise AssertionError if the state is internally inconsistent."""
    z = state.cp.z
    if z[:, 0].any():
        raise AssertionError("change point at t = 1")
    if allowed_mask is not None and (state.cp.gamma & ~allowed_mask).any():
        raise AssertionError("change point outside the allowed set")
    alpha = state.bh.alpha
    same = alpha[:, 1:] == alpha[:, :-1]
    if (same & z[:, 1:]).any():
        raise AssertionError("alpha does not change at a cause-specific change point")
    if (~same & ~z[:, 1:]).any():
        raise AssertionError("alpha changes without a cause-specific change point")
    reg = state.reg
    if (reg.beta[~reg.inclusion] != 0).any():
        raise AssertionError("excluded coefficient is non-zero")
    if not 0.0 <= reg.pi_beta <= 1.0:
        raise AssertionError("pi_beta outside [0, 1]")
