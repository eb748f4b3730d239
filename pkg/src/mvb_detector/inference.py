"""Posterior samples, Bayes factors, summaries and their serialized forms."""

from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass
from typing import IO, Iterator

import numpy as np

from .data import AllowedSet, DataError, Dataset
from .likelihood import log_normalizer
from .priors import Hyperparameters, prior_marginals
from .state import BaselineHazards, ChangePointState, ModelState, RegressionState

QUANTILE_METHOD = "linear"  # inclusive rule: position q (n - 1) in the sorted draws
INF_SENTINEL = "inf"


@dataclass(frozen=True)
class PosteriorSample:
    iteration: int
    z: np.ndarray
    alpha: np.ndarray
    beta: np.ndarray
    inclusion: np.ndarray
    pi_beta: float

    @property
    def gamma(self) -> np.ndarray:
        return self.z.any(axis=0)

    @property
    def K(self) -> int:
        return int(self.gamma.sum())

    def to_state(self) -> ModelState:
        return ModelState(
            ChangePointState(self.z.copy()),
            BaselineHazards(self.alpha.copy()),
            RegressionState(self.beta.copy(), self.inclusion.copy(), self.pi_beta),
        )


class PosteriorSamples:
    """Column store of recorded draws. Indexing yields :class:`PosteriorSample`."""

    def __init__(self, iteration, z, alpha, beta, inclusion, pi_beta):
        self.iteration = np.asarray(iteration, dtype=np.int64)
        self.z = np.asarray(z, dtype=bool)
        self.alpha = np.asarray(alpha, dtype=float)
        self.beta = np.asarray(beta, dtype=float)
        self.inclusion = np.asarray(inclusion, dtype=bool)
        self.pi_beta = np.asarray(pi_beta, dtype=float)

    @classmethod
    def allocate(cls, n: int, m: int, t_max: int, p: int) -> "PosteriorSamples":
        return cls(
            np.zeros(n, dtype=np.int64),
            np.zeros((n, m, t_max), dtype=bool),
            np.zeros((n, m, t_max)),
            np.zeros((n, m, p)),
            np.zeros((n, m, p), dtype=bool),
            np.zeros(n),
        )

    @classmethod
    def from_list(cls, draws: list[PosteriorSample]) -> "PosteriorSamples":
        if not draws:
            raise ValueError("no samples")
        return cls(
            [d.iteration for d in draws],
            np.stack([d.z for d in draws]),
            np.stack([d.alpha for d in draws]),
            np.stack([d.beta for d in draws]),
            np.stack([d.inclusion for d in draws]),
            [d.pi_beta for d in draws],
        )

    def record(self, j: int, iteration: int, state: ModelState) -> None:
        self.iteration[j] = iteration
        self.z[j] = state.cp.z
        self.alpha[j] = state.bh.alpha
        self.beta[j] = state.reg.beta
        self.inclusion[j] = state.reg.inclusion
        self.pi_beta[j] = state.reg.pi_beta

    def __len__(self) -> int:
        return int(self.iteration.size)

    def __getitem__(self, j: int) -> PosteriorSample:
        return PosteriorSample(
            int(self.iteration[j]), self.z[j], self.alpha[j], self.beta[j], self.inclusion[j], float(self.pi_beta[j])
        )

    def __iter__(self) -> Iterator[PosteriorSample]:
        return (self[j] for j in range(len(self)))

    @property
    def m(self) -> int:
        return self.z.shape[1]

    @property
    def t_max(self) -> int:
        return self.z.shape[2]

    @property
    def p(self) -> int:
        return self.beta.shape[2]

    @property
    def gamma(self) -> np.ndarray:
        return self.z.any(axis=1)

    @property
    def K(self) -> np.ndarray:
        return self.gamma.sum(axis=1)

    def take(self, index) -> "PosteriorSamples":
        return PosteriorSamples(
            self.iteration[index], self.z[index], self.alpha[index], self.beta[index],
            self.inclusion[index], self.pi_beta[index],
        )

    @classmethod
    def concatenate(cls, parts: list["PosteriorSamples"]) -> "PosteriorSamples":
        cols = ("iteration", "z", "alpha", "beta", "inclusion", "pi_beta")
        return cls(*(np.concatenate([getattr(p, c) for p in parts]) for c in cols))


def _require(samples: PosteriorSamples) -> None:
    if len(samples) == 0:
        raise ValueError("no samples")


def batch_means_se(x: np.ndarray, n_batches: int = 50) -> float:
    """Monte Carlo standard error of mean(x) from non-overlapping batch means."""
    x = np.asarray(x, dtype=float)
    n = x.size
    if n < 2:
        return math.nan
    b = min(n_batches, n)
    size = n // b
    means = x[: b * size].reshape(b, size).mean(axis=1)
    return float(means.std(ddof=1) / math.sqrt(b))


# ---------------------------------------------------------------------------
# Bayes factors


@dataclass(frozen=True)
class SavageDickey:
    B: float
    posterior_freq: float
    prior_prob: float
    mc_se: float  # standard error of B
    count: int
    n: int


def savage_dickey_K0(samples: PosteriorSamples, hyper: Hyperparameters, allowed: AllowedSet) -> SavageDickey:
    """Bayes factor for K = 0 against K > 0: posterior over prior mass at K = 0."""
    _require(samples)
    zero = samples.K == 0
    freq = float(zero.mean())
    pK0 = prior_marginals(hyper, allowed).pK0
    se = batch_means_se(zero.astype(float)) / pK0
    return SavageDickey(freq / pK0, freq, pK0, se, int(zero.sum()), len(samples))


def odds_ratio(freq, prior) -> np.ndarray:
    """Posterior odds over prior odds; 0 at freq 0 and +inf at freq 1."""
    freq = np.asarray(freq, dtype=float)
    prior_odds = prior / (1.0 - prior)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = freq / (1.0 - freq) / prior_odds
    out = np.where(freq <= 0.0, 0.0, out)
    return np.where(freq >= 1.0, np.inf, out)


@dataclass(frozen=True)
class BayesFactorReport:
    """Per-time Bayes factors, defined for allowed times only.

    ``times`` holds the 1-based allowed times; column k of ``bf_z`` and
    ``count_z`` refers to ``times[k]``.
    """

    savage_dickey: SavageDickey
    times: np.ndarray
    bf_gamma: np.ndarray
    count_gamma: np.ndarray
    bf_z: np.ndarray  # (m, len(times))
    count_z: np.ndarray
    n: int
    prior_gamma: float
    prior_z: np.ndarray

    @property
    def B_K0(self) -> float:
        return self.savage_dickey.B

    def gamma_at(self, t: int) -> float:
        return float(self.bf_gamma[self._col(t)])

    def z_at(self, r: int, t: int) -> float:
        """Bayes factor for z at 1-based risk r and time t."""
        return float(self.bf_z[r - 1, self._col(t)])

    def _col(self, t: int) -> int:
        hit = np.flatnonzero(self.times == t)
        if hit.size == 0:
            raise KeyError(f"t={t} is not an allowed change-point time")
        return int(hit[0])


def per_time_bayes_factors(
    samples: PosteriorSamples, hyper: Hyperparameters, allowed: AllowedSet
) -> BayesFactorReport:
    _require(samples)
    marg = prior_marginals(hyper, allowed)
    times = np.asarray(allowed.allowed, dtype=np.int64)
    cols = times - 1
    n = len(samples)
    count_gamma = samples.gamma[:, cols].sum(axis=0)
    count_z = samples.z[:, :, cols].sum(axis=0)
    return BayesFactorReport(
        savage_dickey_K0(samples, hyper, allowed),
        times,
        odds_ratio(count_gamma / n, marg.p_gamma1),
        count_gamma,
        np.stack([odds_ratio(count_z[r] / n, marg.p_z1[r]) for r in range(samples.m)]) if times.size else
        np.zeros((samples.m, 0)),
        count_z,
        n,
        marg.p_gamma1,
        marg.p_z1,
    )


# ---------------------------------------------------------------------------
# summaries


def equal_tailed(draws: np.ndarray, level: float = 0.95, axis: int = 0) -> tuple[np.ndarray, np.ndarray]:
    a = (1.0 - level) / 2.0
    lo, hi = np.quantile(draws, [a, 1.0 - a], axis=axis, method=QUANTILE_METHOD)
    return lo, hi


@dataclass(frozen=True)
class Summary:
    alpha_mean: np.ndarray  # (m, t_max)
    alpha_lo: np.ndarray
    alpha_hi: np.ndarray
    inclusion_prob: np.ndarray  # (m, p)
    beta_mean: np.ndarray
    beta_lo: np.ndarray
    beta_hi: np.ndarray
    beta_cond_mean: np.ndarray  # conditional on inclusion, nan when never included
    beta_cond_lo: np.ndarray
    beta_cond_hi: np.ndarray
    cumhaz_mean: np.ndarray  # (m, t_max)
    cumhaz_lo: np.ndarray
    cumhaz_hi: np.ndarray
    profile: np.ndarray


def cumulative_hazards(samples: PosteriorSamples, x) -> np.ndarray:
    """Cumulative hazards of every draw at covariate row ``x``, shape (n, m, t_max).

    Vectorized form of :func:`~mvb_detector.likelihood.cumulative_hazard`.
    """
    eta = samples.alpha + (samples.beta @ np.asarray(x, dtype=float))[..., None]
    lse = log_normalizer(np.swapaxes(eta, 1, 2))[:, None, :]
    return np.cumsum(np.exp(eta - lse), axis=2)


def summarize(samples: PosteriorSamples, dataset: Dataset | None = None, profile=None, level: float = 0.95) -> Summary:
    """Posterior means and equal-tailed intervals for alpha, beta and cumulative hazards.

    ``profile`` is the covariate row at which cumulative hazards are
    evaluated; it defaults to zeros.
    """
    _require(samples)
    m, t_max, p = samples.m, samples.t_max, samples.p
    if dataset is not None and (dataset.m, dataset.t_max, dataset.p) != (m, t_max, p):
        raise ValueError("samples do not match the dataset dimensions")
    x = np.zeros(p) if profile is None else np.asarray(profile, dtype=float).reshape(-1)
    if x.size != p:
        raise ValueError(f"profile has {x.size} entries, expected {p}")

    a_lo, a_hi = equal_tailed(samples.alpha, level)
    b_lo, b_hi = equal_tailed(samples.beta, level) if p else (np.zeros((m, 0)),) * 2
    cond = np.full((3, m, p), np.nan)
    for r in range(m):
        for j in range(p):
            sel = samples.inclusion[:, r, j]
            if sel.any():
                v = samples.beta[sel, r, j]
                cond[0, r, j] = v.mean()
                cond[1, r, j], cond[2, r, j] = equal_tailed(v, level)

    ch = cumulative_hazards(samples, x)
    c_lo, c_hi = equal_tailed(ch, level)
    return Summary(
        samples.alpha.mean(axis=0), a_lo, a_hi,
        samples.inclusion.mean(axis=0), samples.beta.mean(axis=0), b_lo, b_hi,
        cond[0], cond[1], cond[2],
        ch.mean(axis=0), c_lo, c_hi, x,
    )


# ---------------------------------------------------------------------------
# serialization


def _bits(row: np.ndarray) -> str:
    return "".join("1" if v else "0" for v in row)


def _num(v: float) -> str:
    return repr(float(v))


def _fmt_bf(v: float) -> str:
    return INF_SENTINEL if math.isinf(v) else _num(v)


def sample_header(m: int, t_max: int, p: int) -> list[str]:
    cols = ["iteration", "K", "gamma"] + [f"z_{r}" for r in range(1, m + 1)]
    cols += [f"alpha_{r}_{t}" for r in range(1, m + 1) for t in range(1, t_max + 1)]
    cols += [f"beta_{r}_{j}" for r in range(1, m + 1) for j in range(1, p + 1)]
    cols += [f"incl_{r}_{j}" for r in range(1, m + 1) for j in range(1, p + 1)]
    return cols + ["pi_beta"]


def sample_row(iteration: int, state: ModelState) -> list[str]:
    z = state.cp.z
    row = [str(int(iteration)), str(state.cp.K), _bits(state.cp.gamma)] + [_bits(zr) for zr in z]
    row += [_num(v) for v in state.bh.alpha.ravel()]
    row += [_num(v) for v in state.reg.beta.ravel()]
    row += ["1" if v else "0" for v in state.reg.inclusion.ravel()]
    return row + [_num(state.reg.pi_beta)]


class SampleWriter:
    """Stream recorded draws to CSV, one row per draw."""

    def __init__(self, fh: IO[str], m: int, t_max: int, p: int):
        self._w = csv.writer(fh, lineterminator="\n")
        self._w.writerow(sample_header(m, t_max, p))
        self._fh = fh

    def write(self, iteration: int, state: ModelState) -> None:
        self._w.writerow(sample_row(iteration, state))


def write_samples(samples: PosteriorSamples, target: str | os.PathLike | IO[str]) -> None:
    if isinstance(target, (str, os.PathLike)):
        with open(target, "w", newline="", encoding="utf-8") as fh:
            write_samples(samples, fh)
        return
    w = SampleWriter(target, samples.m, samples.t_max, samples.p)
    for draw in samples:
        w.write(draw.iteration, draw.to_state())


def read_samples(source: str | os.PathLike | IO[str]) -> PosteriorSamples:
    """Parse a sample CSV. Raises ValueError on empty or malformed files."""
    if isinstance(source, (str, os.PathLike)):
        with open(source, newline="", encoding="utf-8") as fh:
            return read_samples(fh)
    reader = csv.reader(source)
    header = next(reader, None)
    if not header or header[:3] != ["iteration", "K", "gamma"]:
        raise DataError("not a sample file")
    m = sum(1 for h in header if h.startswith("z_"))
    n_alpha = sum(1 for h in header if h.startswith("alpha_"))
    p = sum(1 for h in header if h.startswith("beta_")) // max(m, 1)
    if m == 0 or n_alpha % m:
        raise DataError("malformed sample header")
    t_max = n_alpha // m
    if header != sample_header(m, t_max, p):
        raise DataError("malformed sample header")

    it, zs, al, be, inc, pib = [], [], [], [], [], []
    for lineno, row in enumerate(reader, start=2):
        if not row:
            continue
        if len(row) != len(header):
            raise DataError(f"line {lineno}: truncated sample row")
        try:
            k = 3
            z = np.array([[c == "1" for c in row[k + r]] for r in range(m)], dtype=bool)
            if z.shape != (m, t_max):
                raise DataError("bad indicator string")
            k += m
            a = np.array(row[k : k + m * t_max], dtype=float).reshape(m, t_max)
            k += m * t_max
            b = np.array(row[k : k + m * p], dtype=float).reshape(m, p)
            k += m * p
            i = np.array([c == "1" for c in row[k : k + m * p]], dtype=bool).reshape(m, p)
            it.append(int(row[0]))
            pib.append(float(row[-1]))
        except ValueError as exc:
            raise DataError(f"line {lineno}: {exc}") from None
        zs.append(z)
        al.append(a)
        be.append(b)
        inc.append(i)
    if not it:
        raise DataError("sample file has no draws")
    return PosteriorSamples(it, np.stack(zs), np.stack(al), np.stack(be), np.stack(inc), pib)


def bf_gamma_rows(report: BayesFactorReport) -> list[list[str]]:
    rows = [["t", "bf_gamma", "count", "n", "posterior_freq", "prior_prob"]]
    for k, t in enumerate(report.times):
        c = int(report.count_gamma[k])
        rows.append([str(int(t)), _fmt_bf(report.bf_gamma[k]), str(c), str(report.n),
                     _num(c / report.n), _num(report.prior_gamma)])
    return rows


def bf_z_rows(report: BayesFactorReport) -> list[list[str]]:
    rows = [["r", "t", "bf_z", "count", "n", "posterior_freq", "prior_prob"]]
    for r in range(report.bf_z.shape[0]):
        for k, t in enumerate(report.times):
            c = int(report.count_z[r, k])
            rows.append([str(r + 1), str(int(t)), _fmt_bf(report.bf_z[r, k]), str(c), str(report.n),
                         _num(c / report.n), _num(report.prior_z[r])])
    return rows


def bayes_factor_json(report: BayesFactorReport) -> dict:
    sd = report.savage_dickey
    return {
        "B_K0": _fmt_bf(sd.B) if math.isinf(sd.B) else sd.B,
        "B_K0_mc_se": sd.mc_se,
        "posterior_freq_K0": sd.posterior_freq,
        "prior_prob_K0": sd.prior_prob,
        "count_K0": sd.count,
        "n": sd.n,
        "bf_gamma": {str(int(t)): _fmt_bf(v) if math.isinf(v) else float(v)
                     for t, v in zip(report.times, report.bf_gamma)},
    }


def alpha_rows(s: Summary) -> list[list[str]]:
    rows = [["r", "t", "mean", "lo95", "hi95"]]
    m, t_max = s.alpha_mean.shape
    for r in range(m):
        for t in range(t_max):
            rows.append([str(r + 1), str(t + 1), _num(s.alpha_mean[r, t]), _num(s.alpha_lo[r, t]), _num(s.alpha_hi[r, t])])
    return rows


def beta_rows(s: Summary) -> list[list[str]]:
    rows = [["r", "j", "inclusion_prob", "mean", "lo95", "hi95", "cond_mean", "cond_lo95", "cond_hi95"]]
    m, p = s.beta_mean.shape
    for r in range(m):
        for j in range(p):
            rows.append([str(r + 1), str(j + 1)] + [_num(a[r, j]) for a in (
                s.inclusion_prob, s.beta_mean, s.beta_lo, s.beta_hi, s.beta_cond_mean, s.beta_cond_lo, s.beta_cond_hi)])
    return rows


def cumhaz_rows(s: Summary) -> list[list[str]]:
    rows = [["r", "t", "mean", "lo95", "hi95"]]
    m, t_max = s.cumhaz_mean.shape
    for r in range(m):
        for t in range(t_max):
            rows.append([str(r + 1), str(t + 1), _num(s.cumhaz_mean[r, t]), _num(s.cumhaz_lo[r, t]), _num(s.cumhaz_hi[r, t])])
    return rows


def write_rows(rows: list[list[str]], path: str | os.PathLike) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        csv.writer(fh, lineterminator="\n").writerows(rows)


# ---------------------------------------------------------------------------
# prior recovery


@dataclass(frozen=True)
class PriorRecovery:
    """Empirical change-point marginals of a temperature-0 run against the prior."""

    tv_K: float
    K_empirical: np.ndarray
    K_prior: np.ndarray
    gamma_freq: np.ndarray  # per allowed time
    gamma_se: np.ndarray
    p_gamma1: float
    z_given_gamma: np.ndarray  # per risk, pooled over allowed times
    z_prior: np.ndarray
    times: np.ndarray

    def gamma_ok(self, n_se: float = 3.0) -> bool:
        dev = np.abs(self.gamma_freq - self.p_gamma1)
        return bool(np.all(dev <= n_se * self.gamma_se))

    def z_ok(self, tol: float = 0.02) -> bool:
        return bool(np.all(np.abs(self.z_given_gamma - self.z_prior) <= tol))

    def passed(self, tv_tol: float = 0.05, n_se: float = 3.0, z_tol: float = 0.02) -> bool:
        return self.tv_K <= tv_tol and self.gamma_ok(n_se) and self.z_ok(z_tol)


def prior_recovery(samples: PosteriorSamples, hyper: Hyperparameters, allowed: AllowedSet) -> PriorRecovery:
    _require(samples)
    marg = prior_marginals(hyper, allowed)
    n_allowed = len(allowed)
    emp = np.bincount(samples.K, minlength=n_allowed + 1)[: n_allowed + 1] / len(samples)
    times = np.asarray(allowed.allowed, dtype=np.int64)
    g = samples.gamma[:, times - 1]
    se = np.array([batch_means_se(g[:, k].astype(float)) for k in range(times.size)])
    n_cp = g.sum()
    if n_cp:
        zg = samples.z[:, :, times - 1].sum(axis=(0, 2)) / n_cp
        z_prior = marg.p_z1 / marg.p_gamma1
    else:
        zg = z_prior = np.zeros(samples.m)
    return PriorRecovery(
        0.5 * float(np.abs(emp - marg.pK).sum()),
        emp,
        marg.pK,
        g.mean(axis=0),
        se,
        marg.p_gamma1,
        zg,
        z_prior,
        times,
    )
