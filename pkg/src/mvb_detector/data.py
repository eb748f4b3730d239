"""Observed competing-risks data and the admissible change-point locations."""

from __future__ import annotations

import csv
import io
import os
from dataclasses import dataclass, field
from functools import cached_property
from typing import IO, Iterable, Sequence

import numpy as np


class DataError(ValueError):
    """Input data violates the dataset schema or its invariants."""


@dataclass(frozen=True)
class Observation:
    time: int
    status: int  # 0 = censored, r >= 1 = event of cause r
    covariates: tuple[float, ...] = ()


@dataclass(frozen=True, eq=False)
class Dataset:
    """Validated observations stored column-wise.

    ``times`` lie in ``1..t_max+1``. A record at ``t_max + 1`` carries an
    event status but only says that nothing happened up to ``t_max``.
    """

    times: np.ndarray
    status: np.ndarray
    covariates: np.ndarray
    m: int
    t_max: int

    def __post_init__(self) -> None:
        times = np.asarray(self.times, dtype=np.int64)
        status = np.asarray(self.status, dtype=np.int64)
        x = np.asarray(self.covariates, dtype=np.float64)
        if x.ndim == 1 and x.size == 0:
            x = np.zeros((times.size, 0))
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "status", status)
        object.__setattr__(self, "covariates", x)
        for arr in (times, status, x):
            arr.flags.writeable = False
        _validate(times, status, x, self.m, self.t_max)

    @classmethod
    def from_observations(
        cls, observations: Sequence[Observation], m: int, t_max: int | None = None
    ) -> "Dataset":
        if not observations:
            raise DataError("dataset is empty")
        p = len(observations[0].covariates)
        times = np.array([o.time for o in observations], dtype=np.int64)
        status = np.array([o.status for o in observations], dtype=np.int64)
        if any(len(o.covariates) != p for o in observations):
            raise DataError("observations disagree on covariate dimension")
        x = np.array([o.covariates for o in observations], dtype=np.float64).reshape(len(observations), p)
        if t_max is None:
            t_max = int(times.max())
        return cls(times, status, x, m, t_max)

    @property
    def n(self) -> int:
        return int(self.times.size)

    @property
    def p(self) -> int:
        return int(self.covariates.shape[1])

    @property
    def observations(self) -> list[Observation]:
        return [
            Observation(int(t), int(s), tuple(float(v) for v in row))
            for t, s, row in zip(self.times, self.status, self.covariates)
        ]

    @cached_property
    def event_in_horizon(self) -> np.ndarray:
        """True where an event of some cause is observed at a time <= t_max."""
        return (self.status > 0) & (self.times <= self.t_max)

    @cached_property
    def exposure(self) -> np.ndarray:
        """Number of periods each individual is at risk within the horizon."""
        return np.minimum(self.times, self.t_max)

    @cached_property
    def event_counts(self) -> np.ndarray:
        """Uncensored event counts for t = 1..t_max (index 0 is t = 1)."""
        ev = self.times[self.event_in_horizon]
        return np.bincount(ev - 1, minlength=self.t_max)[: self.t_max]

    @cached_property
    def patterns(self) -> "CovariatePatterns":
        return CovariatePatterns.build(self)

    @cached_property
    def cells(self) -> "CellLayout":
        return CellLayout.build(self)


def _validate(times, status, x, m, t_max) -> None:
    if times.ndim != 1 or times.size == 0:
        raise DataError("dataset is empty")
    if status.shape != times.shape or x.shape[0] != times.size:
        raise DataError("column lengths differ")
    if m < 1:
        raise DataError("m must be at least 1")
    bad = np.flatnonzero(times < 1)
    if bad.size:
        i = bad[0]
        raise DataError(f"row {i + 1}: time out of range ({times[i]} with status {status[i]}, t_max={t_max})")
    if t_max < 1:
        raise DataError("t_max must be at least 1")
    if not np.all(np.isfinite(x)):
        raise DataError("non-finite covariate value")
    bad = np.flatnonzero((status < 0) | (status > m))
    if bad.size:
        raise DataError(f"row {bad[0] + 1}: status {status[bad[0]]} outside 0..{m}")
    limit = np.where(status == 0, t_max, t_max + 1)
    bad = np.flatnonzero((times < 1) | (times > limit))
    if bad.size:
        i = bad[0]
        raise DataError(f"row {i + 1}: time out of range ({times[i]} with status {status[i]}, t_max={t_max})")


@dataclass(frozen=True)
class CovariatePatterns:
    """Individuals grouped by identical covariate rows.

    ``events[g, r, t]`` counts cause-(r+1) events at time t+1 in group g and
    ``at_risk[g, t]`` counts survival factors 1 - lambda(t+1) contributed by
    group g to the likelihood.
    """

    x: np.ndarray
    events: np.ndarray
    at_risk: np.ndarray

    @classmethod
    def build(cls, data: Dataset) -> "CovariatePatterns":
        if data.p:
            x, inverse = np.unique(data.covariates, axis=0, return_inverse=True)
            inverse = inverse.reshape(-1)
        else:
            x = np.zeros((1, 0))
            inverse = np.zeros(data.n, dtype=np.int64)
        g, t_max, m = x.shape[0], data.t_max, data.m
        events = np.zeros((g, m, t_max))
        ev = data.event_in_horizon
        np.add.at(events, (inverse[ev], data.status[ev] - 1, data.times[ev] - 1), 1.0)
        # survival factors l = 1..t_i - delta_i, truncated at the horizon
        last = np.where(ev, data.times - 1, data.exposure)
        at_risk = np.zeros((g, t_max + 1))
        np.add.at(at_risk, (inverse, last), 1.0)
        at_risk = at_risk[:, ::-1].cumsum(axis=1)[:, ::-1][:, 1:]
        return cls(x, events, at_risk)


@dataclass(frozen=True)
class CellLayout:
    """Flattened (individual, period) cells, individual-major.

    Individual i owns periods 1..min(t_i, t_max). ``event_cause[k]`` is the
    0-based cause observed in cell k, or -1 when cell k is a survival period.
    """

    obs: np.ndarray
    time: np.ndarray  # 0-based period index
    event_cause: np.ndarray
    x: np.ndarray  # covariate row of each cell

    @property
    def size(self) -> int:
        return int(self.obs.size)

    @classmethod
    def build(cls, data: Dataset) -> "CellLayout":
        counts = data.exposure
        obs = np.repeat(np.arange(data.n), counts)
        starts = np.concatenate(([0], np.cumsum(counts)[:-1]))
        time = np.arange(obs.size) - np.repeat(starts, counts)
        last = np.repeat(counts - 1, counts) == time
        cause = np.where(last & data.event_in_horizon[obs], data.status[obs] - 1, -1)
        return cls(obs, time, cause, data.covariates[obs])


@dataclass(frozen=True)
class AllowedSet:
    allowed: tuple[int, ...]
    event_counts: tuple[int, ...] = field(repr=False)

    def __len__(self) -> int:
        return len(self.allowed)

    def __contains__(self, t: object) -> bool:
        return t in self._members

    def __iter__(self):
        return iter(self.allowed)

    @cached_property
    def _members(self) -> frozenset[int]:
        return frozenset(self.allowed)

    @cached_property
    def mask(self) -> np.ndarray:
        """Boolean mask over t = 1..t_max."""
        out = np.zeros(len(self.event_counts), dtype=bool)
        out[np.asarray(self.allowed, dtype=np.int64) - 1] = True
        return out


def allowed_from_counts(event_counts: Iterable[int]) -> AllowedSet:
    e = [int(v) for v in event_counts]
    t_max = len(e)
    allowed = []
    for t in range(2, t_max):
        here, prev, nxt = e[t - 1], e[t - 2], e[t]
        if here == 0 and prev == 0:
            continue
        if here == 0 and prev > 0 and nxt > 0:
            continue
        allowed.append(t)
    return AllowedSet(tuple(allowed), tuple(e))


def compute_allowed_set(dataset: Dataset) -> AllowedSet:
    """Times at which an overall change point may occur.

    Boundaries 1 and t_max are excluded, as is any t without events whose
    predecessor also has none, and any t without events sandwiched between
    two times with events. Only uncensored events count.
    """
    return allowed_from_counts(dataset.event_counts)


def parse_dataset(source: str | os.PathLike | IO[str], m: int, t_max: int | str | None = "auto") -> Dataset:
    """Read ``time,status,x1,...,xp`` CSV into a validated :class:`Dataset`.

    ``source`` is a path or an open text stream. ``t_max="auto"`` (or None)
    uses the largest observed time.
    """
    if isinstance(source, (str, os.PathLike)):
        with open(source, newline="", encoding="utf-8") as fh:
            return _parse(fh, m, t_max)
    return _parse(source, m, t_max)


def _parse(fh: IO[str], m: int, t_max) -> Dataset:
    reader = csv.reader(fh)
    try:
        header = [h.strip() for h in next(reader)]
    except StopIteration:
        raise DataError("empty file") from None
    if header[:2] != ["time", "status"]:
        raise DataError(f"header must start with 'time,status', got {','.join(header)!r}")
    p = len(header) - 2
    expected = [f"x{j}" for j in range(1, p + 1)]
    if header[2:] != expected:
        raise DataError(f"unexpected covariate columns {header[2:]!r}; expected {expected!r}")

    times, status, rows = [], [], []
    for lineno, row in enumerate(reader, start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != p + 2:
            raise DataError(f"line {lineno}: expected {p + 2} fields, got {len(row)}")
        try:
            times.append(int(row[0]))
            status.append(int(row[1]))
            rows.append([float(v) for v in row[2:]])
        except ValueError as exc:
            raise DataError(f"line {lineno}: malformed numeric cell ({exc})") from None
    if not times:
        raise DataError("empty file")

    t_arr = np.array(times, dtype=np.int64)
    s_arr = np.array(status, dtype=np.int64)
    if t_max in (None, "auto"):
        t_max = int(t_arr.max())
    try:
        return Dataset(t_arr, s_arr, np.array(rows, dtype=np.float64).reshape(len(times), p), m, int(t_max))
    except DataError as exc:
        # report file line numbers rather than row indices
        msg = str(exc)
        if msg.startswith("row "):
            idx, rest = msg[4:].split(":", 1)
            msg = f"line {int(idx) + 1}:{rest}"
        raise DataError(msg) from None


def write_dataset(dataset: Dataset, target: str | os.PathLike | IO[str]) -> None:
    """Write a dataset in the CSV schema read by :func:`parse_dataset`."""
    if isinstance(target, (str, os.PathLike)):
        with open(target, "w", newline="", encoding="utf-8") as fh:
            write_dataset(dataset, fh)
        return
    w = csv.writer(target, lineterminator="\n")
    w.writerow(["time", "status"] + [f"x{j}" for j in range(1, dataset.p + 1)])
    for t, s, row in zip(dataset.times, dataset.status, dataset.covariates):
        w.writerow([int(t), int(s)] + [repr(float(v)) for v in row])


def dataset_to_csv(dataset: Dataset) -> str:
    buf = io.StringIO()
    write_dataset(dataset, buf)
    return buf.getvalue()
