"""Non-private survival primitives.

Datasets, the public evaluation grid, product-limit estimation on that
grid, log-log Weibull regression and the two-sample log-rank test.

All containers are frozen and store read-only numpy arrays, so they can be
shared freely between threads and worker processes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Iterator, NamedTuple

import numpy as np
from scipy.special import gammaincc

from .errors import FitError, ParameterError

# Eligible survival values for the log-log transform.
WEIBULL_EPS = 1e-12


def _frozen(a, dtype) -> np.ndarray:
    arr = np.array(a, dtype=dtype, copy=True).reshape(-1)
    arr.flags.writeable = False
    return arr


class SurvivalRecord(NamedTuple):
    time: float
    event: bool


@dataclass(frozen=True, eq=False)
class SurvivalDataset:
    """Right-censored observations stored column-wise.

    ``times`` are in days, ``events`` is True where the event was observed
    and False for a right-censored follow-up.
    """

    times: np.ndarray
    events: np.ndarray

    def __post_init__(self):
        times = _frozen(self.times, float)
        events = _frozen(self.events, bool)
        if times.shape != events.shape:
            raise ParameterError(
                f"times and events differ in length ({times.size} vs {events.size})"
            )
        if times.size and (not np.all(np.isfinite(times)) or times.min() < 0):
            raise ParameterError("survival times must be finite and non-negative")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "events", events)

    @classmethod
    def from_records(cls, records: Iterable[SurvivalRecord | tuple]) -> "SurvivalDataset":
        recs = list(records)
        return cls([r[0] for r in recs], [bool(r[1]) for r in recs])

    @classmethod
    def concat(cls, datasets: Iterable["SurvivalDataset"]) -> "SurvivalDataset":
        ds = list(datasets)
        if not ds:
            return cls([], [])
        return cls(
            np.concatenate([d.times for d in ds]),
            np.concatenate([d.events for d in ds]),
        )

    def __len__(self) -> int:
        return int(self.times.size)

    def __iter__(self) -> Iterator[SurvivalRecord]:
        for t, e in zip(self.times.tolist(), self.events.tolist()):
            yield SurvivalRecord(t, e)

    @property
    def records(self) -> list[SurvivalRecord]:
        return list(self)

    @property
    def n_events(self) -> int:
        return int(self.events.sum())

    @property
    def t_max(self) -> float:
        if not len(self):
            raise ParameterError("empty dataset has no maximum time")
        return float(self.times.max())

    def subset(self, indices) -> "SurvivalDataset":
        idx = np.asarray(indices, dtype=np.intp)
        return SurvivalDataset(self.times[idx], self.events[idx])

    def same_records(self, other: "SurvivalDataset") -> bool:
        """Multiset equality of (time, event) pairs."""
        if len(self) != len(other):
            return False
        a = sorted(zip(self.times.tolist(), self.events.tolist()))
        b = sorted(zip(other.times.tolist(), other.events.tolist()))
        return a == b


@dataclass(frozen=True, eq=False)
class TimeGrid:
    points: np.ndarray

    def __post_init__(self):
        pts = _frozen(self.points, float)
        if pts.size < 2:
            raise ParameterError("a time grid needs at least two points")
        if not np.all(np.isfinite(pts)) or pts[0] <= 0 or np.any(np.diff(pts) <= 0):
            raise ParameterError("grid points must be positive and strictly increasing")
        object.__setattr__(self, "points", pts)

    @property
    def K(self) -> int:
        return int(self.points.size)

    def __len__(self) -> int:
        return self.K

    def __eq__(self, other) -> bool:
        if not isinstance(other, TimeGrid):
            return NotImplemented
        return self.points.shape == other.points.shape and bool(
            np.array_equal(self.points, other.points)
        )

    __hash__ = None


@dataclass(frozen=True, eq=False)
class SurvivalCurve:
    """Survival function sampled on a grid.

    Raw noisy releases also live in this type; ``is_legal`` tells whether
    the values form a valid survivor function.
    """

    grid: TimeGrid
    values: np.ndarray

    def __post_init__(self):
        vals = _frozen(self.values, float)
        if vals.size != self.grid.K:
            raise ParameterError(
                f"curve has {vals.size} values for a grid of {self.grid.K} points"
            )
        object.__setattr__(self, "values", vals)

    def is_legal(self) -> bool:
        v = self.values
        return bool(
            np.all(np.isfinite(v))
            and v[0] <= 1.0
            and v[-1] >= 0.0
            and np.all(np.diff(v) <= 0.0)
        )

    def with_values(self, values) -> "SurvivalCurve":
        return SurvivalCurve(self.grid, values)


@dataclass(frozen=True)
class WeibullParams:
    """S(t) = exp(-(t / scale) ** shape)."""

    shape: float
    scale: float

    def __post_init__(self):
        for name in ("shape", "scale"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v > 0):
                raise ParameterError(f"Weibull {name} must be finite and positive, got {v}")


@dataclass(frozen=True)
class LogRankResult:
    statistic: float
    p_value: float
    observed: float = 0.0
    expected: float = 0.0
    variance: float = 0.0
    degenerate: bool = field(default=False)


def build_grid(n: int, rho: float, k_max: int, t_max: float) -> TimeGrid:
    """Equi-spaced public grid of ``K = min(ceil(rho * n), k_max)`` points.

    K is clamped below at 2 and the last point is exactly ``t_max``.
    """
    if n < 1:
        raise ParameterError(f"n must be at least 1, got {n}")
    if not (0 < rho <= 1):
        raise ParameterError(f"rho must lie in (0, 1], got {rho}")
    if k_max < 1:
        raise ParameterError(f"k_max must be positive, got {k_max}")
    if not (math.isfinite(t_max) and t_max > 0):
        raise ParameterError(f"t_max must be positive, got {t_max}")
    # round() keeps e.g. 0.1 * 30 from ceiling to 4
    K = max(min(math.ceil(round(rho * n, 9)), k_max), 2)
    points = np.arange(1, K + 1, dtype=float) * (t_max / K)
    points[-1] = t_max
    return TimeGrid(points)


def _event_table(data: SurvivalDataset):
    order = np.argsort(data.times, kind="stable")
    t = data.times[order]
    e = data.events[order].astype(np.int64)
    uniq, first = np.unique(t, return_index=True)
    at_risk = len(t) - first
    deaths = np.add.reduceat(e, first)
    return uniq, at_risk, deaths


def kaplan_meier(data: SurvivalDataset, grid: TimeGrid) -> SurvivalCurve:
    """Product-limit estimate evaluated on ``grid``.

    Right-continuous: the value at ``t`` includes every event at times <= t.
    """
    if len(data) == 0:
        raise ParameterError("cannot estimate a survival curve from an empty dataset")
    uniq, at_risk, deaths = _event_table(data)
    has_death = deaths > 0
    if not has_death.any():
        return SurvivalCurve(grid, np.ones(grid.K))
    event_times = uniq[has_death]
    surv = np.cumprod(1.0 - deaths[has_death] / at_risk[has_death])
    pos = np.searchsorted(event_times, grid.points, side="right")
    values = np.where(pos > 0, surv[np.maximum(pos - 1, 0)], 1.0)
    return SurvivalCurve(grid, values)


def weibull_fit(curve: SurvivalCurve) -> WeibullParams:
    """Fit (shape, scale) by OLS of ln(-ln S) on ln t.

    Only grid points with ``1e-12 < S < 1 - 1e-12`` take part.
    """
    t = curve.grid.points
    s = curve.values
    ok = (s > WEIBULL_EPS) & (s < 1.0 - WEIBULL_EPS) & (t > 0)
    if ok.sum() < 2:
        raise FitError(f"need at least 2 eligible points for a Weibull fit, got {int(ok.sum())}")
    x = np.log(t[ok])
    y = np.log(-np.log(s[ok]))
    xc = x - x.mean()
    sxx = float(xc @ xc)
    if sxx <= 0:
        raise FitError("log-times have zero variance")
    slope = float(xc @ (y - y.mean())) / sxx
    intercept = float(y.mean() - slope * x.mean())
    if not (math.isfinite(slope) and slope > 0):
        raise FitError(f"regression gave non-positive shape {slope}")
    try:
        scale = math.exp(-intercept / slope)
    except OverflowError:
        scale = math.inf
    if not (math.isfinite(scale) and scale > 0):
        raise FitError(f"regression gave invalid scale {scale}")
    return WeibullParams(slope, scale)


def weibull_survival(params: WeibullParams, grid: TimeGrid) -> SurvivalCurve:
    values = np.exp(-((grid.points / params.scale) ** params.shape))
    return SurvivalCurve(grid, values)


def log_rank_test(a: SurvivalDataset, b: SurvivalDataset) -> LogRankResult:
    """Two-group log-rank test (chi-square, 1 df).

    Ties use the hypergeometric multi-death variance. When the pooled data
    has no events, or the variance vanishes, the result is flagged
    ``degenerate`` with statistic 0 and p = 1.
    """
    if len(a) == 0 or len(b) == 0:
        raise ParameterError("log-rank test needs two nonempty samples")
    times = np.concatenate([a.times, b.times])
    events = np.concatenate([a.events, b.events]).astype(np.int64)
    in_a = np.concatenate([np.ones(len(a), np.int64), np.zeros(len(b), np.int64)])

    order = np.argsort(times, kind="stable")
    times, events, in_a = times[order], events[order], in_a[order]
    uniq, first = np.unique(times, return_index=True)
    at_risk = len(times) - first
    n_a_before = np.concatenate([[0], np.cumsum(np.add.reduceat(in_a, first))[:-1]])
    at_risk_a = len(a) - n_a_before
    deaths = np.add.reduceat(events, first)
    deaths_a = np.add.reduceat(events * in_a, first)

    m = deaths > 0
    if not m.any():
        return LogRankResult(0.0, 1.0, degenerate=True)
    N, Na, D = at_risk[m].astype(float), at_risk_a[m].astype(float), deaths[m].astype(float)
    frac = Na / N
    observed = float(deaths_a[m].sum())
    expected = float(np.sum(D * frac))
    with np.errstate(divide="ignore", invalid="ignore"):
        v = np.where(N > 1, D * frac * (1 - frac) * (N - D) / (N - 1), 0.0)
    variance = float(v.sum())
    if variance <= 0:
        return LogRankResult(0.0, 1.0, observed, expected, variance, degenerate=True)
    stat = (observed - expected) ** 2 / variance
    # chi-square(1) upper tail: Q(1/2, x/2)
    p = float(gammaincc(0.5, stat / 2.0))
    return LogRankResult(stat, min(max(p, 0.0), 1.0), observed, expected, variance)
