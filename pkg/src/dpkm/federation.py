"""In-process simulation of the one-shot federated protocol.

A cohort is split across sites, each site releases a single private curve,
and the coordinator either averages the releases or rebuilds record-level
surrogates from them and refits a central Kaplan-Meier curve.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import FitError, ParameterError, ReleaseError
from .mechanisms import (
    NoiseSource,
    PrivacyBudget,
    SmootherKind,
    TVParams,
    laplace_scale,
    project_values,
    smooth,
)
from .survival import SurvivalCurve, SurvivalDataset, TimeGrid, kaplan_meier


class PartitionScheme(str, enum.Enum):
    UNIFORM = "uniform"
    SKEW_60_20_20 = "60-20-20"
    SKEW_90_5_5 = "90-5-5"

    @property
    def weights(self) -> tuple[float, ...]:
        return _WEIGHTS[self]

    @property
    def num_nodes(self) -> int:
        return len(self.weights)

    def __str__(self) -> str:
        return self.value


_WEIGHTS = {
    PartitionScheme.UNIFORM: (1 / 3, 1 / 3, 1 / 3),
    PartitionScheme.SKEW_60_20_20: (0.6, 0.2, 0.2),
    PartitionScheme.SKEW_90_5_5: (0.9, 0.05, 0.05),
}


class AggregationMode(str, enum.Enum):
    AVERAGE = "average"
    POOLED = "pooled"

    def __str__(self) -> str:
        return self.value


@dataclass(frozen=True)
class NodeAssignment:
    shards: tuple[SurvivalDataset, ...]

    @property
    def sizes(self) -> tuple[int, ...]:
        return tuple(len(s) for s in self.shards)

    def __len__(self) -> int:
        return len(self.shards)


@dataclass(frozen=True, eq=False)
class SurrogateDataset(SurvivalDataset):
    """Synthetic records rebuilt from one node's private curve."""

    node_id: int | None = None
    smoother: str | None = None
    epsilon: float | None = None


def shard_sizes(n: int, weights: Sequence[float]) -> list[int]:
    """floor(w_i * n) per node; the leftover goes to the largest node."""
    w = np.asarray(weights, dtype=float)
    sizes = np.floor(w * n + 1e-9).astype(int)
    sizes[int(np.argmax(w))] += n - int(sizes.sum())
    return sizes.tolist()


def partition(cohort: SurvivalDataset, scheme: PartitionScheme, rng: NoiseSource) -> NodeAssignment:
    scheme = PartitionScheme(scheme)
    n = len(cohort)
    if n < scheme.num_nodes:
        raise ParameterError(f"cohort of {n} records cannot feed {scheme.num_nodes} nodes")
    sizes = shard_sizes(n, scheme.weights)
    if min(sizes) < 1:
        raise ParameterError(f"scheme {scheme} leaves a node empty at n={n}: {sizes}")
    perm = rng.permutation(n)
    bounds = np.cumsum(sizes)[:-1]
    return NodeAssignment(tuple(cohort.subset(idx) for idx in np.split(perm, bounds)))


def node_release(
    shard: SurvivalDataset,
    grid: TimeGrid,
    kind: SmootherKind,
    budget: PrivacyBudget,
    tv_params: TVParams | None,
    rng: NoiseSource,
    node_id: int = 0,
) -> SurvivalCurve:
    """Local KM followed by exactly one smoother call at ``b = M / (K eps)``."""
    if len(shard) == 0:
        raise ReleaseError(node_id, "empty shard")
    local = kaplan_meier(shard, grid)
    b = laplace_scale(budget, grid.K)
    try:
        return smooth(kind, local, b, rng, n=len(shard), tv_params=tv_params)
    except FitError as exc:
        raise ReleaseError(node_id, exc) from exc


def aggregate_average(curves: Sequence[SurvivalCurve]) -> SurvivalCurve:
    if not curves:
        raise ParameterError("nothing to aggregate")
    grid = curves[0].grid
    if any(c.grid != grid for c in curves[1:]):
        raise ParameterError("all released curves must share one grid")
    mean = np.mean([c.values for c in curves], axis=0)
    return SurvivalCurve(grid, project_values(mean))


def _event_counts_rounded(mass_cum: np.ndarray) -> np.ndarray:
    # round-half-up of the cumulative event mass; monotone, so counts >= 0
    cum = np.floor(mass_cum + 0.5).astype(np.int64)
    return np.diff(np.concatenate([[0], cum]))


def generate_surrogate(
    dp_curve: SurvivalCurve,
    n_i: int,
    rng: NoiseSource | None = None,
    *,
    method: str = "round",
    node_id: int | None = None,
    smoother: str | None = None,
    epsilon: float | None = None,
) -> SurrogateDataset:
    """Rebuild ``n_i`` records whose KM curve tracks ``dp_curve``.

    Events for interval ``(t_{j-1}, t_j]`` are placed at ``t_j``; whatever
    survival mass is left at ``t_K`` becomes censored records at ``t_K``.

    ``method="round"`` (default) is deterministic: the cumulative event count
    up to ``t_j`` is ``round(n_i * (1 - S(t_j)))``, which keeps every partial
    sum within half a record of its target. ``method="multinomial"`` samples
    the counts from ``rng`` instead.
    """
    if n_i < 1:
        raise ParameterError(f"surrogate size must be positive, got {n_i}")
    s = project_values(dp_curve.values)
    grid = dp_curve.grid
    if method == "round":
        events = _event_counts_rounded(n_i * (1.0 - s))
    elif method == "multinomial":
        if rng is None:
            raise ParameterError("multinomial surrogates need a noise source")
        prev = np.concatenate([[1.0], s[:-1]])
        probs = np.append(prev - s, s[-1])
        probs = np.clip(probs, 0.0, None)
        counts = rng.multinomial(n_i, probs / probs.sum())
        events = counts[:-1]
    else:
        raise ParameterError(f"unknown surrogate method {method!r}")
    censored = n_i - int(events.sum())
    times = np.concatenate([np.repeat(grid.points, events), np.full(censored, grid.points[-1])])
    flags = np.concatenate([np.ones(int(events.sum()), bool), np.zeros(censored, bool)])
    return SurrogateDataset(
        times, flags, node_id=node_id, smoother=smoother, epsilon=epsilon
    )


def pooled_fed_curve(surrogates: Sequence[SurvivalDataset], grid: TimeGrid) -> SurvivalCurve:
    if not surrogates:
        raise ParameterError("no surrogate datasets to pool")
    return kaplan_meier(SurvivalDataset.concat(surrogates), grid)
