"""Monte-Carlo harness and metrics for the factorial study.

One repetition is ``partition -> M node releases -> surrogates -> fed curve
-> MAE and log-rank against the centralized cohort``. A study sweeps every
(scheme, smoother, epsilon) cell ``R`` times and reduces the repetitions to
a :class:`MetricsReport`.
"""

from __future__ import annotations

import json
import math
import struct
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np
from scipy.stats import rankdata

from ._io import atomic_write_text, csv_text
from .errors import ParameterError, ReleaseError
from .federation import (
    AggregationMode,
    PartitionScheme,
    aggregate_average,
    generate_surrogate,
    node_release,
    partition,
    pooled_fed_curve,
)
from .mechanisms import NoiseSource, PrivacyBudget, SmootherKind, TVParams
from .survival import (
    SurvivalCurve,
    SurvivalDataset,
    TimeGrid,
    build_grid,
    kaplan_meier,
    log_rank_test,
)

DEFAULT_EPSILONS = (0.1, 0.5, 1.0, 2.0, 5.0)
DEFAULT_SEED = 20250601
Z_95 = 1.96
_MASK64 = (1 << 64) - 1

_SCHEME_CODE = {s: i for i, s in enumerate(PartitionScheme)}
_SMOOTHER_CODE = {k: i for i, k in enumerate(SmootherKind)}


def _splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK64
    return x ^ (x >> 31)


def mix_seed(*parts: int) -> int:
    """Order-sensitive 64-bit hash: fold each part through splitmix64."""
    h = 0
    for p in parts:
        h = _splitmix64(h ^ (int(p) & _MASK64))
    return h


def _float_bits(x: float) -> int:
    return struct.unpack("<Q", struct.pack("<d", float(x)))[0]


def repetition_seed(master_seed: int, scheme, smoother, epsilon: float, rep: int) -> int:
    return mix_seed(
        master_seed,
        _SCHEME_CODE[PartitionScheme(scheme)],
        _SMOOTHER_CODE[SmootherKind(smoother)],
        _float_bits(epsilon),
        rep,
    )


@dataclass(frozen=True)
class ExperimentConfig:
    schemes: tuple[PartitionScheme, ...] = tuple(PartitionScheme)
    smoothers: tuple[SmootherKind, ...] = tuple(SmootherKind)
    epsilons: tuple[float, ...] = DEFAULT_EPSILONS
    repetitions: int = 100
    master_seed: int = DEFAULT_SEED
    rho: float = 0.40
    k_max: int = 100
    tv: TVParams = field(default_factory=TVParams)
    aggregation: AggregationMode = AggregationMode.AVERAGE
    surrogate_method: str = "round"
    alpha: float = 0.05

    def __post_init__(self):
        object.__setattr__(self, "schemes", tuple(PartitionScheme(s) for s in self.schemes))
        object.__setattr__(self, "smoothers", tuple(SmootherKind(k) for k in self.smoothers))
        object.__setattr__(self, "epsilons", tuple(float(e) for e in self.epsilons))
        object.__setattr__(self, "aggregation", AggregationMode(self.aggregation))
        if self.repetitions < 1:
            raise ParameterError("repetitions must be at least 1")
        if not self.schemes or not self.smoothers or not self.epsilons:
            raise ParameterError("schemes, smoothers and epsilons must be nonempty")
        if any(not (math.isfinite(e) and e > 0) for e in self.epsilons):
            raise ParameterError(f"epsilons must be positive: {self.epsilons}")
        if not (0 < self.rho <= 1):
            raise ParameterError(f"rho must lie in (0, 1], got {self.rho}")
        if self.k_max < 1:
            raise ParameterError("k_max must be positive")
        if self.surrogate_method not in ("round", "multinomial"):
            raise ParameterError(f"unknown surrogate method {self.surrogate_method!r}")
        if not (0 < self.alpha < 1):
            raise ParameterError("alpha must lie in (0, 1)")

    def cells(self):
        for scheme in self.schemes:
            for smoother in self.smoothers:
                for eps in self.epsilons:
                    yield scheme, smoother, eps

    def to_dict(self) -> dict:
        return {
            "schemes": [str(s) for s in self.schemes],
            "smoothers": [str(k) for k in self.smoothers],
            "epsilons": list(self.epsilons),
            "repetitions": self.repetitions,
            "master_seed": self.master_seed,
            "rho": self.rho,
            "k_max": self.k_max,
            "tv": {"lambda0": self.tv.lambda0, "n0": self.tv.n0, "alpha": self.tv.alpha},
            "aggregation": str(self.aggregation),
            "surrogate_method": self.surrogate_method,
            "alpha": self.alpha,
        }


@dataclass(frozen=True, eq=False)
class RepetitionResult:
    scheme: PartitionScheme
    smoother: SmootherKind
    epsilon: float
    rep: int
    seed: int
    fed_curve: SurvivalCurve | None
    mae: float
    logrank_stat: float
    logrank_p: float
    failed: bool = False
    error: str = ""
    releases: int = 0

    @property
    def key(self):
        return (_SCHEME_CODE[self.scheme], _SMOOTHER_CODE[self.smoother], self.epsilon, self.rep)


@dataclass(frozen=True, eq=False)
class CellSummary:
    mean_mae: float | None
    sem: float | None
    ci_low: float | None
    ci_high: float | None
    n_ok: int
    n_failed: int
    fp_rate: float | None
    band_lower: np.ndarray | None
    band_mean: np.ndarray | None
    band_upper: np.ndarray | None


@dataclass(eq=False)
class MetricsReport:
    config: ExperimentConfig
    grid: TimeGrid
    central: SurvivalCurve
    cells: dict
    best_eps: dict
    delta_mae: dict
    worst_delta_mae: dict
    avg_rank: dict | None
    repetitions: list

    def mean_mae_table(self) -> dict:
        return {k: c.mean_mae for k, c in self.cells.items() if c.mean_mae is not None}

    def to_dict(self) -> dict:
        def cell_key(k):
            return f"{k[0]}|{k[1]}|{k[2]!r}"

        return {
            "config": self.config.to_dict(),
            "grid": {"K": self.grid.K, "t_max": float(self.grid.points[-1])},
            "cells": {
                cell_key(k): {
                    "mean_mae": c.mean_mae,
                    "sem": c.sem,
                    "ci95": [c.ci_low, c.ci_high],
                    "n_ok": c.n_ok,
                    "n_failed": c.n_failed,
                    "fp_rate": c.fp_rate,
                }
                for k, c in self.cells.items()
            },
            "best_eps": {
                f"{s}|{m}": v for (s, m), v in self.best_eps.items()
            },
            "delta_mae": {cell_key(k): v for k, v in self.delta_mae.items()},
            "worst_delta_mae": {f"{s}|{m}": v for (s, m), v in self.worst_delta_mae.items()},
            "avg_rank": None if self.avg_rank is None else {str(k): v for k, v in self.avg_rank.items()},
        }


def mae(fed: SurvivalCurve, cent: SurvivalCurve) -> float:
    if fed.grid != cent.grid:
        raise ParameterError("MAE needs both curves on the same grid")
    return float(np.mean(np.abs(fed.values - cent.values)))


def delta_mae(mae_skewed: float, mae_uniform: float) -> float | None:
    """Imbalance penalty; ``None`` when the uniform MAE is zero."""
    if not mae_uniform > 0:
        return None
    return mae_skewed / mae_uniform


def avg_rank(mean_mae_table: Mapping[tuple, float]) -> dict:
    """Mean within-block rank of each smoother.

    Blocks are (scheme, epsilon); rank 1 is the lowest MAE and ties share
    the average of their positions. Every scheme x epsilon x smoother cell
    must be present.
    """
    schemes = sorted({k[0] for k in mean_mae_table}, key=str)
    smoothers = sorted({k[1] for k in mean_mae_table}, key=str)
    epsilons = sorted({k[2] for k in mean_mae_table})
    missing = [
        (s, m, e)
        for s in schemes
        for e in epsilons
        for m in smoothers
        if (s, m, e) not in mean_mae_table
        or mean_mae_table[s, m, e] is None
        or not math.isfinite(mean_mae_table[s, m, e])
    ]
    if missing:
        raise ParameterError(f"avg_rank: missing cells {missing}")
    totals = dict.fromkeys(smoothers, 0.0)
    n_blocks = 0
    for s in schemes:
        for e in epsilons:
            ranks = rankdata([mean_mae_table[s, m, e] for m in smoothers], method="average")
            for m, r in zip(smoothers, ranks):
                totals[m] += float(r)
            n_blocks += 1
    return {m: totals[m] / n_blocks for m in smoothers}


def fp_rate(p_values: Sequence[float], alpha: float = 0.05) -> float:
    p = np.asarray(p_values, dtype=float)
    if p.size == 0:
        raise ParameterError("fp_rate needs at least one p-value")
    return float(np.mean(p < alpha))


def confidence_band(curve_samples, lo: float = 2.5, hi: float = 97.5):
    """Pointwise empirical percentiles of ``R`` curves.

    Quantiles interpolate linearly between order statistics placed at
    plotting positions ``k / (R + 1)`` (Hyndman-Fan type 6); positions
    outside ``[1, R]`` clamp to the sample min/max.
    """
    arr = np.asarray(
        [c.values if isinstance(c, SurvivalCurve) else c for c in curve_samples], dtype=float
    )
    if arr.ndim != 2 or arr.shape[0] < 2:
        raise ParameterError("confidence_band needs at least two curves on one grid")
    lower = np.percentile(arr, lo, axis=0, method="weibull")
    upper = np.percentile(arr, hi, axis=0, method="weibull")
    return lower, upper


def central_reference(cohort: SurvivalDataset, config: ExperimentConfig):
    grid = build_grid(len(cohort), config.rho, config.k_max, cohort.t_max)
    return grid, kaplan_meier(cohort, grid)


def run_repetition(
    cohort: SurvivalDataset,
    config: ExperimentConfig,
    scheme: PartitionScheme,
    smoother: SmootherKind,
    epsilon: float,
    rep: int,
    *,
    reference: tuple[TimeGrid, SurvivalCurve] | None = None,
    noise_factory: Callable[[int], NoiseSource] = NoiseSource,
) -> RepetitionResult:
    scheme = PartitionScheme(scheme)
    smoother = SmootherKind(smoother)
    grid, central = reference if reference is not None else central_reference(cohort, config)
    seed = repetition_seed(config.master_seed, scheme, smoother, epsilon, rep)
    budget = PrivacyBudget(epsilon, scheme.num_nodes)

    shards = partition(cohort, scheme, noise_factory(mix_seed(seed, 0))).shards
    releases = []
    try:
        for i, shard in enumerate(shards):
            rng = noise_factory(mix_seed(seed, 1 + i))
            releases.append(node_release(shard, grid, smoother, budget, config.tv, rng, node_id=i))
    except ReleaseError as exc:
        return RepetitionResult(
            scheme, smoother, epsilon, rep, seed, None,
            math.nan, math.nan, math.nan, failed=True, error=str(exc), releases=len(releases),
        )

    surrogates = [
        generate_surrogate(
            curve,
            len(shard),
            noise_factory(mix_seed(seed, 101 + i)),
            method=config.surrogate_method,
            node_id=i,
            smoother=str(smoother),
            epsilon=epsilon,
        )
        for i, (curve, shard) in enumerate(zip(releases, shards))
    ]
    if config.aggregation is AggregationMode.AVERAGE:
        fed = aggregate_average(releases)
    else:
        fed = pooled_fed_curve(surrogates, grid)
    lr = log_rank_test(cohort, SurvivalDataset.concat(surrogates))
    return RepetitionResult(
        scheme, smoother, epsilon, rep, seed, fed,
        mae(fed, central), lr.statistic, lr.p_value, releases=len(releases),
    )


def _run_cell(args):
    cohort, config, reference, scheme, smoother, eps = args
    return [
        run_repetition(cohort, config, scheme, smoother, eps, r, reference=reference)
        for r in range(config.repetitions)
    ]


def summarize_cell(results: Sequence[RepetitionResult], alpha: float = 0.05) -> CellSummary:
    ok = [r for r in results if not r.failed]
    n_failed = len(results) - len(ok)
    if not ok:
        return CellSummary(None, None, None, None, 0, n_failed, None, None, None, None)
    maes = np.array([r.mae for r in ok])
    mean = float(maes.mean())
    if len(ok) >= 2:
        sem = float(maes.std(ddof=1) / math.sqrt(len(ok)))
        ci = (mean - Z_95 * sem, mean + Z_95 * sem)
    else:
        sem, ci = None, (None, None)
    curves = np.array([r.fed_curve.values for r in ok])
    band_mean = curves.mean(axis=0)
    if len(ok) >= 2:
        lower, upper = confidence_band(curves)
    else:
        lower, upper = curves[0].copy(), curves[0].copy()
    return CellSummary(
        mean, sem, ci[0], ci[1], len(ok), n_failed,
        fp_rate([r.logrank_p for r in ok], alpha), lower, band_mean, upper,
    )


def build_report(
    config: ExperimentConfig,
    reference: tuple[TimeGrid, SurvivalCurve],
    results: Iterable[RepetitionResult],
) -> MetricsReport:
    results = sorted(results, key=lambda r: r.key)
    by_cell: dict = {}
    for r in results:
        by_cell.setdefault((r.scheme, r.smoother, r.epsilon), []).append(r)
    cells = {c: summarize_cell(by_cell.get(c, []), config.alpha) for c in config.cells()}

    best_eps = {}
    for scheme in config.schemes:
        for smoother in config.smoothers:
            cands = [
                (cells[scheme, smoother, e].mean_mae, e)
                for e in config.epsilons
                if cells[scheme, smoother, e].mean_mae is not None
            ]
            if not cands:
                continue
            m, e = min(cands)
            c = cells[scheme, smoother, e]
            best_eps[scheme, smoother] = {
                "epsilon": e, "mae": m, "sem": c.sem, "ci95": [c.ci_low, c.ci_high],
            }

    deltas, worst = {}, {}
    if PartitionScheme.UNIFORM in config.schemes:
        for scheme in config.schemes:
            if scheme is PartitionScheme.UNIFORM:
                continue
            for smoother in config.smoothers:
                ratios = []
                for e in config.epsilons:
                    skew = cells[scheme, smoother, e].mean_mae
                    uni = cells[PartitionScheme.UNIFORM, smoother, e].mean_mae
                    d = None if skew is None or uni is None else delta_mae(skew, uni)
                    deltas[scheme, smoother, e] = d
                    if d is not None:
                        ratios.append(d)
                worst[scheme, smoother] = max(ratios) if ratios else None

    ranks = None
    if len(config.smoothers) > 1:
        try:
            ranks = avg_rank({k: c.mean_mae for k, c in cells.items()})
        except ParameterError:
            ranks = None

    grid, central = reference
    return MetricsReport(config, grid, central, cells, best_eps, deltas, worst, ranks, results)


def run_experiment(
    cohort: SurvivalDataset, config: ExperimentConfig, workers: int = 1
) -> MetricsReport:
    """Run every cell ``config.repetitions`` times and aggregate.

    ``workers > 1`` spreads cells over processes; the report does not depend
    on completion order.
    """
    reference = central_reference(cohort, config)
    jobs = [(cohort, config, reference, s, m, e) for s, m, e in config.cells()]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            chunks = list(pool.map(_run_cell, jobs))
    else:
        chunks = [_run_cell(j) for j in jobs]
    return build_report(config, reference, [r for chunk in chunks for r in chunk])


RESULT_COLUMNS = (
    "scheme", "smoother", "epsilon", "rep", "seed",
    "mae", "logrank_stat", "logrank_p", "failed_flag",
)


def _num(x):
    return None if x is None or (isinstance(x, float) and math.isnan(x)) else x


def results_csv(report: MetricsReport) -> str:
    rows = [
        (str(r.scheme), str(r.smoother), r.epsilon, r.rep, r.seed,
         _num(r.mae), _num(r.logrank_stat), _num(r.logrank_p), r.failed)
        for r in report.repetitions
    ]
    return csv_text(RESULT_COLUMNS, rows)


def band_csv(report: MetricsReport, cell) -> str:
    c = report.cells[cell]
    rows = []
    if c.band_mean is not None:
        for t, lo, mu, hi in zip(report.grid.points, c.band_lower, c.band_mean, c.band_upper):
            rows.append((float(t), float(lo), float(mu), float(hi)))
    return csv_text(("t", "lower", "mean", "upper"), rows)


def band_filename(cell) -> str:
    scheme, smoother, eps = cell
    return f"{scheme}_{smoother}_eps{eps!r}.csv"


def write_results(report: MetricsReport, out_dir) -> list[Path]:
    """Write ``results.csv``, ``summary.json`` and ``bands/<cell>.csv``."""
    out = Path(out_dir)
    paths = [
        atomic_write_text(out / "results.csv", results_csv(report)),
        atomic_write_text(
            out / "summary.json", json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n"
        ),
    ]
    for cell in report.cells:
        paths.append(atomic_write_text(out / "bands" / band_filename(cell), band_csv(report, cell)))
    return paths
