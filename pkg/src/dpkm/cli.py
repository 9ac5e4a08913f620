"""Command-line entry point: ingest a survival CSV, run the study, export tables.

Example::

    dpkm --repetitions 1 --epsilons 5 --schemes uniform --smoothers dct --out /tmp/run
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import sys
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

from ._io import atomic_write_text, csv_text
from .errors import DPKMError, IngestionError, ParameterError
from .experiments import (
    DEFAULT_EPSILONS,
    DEFAULT_SEED,
    ExperimentConfig,
    MetricsReport,
    run_experiment,
    write_results,
)
from .federation import AggregationMode, PartitionScheme
from .mechanisms import SmootherKind, TVParams
from .survival import SurvivalDataset

log = logging.getLogger("dpkm")

OUTPUT_DIR_ENV = "DPKM_OUTPUT_DIR"
_MISSING = {"", "na", "nan", "none", "null"}


@dataclass
class IngestionSummary:
    n_rows: int
    n: int
    events: int
    censored: int
    t_max: float | None
    rejected_rows: list = field(default_factory=list)

    @property
    def n_rejected(self) -> int:
        return len(self.rejected_rows)


def bundled_lung_csv() -> Path:
    """NCCTG lung-cancer cohort shipped with the package (status 1 = censored, 2 = dead)."""
    return Path(str(resources.files("dpkm") / "data" / "lung.csv"))


def ingest_csv(
    path,
    time_column: str = "time",
    status_column: str = "status",
    status_event_value: int = 2,
    declared_statuses=(1, 2),
) -> tuple[SurvivalDataset, IngestionSummary]:
    """Read right-censored records from a comma-separated file with a header.

    Rows whose time is missing are skipped and listed in the summary; any
    other malformed row raises :class:`IngestionError` naming its line.
    """
    path = Path(path)
    declared = {int(s) for s in declared_statuses} | {int(status_event_value)}
    if not path.is_file():
        raise IngestionError(f"{path}: no such file")
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        for col in (time_column, status_column):
            if col not in header:
                raise IngestionError(f"{path}: column {col!r} not found in header {header}")
        times, events, rejected = [], [], []
        n_rows = 0
        for row in reader:
            n_rows += 1
            line = reader.line_num
            raw_t = (row[time_column] or "").strip()
            if raw_t.lower() in _MISSING:
                rejected.append(line)
                continue
            try:
                t = float(raw_t)
            except ValueError:
                raise IngestionError(f"{path}: line {line}: unparseable time {raw_t!r}") from None
            if not math.isfinite(t) or t < 0:
                raise IngestionError(f"{path}: line {line}: invalid time {t}")
            raw_s = (row[status_column] or "").strip()
            try:
                s_float = float(raw_s)
            except ValueError:
                raise IngestionError(f"{path}: line {line}: unparseable status {raw_s!r}") from None
            if not s_float.is_integer() or int(s_float) not in declared:
                raise IngestionError(
                    f"{path}: line {line}: status {raw_s!r} not in declared values {sorted(declared)}"
                )
            times.append(t)
            events.append(int(s_float) == status_event_value)
    data = SurvivalDataset(times, events)
    summary = IngestionSummary(
        n_rows=n_rows,
        n=len(data),
        events=data.n_events,
        censored=len(data) - data.n_events,
        t_max=data.t_max if len(data) else None,
        rejected_rows=rejected,
    )
    return data, summary


def export_curve_plot_data(report: MetricsReport, out_dir) -> list[Path]:
    """One file per (scheme, smoother) with (t, epsilon, mean, lower, upper) rows,
    plus ``centralized.csv`` holding the non-private benchmark."""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise IngestionError(f"cannot create {out}: {exc}") from exc
    cfg = report.config
    grid = report.grid.points
    paths = []
    for scheme in cfg.schemes:
        for smoother in cfg.smoothers:
            rows = []
            for eps in cfg.epsilons:
                c = report.cells[scheme, smoother, eps]
                if c.band_mean is None:
                    continue
                for j, t in enumerate(grid):
                    rows.append((float(t), eps, float(c.band_mean[j]),
                                 float(c.band_lower[j]), float(c.band_upper[j])))
            text = csv_text(("t", "epsilon", "mean", "lower", "upper"), rows)
            paths.append(atomic_write_text(out / f"{scheme}_{smoother}.csv", text))
    bench = [(float(t), float(s)) for t, s in zip(grid, report.central.values)]
    paths.append(atomic_write_text(out / "centralized.csv", csv_text(("t", "s_cent"), bench)))
    return paths


def _f(x, pattern=".5f"):
    return "-" if x is None else format(x, pattern)


def summary_tables(report: MetricsReport) -> str:
    """Plain-text rendering of the best-eps, imbalance, rank and FP tables."""
    cfg = report.config
    out = [f"grid: K={report.grid.K}, t_max={report.grid.points[-1]:g}", ""]

    out.append("Best epsilon (minimum mean MAE across epsilon)")
    out.append(f"{'partition':<10} {'method':<8} {'eps*':>5} {'MAE':>9} {'SEM':>9}  95% CI")
    for (scheme, smoother), b in report.best_eps.items():
        lo, hi = b["ci95"]
        out.append(
            f"{scheme!s:<10} {smoother!s:<8} {b['epsilon']:>5g} {_f(b['mae']):>9} "
            f"{_f(b['sem']):>9}  [{_f(lo)}, {_f(hi)}]"
        )
    out.append("")

    skewed = [s for s in cfg.schemes if s is not PartitionScheme.UNIFORM]
    if skewed and report.worst_delta_mae:
        out.append("Worst-case imbalance penalty (max over epsilon of MAE_skew / MAE_uniform)")
        out.append(f"{'method':<8} " + " ".join(f"{str(s):>9}" for s in skewed))
        for smoother in cfg.smoothers:
            vals = [report.worst_delta_mae.get((s, smoother)) for s in skewed]
            out.append(f"{smoother!s:<8} " + " ".join(f"{_f(v, '.2f'):>9}" for v in vals))
        out.append("")

    if report.avg_rank:
        out.append("Average rank (1 = best)")
        for smoother, r in sorted(report.avg_rank.items(), key=lambda kv: kv[1]):
            out.append(f"{smoother!s:<8} {r:.2f}")
        out.append("")

    out.append(f"Log-rank FP-rate (p < {cfg.alpha:g})")
    out.append(f"{'method':<8} {'eps':>5} " + " ".join(f"{str(s):>9}" for s in cfg.schemes))
    for smoother in cfg.smoothers:
        for eps in cfg.epsilons:
            vals = [report.cells[s, smoother, eps].fp_rate for s in cfg.schemes]
            out.append(
                f"{smoother!s:<8} {eps:>5g} " + " ".join(f"{_f(v, '.2f'):>9}" for v in vals)
            )
    failed = sum(c.n_failed for c in report.cells.values())
    out.append("")
    out.append(f"failed repetitions: {failed}")
    return "\n".join(out) + "\n"


def _csv_list(kind):
    def parse(text):
        items = [t.strip() for t in text.split(",") if t.strip()]
        if not items:
            raise argparse.ArgumentTypeError("empty list")
        try:
            return [kind(t) for t in items]
        except ValueError as exc:
            raise argparse.ArgumentTypeError(str(exc)) from None

    return parse


def build_parser() -> argparse.ArgumentParser:
    d = ExperimentConfig()
    p = argparse.ArgumentParser(
        prog="dpkm",
        description="Federated Kaplan-Meier curves under node-level differential privacy.",
    )
    data = p.add_argument_group("input")
    data.add_argument("--data", type=Path, default=None,
                      help="survival CSV (default: bundled NCCTG lung cohort)")
    data.add_argument("--time-column", default="time")
    data.add_argument("--status-column", default="status")
    data.add_argument("--status-event-value", type=int, default=2)
    data.add_argument("--status-values", type=_csv_list(int), default=[1, 2],
                      help="all legal status codes (default: 1,2)")

    run = p.add_argument_group("study")
    run.add_argument("--out", type=Path, default=None,
                     help=f"output directory (default: ${OUTPUT_DIR_ENV} or ./dpkm-results)")
    run.add_argument("--seed", type=int, default=DEFAULT_SEED)
    run.add_argument("--repetitions", type=int, default=d.repetitions)
    run.add_argument("--epsilons", type=_csv_list(float), default=list(DEFAULT_EPSILONS))
    run.add_argument("--schemes", type=_csv_list(PartitionScheme),
                     default=list(PartitionScheme), help="uniform,60-20-20,90-5-5")
    run.add_argument("--smoothers", type=_csv_list(SmootherKind),
                     default=list(SmootherKind), help="dct,wavelet,tv,weibull")
    run.add_argument("--rho", type=float, default=d.rho)
    run.add_argument("--k-max", type=int, default=d.k_max)
    run.add_argument("--lambda0", type=float, default=d.tv.lambda0)
    run.add_argument("--n0", type=int, default=d.tv.n0)
    run.add_argument("--alpha", type=float, default=d.tv.alpha, help="TV size exponent")
    run.add_argument("--fp-alpha", type=float, default=d.alpha,
                     help="log-rank significance level")
    run.add_argument("--aggregation", type=AggregationMode, default=d.aggregation,
                     choices=list(AggregationMode))
    run.add_argument("--surrogate", default=d.surrogate_method, choices=["round", "multinomial"])
    run.add_argument("--workers", type=int, default=1)
    run.add_argument("--print-config", action="store_true",
                     help="print the effective configuration as JSON and exit")
    run.add_argument("-v", "--verbose", action="store_true")
    return p


def config_from_args(args) -> ExperimentConfig:
    return ExperimentConfig(
        schemes=tuple(args.schemes),
        smoothers=tuple(args.smoothers),
        epsilons=tuple(args.epsilons),
        repetitions=args.repetitions,
        master_seed=args.seed,
        rho=args.rho,
        k_max=args.k_max,
        tv=TVParams(args.lambda0, args.n0, args.alpha),
        aggregation=args.aggregation,
        surrogate_method=args.surrogate,
        alpha=args.fp_alpha,
    )


def run_command(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        config = config_from_args(args)
        if args.workers < 1:
            raise ParameterError("--workers must be at least 1")
    except DPKMError as exc:
        print(f"dpkm: invalid configuration: {exc}", file=sys.stderr)
        return 2

    data_path = args.data or bundled_lung_csv()
    if args.print_config:
        doc = {"data": str(data_path), "time_column": args.time_column,
               "status_column": args.status_column,
               "status_event_value": args.status_event_value, **config.to_dict()}
        print(json.dumps(doc, indent=2))
        return 0

    out_dir = args.out or Path(os.environ.get(OUTPUT_DIR_ENV, "dpkm-results"))
    try:
        cohort, info = ingest_csv(
            data_path, args.time_column, args.status_column,
            args.status_event_value, args.status_values,
        )
        log.info("ingested %s: n=%d events=%d censored=%d t_max=%s rejected=%d",
                 data_path, info.n, info.events, info.censored, info.t_max, info.n_rejected)
        report = run_experiment(cohort, config, workers=args.workers)
        write_results(report, out_dir)
        export_curve_plot_data(report, out_dir / "plot")
        atomic_write_text(out_dir / "summary.txt", summary_tables(report))
    except (DPKMError, OSError) as exc:
        print(f"dpkm: {exc}", file=sys.stderr)
        return 1
    print(summary_tables(report), end="")
    return 0


def main() -> None:
    sys.exit(run_command())


if __name__ == "__main__":
    main()
