"""Sweep outputs: per-run lines and the aggregated summary table."""

from collections.abc import Sequence
from pathlib import Path

import polars as pl
from loguru import logger

from ..exploitability import compliance_rate
from ..models import ExperimentConfig, RunSummary
from .handler import BaseExporter, append_jsonl

RUNS_FNAME = "runs.jsonl"
SUMMARY_FNAME = "summary.csv"
SUMMARY_COLUMNS = [
    "method",
    "epsilon",
    "social_welfare_mean",
    "social_welfare_std",
    "max_exploitability_mean",
    "max_exploitability_std",
    "compliance_rate",
    "revenue_mean",
    "revenue_std",
    "n_runs",
]


def summarize_runs(runs_fpath: Path | str) -> pl.DataFrame:
    """Aggregate ``runs.jsonl`` per method and epsilon.

    Standard deviations are sample deviations (``ddof=1``) and 0 for a single run.
    """
    runs = pl.read_ndjson(runs_fpath)
    stats = []
    for column in ("social_welfare", "max_exploitability", "revenue"):
        stats.append(pl.col(column).mean().alias(f"{column}_mean"))
        stats.append(pl.col(column).std(ddof=1).fill_null(0.0).alias(f"{column}_std"))
    summary = (
        runs.group_by(["method", "epsilon"])
        .agg(
            *stats,
            pl.col("max_exploitability").alias("gaps"),
            pl.len().cast(pl.Int64).alias("n_runs"),
        )
        .sort(["method", "epsilon"])
    )
    rates = [
        compliance_rate(gaps, epsilon)
        for gaps, epsilon in zip(summary["gaps"].to_list(), summary["epsilon"].to_list(), strict=True)
    ]
    return summary.with_columns(pl.Series("compliance_rate", rates, dtype=pl.Float64)).select(
        SUMMARY_COLUMNS
    )


class SweepExporter(BaseExporter):
    """Writes ``runs.jsonl`` and the ``summary.csv`` derived from it."""

    def __init__(self, config: ExperimentConfig, output_folder: Path | str) -> None:
        super().__init__(config, output_folder)
        self.runs_fpath = self.output_folder / RUNS_FNAME
        self.summary_fpath = self.output_folder / SUMMARY_FNAME

    def run(self, runs: Sequence[RunSummary]) -> "SweepExporter":
        self.write_config()
        self.runs_fpath.write_text("")
        append_jsonl(self.runs_fpath, runs)
        summary = summarize_runs(self.runs_fpath)
        summary.write_csv(self.summary_fpath)
        logger.info("Wrote {} summary rows to {}", summary.height, self.summary_fpath)
        return self
