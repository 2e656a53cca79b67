"""SVG figures of a finished sweep."""

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import polars as pl  # noqa: E402
from loguru import logger  # noqa: E402

from ..exceptions import ConfigError  # noqa: E402
from ..models import ExperimentConfig, IterationRecord, RunSummary  # noqa: E402
from .handler import BaseExporter, read_jsonl  # noqa: E402
from .run import HISTORY_FNAME  # noqa: E402
from .summary import RUNS_FNAME, summarize_runs  # noqa: E402

SW_FNAME = "sw_vs_epsilon.svg"
EXPLOITABILITY_FNAME = "exploitability_vs_epsilon.svg"
CURVES_FNAME = "training_curves.svg"


def _errorbar_by_method(summary: pl.DataFrame, column: str, ylabel: str, fpath: Path) -> None:
    fig, ax = plt.subplots(figsize=(6, 4))
    for (method,), rows in summary.group_by(["method"], maintain_order=True):
        rows = rows.sort("epsilon")
        ax.errorbar(
            rows["epsilon"].to_list(),
            rows[f"{column}_mean"].to_list(),
            yerr=rows[f"{column}_std"].to_list(),
            marker="o",
            capsize=3,
            label=str(method),
        )
    if column == "max_exploitability":
        epsilons = sorted(summary["epsilon"].unique().to_list())
        ax.plot(epsilons, epsilons, linestyle="--", color="grey", label="epsilon")
    ax.set_xlabel("epsilon")
    ax.set_ylabel(ylabel)
    ax.legend()
    fig.tight_layout()
    fig.savefig(fpath, format="svg")
    plt.close(fig)


class ReportExporter(BaseExporter):
    """Renders social welfare and exploitability against epsilon plus the training curves of a sweep."""

    def run(self, sweep_folder: Path | str) -> "ReportExporter":
        sweep_folder = Path(sweep_folder)
        runs_fpath = sweep_folder / RUNS_FNAME
        if not runs_fpath.is_file():
            raise ConfigError(f"{sweep_folder} has no {RUNS_FNAME}, is it a sweep folder?")
        summary = summarize_runs(runs_fpath)
        _errorbar_by_method(summary, "social_welfare", "social welfare", self.output_folder / SW_FNAME)
        _errorbar_by_method(
            summary, "max_exploitability", "max exploitability", self.output_folder / EXPLOITABILITY_FNAME
        )
        self.training_curves(sweep_folder, list(read_jsonl(runs_fpath, RunSummary)))
        logger.info("Wrote figures to {}", self.output_folder)
        return self

    def training_curves(self, sweep_folder: Path, runs: list[RunSummary]) -> Path:
        fig, (ax_sw, ax_dual) = plt.subplots(1, 2, figsize=(12, 4))
        epsilons = sorted({run.epsilon for run in runs})
        cmap = plt.get_cmap("viridis")
        colors = {eps: cmap(k / max(len(epsilons) - 1, 1)) for k, eps in enumerate(epsilons)}
        labelled: set[tuple[str, float]] = set()
        for run in runs:
            history_fpath = sweep_folder / run.run_dir / HISTORY_FNAME
            if not history_fpath.is_file():
                logger.warning("Missing history for {}", run.run_dir)
                continue
            history = list(read_jsonl(history_fpath, IterationRecord))
            iters = [record.iter for record in history]
            key = (run.method, run.epsilon)
            label = None if key in labelled else f"{run.method} eps={run.epsilon:g}"
            labelled.add(key)
            style = "-" if run.method == "bpg" else "--"
            ax_sw.plot(iters, [r.sw for r in history], style, color=colors[run.epsilon], label=label)
            ax_dual.plot(iters, [r.lambda_bar for r in history], style, color=colors[run.epsilon])

        ax_sw.set_xlabel("iteration")
        ax_sw.set_ylabel("social welfare")
        ax_sw.legend(fontsize="small")
        ax_dual.set_xlabel("iteration")
        ax_dual.set_ylabel("lambda_bar")
        fig.tight_layout()
        fpath = self.output_folder / CURVES_FNAME
        fig.savefig(fpath, format="svg")
        plt.close(fig)
        return fpath
