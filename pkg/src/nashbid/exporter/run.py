"""Outputs of a single training run."""

from pathlib import Path

from loguru import logger

from ..bpg import TrainResult
from ..models import ExperimentConfig, ExploitReport, IterationRecord, RunSummary
from .handler import BaseExporter, append_jsonl

HISTORY_FNAME = "history.jsonl"
EXPLOIT_FNAME = "exploit.json"
THETA_FNAME = "theta.ncbp"
NU_FNAME = "nu.ncbp"
X_STAR_FNAME = "x_star.ncbp"
AGENT_FNAME = "agent_{}.ncbp"


class RunExporter(BaseExporter):
    """Writes the history, checkpoints and exploitability report of one run.

    The resolved config is written on construction. :meth:`record` is handed to a trainer as its
    ``on_iteration`` callback.
    """

    def __init__(self, config: ExperimentConfig, output_folder: Path | str) -> None:
        super().__init__(config, output_folder)
        self.history_fpath = self.output_folder / HISTORY_FNAME
        self.write_config()

    def record(self, record: IterationRecord) -> None:
        append_jsonl(self.history_fpath, [record])

    def write_checkpoints(self, result: TrainResult) -> list[Path]:
        written = [result.theta.save(self.output_folder / THETA_FNAME)]
        if result.nu is not None:
            written.append(result.nu.save(self.output_folder / NU_FNAME))
        if result.x_star is not None:
            written.append(result.x_star.save(self.output_folder / X_STAR_FNAME))
        for i, policy in enumerate(result.agent_policies):
            written.append(policy.save(self.output_folder / AGENT_FNAME.format(i)))
        logger.debug("Saved {} checkpoints to {}", len(written), self.output_folder)
        return written

    def summary(self, result: TrainResult, report: ExploitReport, run_dir: str) -> RunSummary:
        return RunSummary(
            method=str(self.config.method),
            epsilon=report.epsilon_norm,
            seed=self.config.train.seed,
            social_welfare=report.social_welfare,
            max_exploitability=report.max_exploitability,
            revenue=report.revenue,
            compliant=report.compliant,
            iterations=len(result.history),
            run_dir=run_dir,
        )

    def run(self, result: TrainResult, report: ExploitReport | None = None) -> "RunExporter":
        self.write_checkpoints(result)
        if report is not None:
            self.write_json(report, EXPLOIT_FNAME)
        return self
