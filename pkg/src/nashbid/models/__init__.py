# Models
# ruff: noqa
from .market import MarketConfig, ValueModel
from .train import TrainConfig
from .records import (
    CheckResult,
    ExploitReport,
    IterationRecord,
    OracleReport,
    RunSummary,
    UnifiedRatioReport,
)
from .experiment import ExperimentConfig
