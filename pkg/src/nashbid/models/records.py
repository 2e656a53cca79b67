"""Records emitted by the trainers and evaluators."""

from typing import Annotated

from pydantic import BaseModel, ConfigDict, Field


class IterationRecord(BaseModel):
    """One outer iteration of a trainer (one JSONL line)."""

    model_config = ConfigDict(frozen=True)

    iter: int
    sw: Annotated[float, Field(description="Estimated social welfare of theta.")]
    lambda_bar: float
    lambdas: list[float]
    g_theta: Annotated[list[float], Field(description="Per-agent return estimates under theta.")]
    g_xstar: Annotated[list[float], Field(description="Per-agent comparator returns (x*, BR, ...).")]
    grad_norm_theta: float
    grad_norm_nu: float
    wall_ms: float

    def to_json_line(self) -> str:
        return self.model_dump_json()


class ExploitReport(BaseModel):
    """Epsilon-NE evaluation of a shared policy."""

    model_config = ConfigDict(frozen=True)

    best_response_returns: list[float]
    returns: list[float]
    returns_stderr: list[float] = Field(default_factory=list)
    social_welfare: float
    revenue: float = 0.0
    normalized_gaps: list[float]
    max_exploitability: float
    epsilon_norm: float
    compliant: bool
    br_iters: int = 0
    br_episodes: int = 0

    @property
    def argmax_agent(self) -> int:
        return max(range(len(self.normalized_gaps)), key=self.normalized_gaps.__getitem__)


class UnifiedRatioReport(BaseModel):
    """Return of the unified solution against per-agent best responses."""

    model_config = ConfigDict(frozen=True)

    unified_returns: list[float]
    best_response_returns: list[float]
    ratios: list[float]


class CheckResult(BaseModel):
    """Outcome of one oracle validation check."""

    model_config = ConfigDict(frozen=True)

    name: str
    passed: bool
    error: Annotated[float, Field(description="Largest error measured by the check.")]
    tolerance: float
    cases: int = 1
    detail: str = ""


class OracleReport(BaseModel):
    """All oracle validation checks of a tiny market."""

    model_config = ConfigDict(frozen=True)

    checks: list[CheckResult]

    @property
    def passed(self) -> bool:
        return all(check.passed for check in self.checks)

    @property
    def failures(self) -> list[str]:
        return [check.name for check in self.checks if not check.passed]


class RunSummary(BaseModel):
    """Headline numbers of one (method, epsilon, seed) run, one line of ``runs.jsonl``."""

    model_config = ConfigDict(frozen=True)

    method: str
    epsilon: float
    seed: int
    social_welfare: float
    max_exploitability: float
    revenue: float
    compliant: bool
    iterations: int
    run_dir: Annotated[str, Field(description="Run folder relative to the sweep folder.")]
