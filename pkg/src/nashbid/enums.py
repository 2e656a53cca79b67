"""Definition of enums used on nashbid.

Most of the enums are `StrEnums` so they can be written to the config and CSV outputs as is.
"""

from enum import IntEnum, StrEnum


class Method(StrEnum):
    """Training method selected for an experiment."""

    BPG = "bpg"
    BPG_ZERO = "bpg_zero"
    FULLY_COOPERATIVE = "fully_cooperative"
    INDEPENDENT = "independent"


class BaselineKind(StrEnum):
    """Ablation and comparison baselines."""

    BPG_ZERO = "bpg_zero"
    FULLY_COOPERATIVE = "fully_cooperative"
    INDEPENDENT = "independent"


class RolloutMode(StrEnum):
    """How policies are assigned to agents during an episode."""

    SHARED = "shared"
    FOCAL = "focal"
    WEIGHTED = "weighted"
    MIXED = "mixed"


class ExitCode(IntEnum):
    """Process exit codes of the CLI."""

    OK = 0
    CONFIG_ERROR = 2
    RUNTIME_ERROR = 3
    ORACLE_FAILED = 4


class GradientTerm(StrEnum):
    """Policy-gradient terms estimated from rollouts."""

    L1 = "l1"
    LS = "ls"
    LG_PRIME = "lg_prime"
    LW_STAR = "lw_star"
