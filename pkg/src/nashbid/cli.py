"""nashbid CLI.

This script contains the logic on how we call the different commands of nashbid from the CLI and how
their failures are turned into exit codes.
"""

import sys
import traceback
from collections.abc import Sequence

from loguru import logger

from .cli_functions import base_cli
from .enums import ExitCode
from .exceptions import (
    ConfigError,
    DualUpdateError,
    ExploitabilityError,
    GradientError,
    MarketError,
    OracleBoundError,
    PolicyError,
    RolloutError,
)
from .logger import setup_logging
from .runner import exploit, init, oracle_check, report, sweep, train

RUNTIME_ERRORS = (
    MarketError,
    PolicyError,
    RolloutError,
    GradientError,
    DualUpdateError,
    ExploitabilityError,
    OracleBoundError,
    OSError,
)


def main(argv: Sequence[str] | None = None) -> int:
    """Parse ``argv``, run the command and return its exit code."""
    parser = base_cli()
    args = parser.parse_args(argv)

    cli_args = {k: v for k, v in vars(args).items() if v is not None}
    setup_logging(verbosity=cli_args["verbose"])

    if cli_args.get("pdb"):
        import pdb

        try:
            return cli_commands(cli_args)
        except Exception:
            traceback.print_exc()
            pdb.post_mortem()
            return ExitCode.RUNTIME_ERROR

    try:
        return cli_commands(cli_args)
    except ConfigError as e:
        logger.error("Configuration error: {}", e)
        return ExitCode.CONFIG_ERROR
    except RUNTIME_ERRORS as e:
        logger.error("{}: {}", type(e).__name__, e)
        return ExitCode.RUNTIME_ERROR


def cli() -> None:
    """CLI main entry point for nashbid."""
    sys.exit(int(main()))


def cli_commands(cli_args: dict) -> ExitCode:
    """Dispatch the parsed arguments to the command they name.

    Parameters
    ----------
    cli_args
        Parsed CLI arguments with ``None`` values removed.

    Returns
    -------
    ExitCode
        Exit code of the command.
    """
    match cli_args["command"]:
        case "train":
            return train(cli_args)
        case "sweep":
            return sweep(cli_args)
        case "exploit":
            return exploit(cli_args)
        case "oracle-check":
            return oracle_check(cli_args)
        case "report":
            return report(cli_args)
        case "init":
            return init(cli_args)
        case _:
            raise NotImplementedError
