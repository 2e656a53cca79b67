"""CLI helper functions."""

import argparse
import os

from .__version__ import __version__
from .enums import Method

DEFAULT_MC_EPISODES = 50_000


class Flags(argparse.Action):
    """Collect ``key=value`` pairs that override fields of the ``train`` config section.

    The pairs are saved as a dictionary in the ``feature_flags`` argument of the argparse Namespace.
    """

    def __call__(  # type: ignore
        self,
        parser: argparse.ArgumentParser,
        namespace: argparse.Namespace,
        values: list[str],
        optional_str: str,
    ) -> None:
        """Save flags as arguments in Namespace."""
        setattr(namespace, self.dest, dict())

        for value in values:
            key, sep, flag_value = value.partition("=")
            if not sep or not key:
                parser.error(f"Flag {value!r} is not of the form key=value")
            getattr(namespace, self.dest)[key] = flag_value


def _common_arguments() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--pdb", action="store_true", dest="pdb", help="Run with debugger enabled.")
    common.add_argument(
        "-o",
        "--output-dir",
        dest="output_dir",
        help="Root folder of the run directory. Overrides output_dir of the config.",
    )
    return common


def _experiment_arguments(command: argparse.ArgumentParser, config_required: bool = True) -> None:
    group = command.add_argument_group("Experiment")
    group.add_argument(
        "-c",
        "--config",
        dest="config",
        required=config_required,
        help="Experiment configuration file (YAML or JSON).",
    )
    group.add_argument("--seed", type=int, dest="seed", help="Run a single seed.")
    group.add_argument("--epsilon", type=float, dest="epsilon", help="Run a single normalized epsilon.")
    group.add_argument(
        "--flags", nargs="*", dest="feature_flags", action=Flags, help="Overrides of train fields, key=value."
    )


def _training_arguments(command: argparse.ArgumentParser) -> None:
    group = command.add_argument_group("Training")
    group.add_argument(
        "--method", dest="method", choices=[str(m) for m in Method], help="Trainer to run."
    )
    group.add_argument(
        "--deterministic",
        action="store_true",
        help="Single process with zeroed wall-clock fields, bit-reproducible histories.",
    )


def base_cli() -> argparse.ArgumentParser:
    """Create parser object for CLI."""
    parser = argparse.ArgumentParser(
        description="Train and evaluate bidding policies under an approximate Nash equilibrium constraint",
        add_help=True,
        prog="nashbid",
    )
    common = _common_arguments()
    subparsers = parser.add_subparsers(dest="command", help="Subcommands", required=True)

    train_command = subparsers.add_parser(
        "train", parents=[common], help="Train one method on one epsilon and seed."
    )
    _experiment_arguments(train_command)
    _training_arguments(train_command)

    sweep_command = subparsers.add_parser(
        "sweep", parents=[common], help="Train every epsilon and seed of the config and summarize."
    )
    _experiment_arguments(sweep_command)
    _training_arguments(sweep_command)
    sweep_command.add_argument(
        "--methods",
        nargs="+",
        dest="methods",
        choices=[str(m) for m in Method],
        help="Run the grid for several methods side by side.",
    )

    exploit_command = subparsers.add_parser(
        "exploit", parents=[common], help="Measure the exploitability of a trained run."
    )
    exploit_command.add_argument("run_folder", help="Folder of a finished train run.")
    exploit_command.add_argument("--seed", type=int, dest="seed", help="Seed of the evaluation.")
    exploit_command.add_argument("--epsilon", type=float, dest="epsilon", help="Tolerance to check against.")
    exploit_command.add_argument(
        "--exact", action="store_true", help="Use exact enumeration (enumerable markets only)."
    )
    exploit_command.add_argument(
        "--ratios", action="store_true", help="Also report the unified solution to best response ratios."
    )

    oracle_command = subparsers.add_parser(
        "oracle-check", parents=[common], help="Validate the simulator and estimators by exact enumeration."
    )
    _experiment_arguments(oracle_command, config_required=False)
    oracle_command.add_argument(
        "--exact-only", action="store_true", dest="exact_only", help="Skip the Monte Carlo comparisons."
    )
    oracle_command.add_argument(
        "--mc-episodes",
        type=int,
        dest="mc_episodes",
        default=DEFAULT_MC_EPISODES,
        help="Episodes of each Monte Carlo comparison.",
    )

    report_command = subparsers.add_parser(
        "report", parents=[common], help="Render the SVG figures of a sweep folder."
    )
    report_command.add_argument("sweep_folder", help="Folder written by the sweep command.")

    init_command = subparsers.add_parser("init", help="Copy a documented configuration file.")
    init_command.add_argument(
        "-o",
        nargs="?",
        dest="path",
        default=os.getcwd(),
        help="Destination folder where the file will be copied. Defaults to current directory.",
    )
    init_command.add_argument("--tiny", action="store_true", help="Copy the enumerable tiny market instead.")
    init_command.add_argument("--pdb", action="store_true", dest="pdb", help="Run with debugger enabled.")

    parser.add_argument("--verbose", "-v", action="count", default=0, help="Run with additional verbosity")
    parser.add_argument("--version", "-V", action="version", version=f"nashbid version: {__version__}")
    return parser
