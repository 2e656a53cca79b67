"""nashbid logger configuration.

The CLI logs to stderr at a level picked by the number of ``-v`` flags. Every run also writes a debug log
to its own folder; records emitted inside :func:`run_log` carry the label of the run.
"""

import os
import sys
from collections.abc import Iterator
from contextlib import contextmanager
from pathlib import Path

from loguru import logger

DEFAULT_FORMAT = "<level>{level}</level>: {message}"
RUN_FORMAT = "{time:YYYY-MM-DD HH:mm:ss.SSS} | {level: <8} | {name}:{line} | {message}\n{exception}"
VERBOSITY_LEVELS = ("SUCCESS", "INFO", "DEBUG", "TRACE")


class Formatter:
    """Aligns the source location column and shows the run label when one is bound."""

    def __init__(self):
        self.padding = 0

    def format(self, record) -> str:  # noqa: D102
        location = "{name}:{line}".format(**record)
        self.padding = max(self.padding, len(location))
        record["extra"]["padding"] = " " * (self.padding - len(location))
        run = "<magenta>{extra[run]}</magenta> | " if "run" in record["extra"] else ""
        return (
            "<green>{time:HH:mm:ss}</green> | <level>{level: <8}</level>| "
            "<cyan>{name}:{line}{extra[padding]}</cyan> | " + run + "{message}\n{exception}"
        )


def verbosity_level(verbosity: int) -> str:
    """Level of the stderr sink. ``LOGURU_LEVEL`` wins over the ``-v`` count."""
    if env_level := os.environ.get("LOGURU_LEVEL"):
        return env_level
    return VERBOSITY_LEVELS[min(max(verbosity, 0), len(VERBOSITY_LEVELS) - 1)]


def setup_logging(verbosity: int = 0) -> None:
    """Replace every loguru sink with a stderr sink for the CLI.

    Parameters
    ----------
    verbosity : int
        Number of ``-v`` flags passed to the CLI.
    """
    level = verbosity_level(verbosity)
    logger.remove()
    logger.enable("nashbid")
    logger.add(
        sys.stderr,
        level=level,
        enqueue=False,
        format=Formatter().format if level in ("DEBUG", "TRACE") else DEFAULT_FORMAT,
    )


@contextmanager
def run_log(fpath: Path | str, run: str) -> Iterator[None]:
    """Tag records with ``run`` and copy the ones at DEBUG and above to ``fpath``."""
    sink = logger.add(
        fpath,
        level="DEBUG",
        enqueue=False,
        format=RUN_FORMAT,
        filter=lambda record: record["extra"].get("run") == run,
    )
    try:
        with logger.contextualize(run=run):
            yield
    finally:
        logger.remove(sink)
