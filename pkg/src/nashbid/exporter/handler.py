"""Exporter base class."""

from abc import ABC, abstractmethod
from collections.abc import Iterable, Iterator
from pathlib import Path
from typing import Any

from loguru import logger
from pydantic import BaseModel

from ..config import write_resolved_config
from ..models import ExperimentConfig


class BaseExporter(ABC):
    """Shared plumbing of the classes that write results to a run folder.

    Note
    ----
    This class is meant to be used for developing new exporters. Do not use it directly.

    Attributes
    ----------
    config:
        Resolved experiment configuration.
    output_folder:
        Run folder every file is written to.

    Methods
    -------
    run()
        Write the exporter outputs.
    write_config()
        Write ``resolved_config.yaml``.
    write_json(model, fname)
        Dump a pydantic model as indented JSON.
    """

    def __init__(self, config: ExperimentConfig, output_folder: Path | str) -> None:
        self.config = config
        self.output_folder = Path(output_folder)
        self.output_folder.mkdir(parents=True, exist_ok=True)

    @abstractmethod
    def run(self, *args, **kwargs) -> "BaseExporter":
        """Write the exporter outputs.

        This method needs to be implemented by every exporter.
        """

    def write_config(self) -> Path:
        return write_resolved_config(self.config, self.output_folder)

    def write_json(self, model: BaseModel, fname: str) -> Path:
        fpath = self.output_folder / fname
        fpath.write_text(model.model_dump_json(indent=2))
        logger.trace("Wrote {}", fpath)
        return fpath


def append_jsonl(fpath: Path | str, models: Iterable[BaseModel]) -> None:
    """Append one JSON line per model."""
    with open(fpath, "a") as f:
        for model in models:
            f.write(model.model_dump_json() + "\n")


def read_jsonl(fpath: Path | str, model: type[BaseModel]) -> Iterator[Any]:
    """Parse every non-empty line of ``fpath`` into ``model``."""
    with open(fpath) as f:
        for line in f:
            if line.strip():
                yield model.model_validate_json(line)
