"""Experiment configuration."""

from pathlib import Path
from typing import Annotated

import rich
from pydantic import BaseModel, ConfigDict, Field
from rich.table import Table

from ..__version__ import __config_version__
from ..enums import Method
from .market import MarketConfig
from .train import TrainConfig

DEFAULT_OUTPUT_DIR = "nashbid_output"
EpsilonNorm = Annotated[float, Field(ge=0.0, le=1.0)]


class ExperimentConfig(BaseModel):
    """A market, the training hyper-parameters and the grid of runs to execute.

    ``train.epsilon_norm`` and ``train.seed`` are the values of a single run; a sweep replaces them
    with every combination of ``epsilon_list`` and ``seeds``.
    """

    model_config = ConfigDict(extra="forbid", frozen=True)

    version: Annotated[str, Field(description="Config format version.")] = __config_version__
    method: Annotated[Method, Field(description="Trainer used by train and sweep.")] = Method.BPG
    market: MarketConfig = Field(default_factory=MarketConfig)
    train: TrainConfig = Field(default_factory=TrainConfig)
    epsilon_list: Annotated[
        list[EpsilonNorm], Field(min_length=1, description="Tolerances of a sweep.")
    ] = [0.0, 0.08, 0.16]
    seeds: Annotated[list[int], Field(min_length=1, description="Seeds of a sweep.")] = [0]
    output_dir: Annotated[Path, Field(description="Root folder of every run directory.")] = Path(
        DEFAULT_OUTPUT_DIR
    )

    def for_run(self, epsilon_norm: float, seed: int) -> "ExperimentConfig":
        """Copy of the config for one cell of the sweep grid."""
        train = self.train.model_copy(update={"epsilon_norm": epsilon_norm, "seed": seed})
        return self.model_copy(update={"train": train, "epsilon_list": [epsilon_norm], "seeds": [seed]})

    def info(self) -> None:
        """Print a table summary of the resolved configuration."""
        config_table = Table(
            title="nashbid configuration",
            show_header=True,
            title_justify="left",
            title_style="bold",
        )
        config_table.add_column("Property", style="green", justify="left", min_width=20)
        config_table.add_column("Value", justify="left", min_width=20)

        for section, values in self.model_dump(mode="json").items():
            if isinstance(values, dict):
                for key, value in values.items():
                    config_table.add_row(f"{section}.{key}", str(value))
            else:
                config_table.add_row(section, str(values))

        return rich.print(config_table)
