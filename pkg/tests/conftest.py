"""nashbid pytest fixtures.

Here go the markets, configs and random streams shared between the testing scripts.
"""

import numpy as np
import pytest
from _pytest.logging import LogCaptureFixture
from loguru import logger

from nashbid.config import load_config
from nashbid.models import ExperimentConfig, MarketConfig, TrainConfig
from nashbid.oracle import TinyConfig
from nashbid.utils import default_file

OUTPUT_FOLDER = "nashbid_output"


@pytest.fixture
def tiny_config_path():
    return default_file("tiny.yaml")


@pytest.fixture
def tiny_config(tiny_config_path) -> ExperimentConfig:
    return load_config(tiny_config_path)


@pytest.fixture
def tiny_market(tiny_config) -> MarketConfig:
    return tiny_config.market


@pytest.fixture
def tiny(tiny_market) -> TinyConfig:
    return TinyConfig.from_market(tiny_market)


@pytest.fixture
def desk_market() -> MarketConfig:
    return MarketConfig(n_agents=3, horizon=3, impressions_per_step=2, budgets=[2.0, 3.0, 4.0])


@pytest.fixture
def fast_train() -> TrainConfig:
    return TrainConfig(
        episodes_per_estimate=16,
        episodes_per_return=64,
        max_outer_iters=3,
        unified_train_iters=2,
        br_iters=3,
        br_episodes=8,
        bpg_zero_br_iters=2,
        deterministic=True,
    )


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(20240611)


@pytest.fixture
def tmp_folder(tmp_path_factory):
    tmp_path = tmp_path_factory.mktemp(OUTPUT_FOLDER)
    yield tmp_path


@pytest.fixture
def caplog(caplog: LogCaptureFixture):
    handler_id = logger.add(
        caplog.handler,
        format="{message}",
        level=0,
        filter=lambda record: record["level"].no >= caplog.handler.level,
        enqueue=False,  # Set to 'True' if your test is spawning child processes.
    )
    yield caplog
    logger.remove(handler_id)
