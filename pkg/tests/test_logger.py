import pytest
from loguru import logger

from nashbid.logger import run_log, verbosity_level


@pytest.mark.utils
@pytest.mark.parametrize(
    "verbosity, level", [(0, "SUCCESS"), (1, "INFO"), (2, "DEBUG"), (3, "TRACE"), (7, "TRACE")]
)
def test_verbosity_level(monkeypatch, verbosity, level):
    monkeypatch.delenv("LOGURU_LEVEL", raising=False)
    assert verbosity_level(verbosity) == level


@pytest.mark.utils
def test_loguru_level_wins(monkeypatch):
    monkeypatch.setenv("LOGURU_LEVEL", "WARNING")
    assert verbosity_level(3) == "WARNING"


@pytest.mark.utils
def test_run_log_only_keeps_its_run(tmp_path):
    fpath = tmp_path / "run.log"
    logger.debug("before the run")
    with run_log(fpath, "bpg/eps0.08/seed0"):
        logger.debug("inside the run")
        logger.trace("too verbose")
    logger.debug("after the run")
    text = fpath.read_text()
    assert "inside the run" in text
    assert "too verbose" not in text
    assert "before the run" not in text
    assert "after the run" not in text
