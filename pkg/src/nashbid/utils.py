"""nashbid utils functions."""

import json
import os
from datetime import datetime
from importlib.resources import files
from pathlib import Path
from typing import Any

import yaml
from loguru import logger

from .exceptions import ConfigError

DEFAULTS_PACKAGE = "nashbid.defaults"
THREADS_ENV = "NCB_THREADS"


def read_json(fname: str) -> dict:
    """Load a JSON file shipped in ``nashbid.defaults``."""
    return json.loads(files(DEFAULTS_PACKAGE).joinpath(fname).read_text())


def default_file(fname: str) -> Path:
    """Path of a file shipped in ``nashbid.defaults``."""
    return Path(str(files(DEFAULTS_PACKAGE).joinpath(fname)))


def read_user_dict(fname: str | Path) -> dict[str, Any]:
    """Load a YAML or JSON config file, or an inline JSON object, into a dictionary.

    Raises
    ------
    ConfigError
        If the file does not exist, cannot be parsed (the message carries the line number) or does not
        hold a mapping.
    """
    text = str(fname)
    if text.strip().startswith("{"):
        try:
            data = json.loads(text)
        except json.JSONDecodeError as e:
            raise ConfigError(f"Invalid JSON string: {e.msg}", line=e.lineno) from e
        return _check_mapping(data, "inline config")

    fpath = Path(fname)
    if not fpath.is_file():
        raise ConfigError(f"Config file {fpath} not found.")
    match fpath.suffix.lower():
        case ".json":
            try:
                data = json.loads(fpath.read_text())
            except json.JSONDecodeError as e:
                raise ConfigError(f"{fpath}:{e.lineno}: {e.msg}", line=e.lineno) from e
        case ".yaml" | ".yml":
            try:
                data = yaml.safe_load(fpath.read_text())
            except yaml.YAMLError as e:
                mark = getattr(e, "problem_mark", None)
                line = mark.line + 1 if mark is not None else None
                problem = getattr(e, "problem", None) or str(e)
                raise ConfigError(f"{fpath}:{line}: {problem}", line=line) from e
        case ext:
            raise ConfigError(f"Unsupported file extension: {ext}. Only .json, .yaml and .yml are supported.")
    return _check_mapping({} if data is None else data, str(fpath))


def _check_mapping(data: Any, source: str) -> dict[str, Any]:
    if not isinstance(data, dict):
        raise ConfigError(f"{source} must hold a mapping, got {type(data).__name__}")
    return data


def seed_info(seeds: list[int]) -> str:
    if len(seeds) == 1:
        return f"seed{seeds[0]}"
    return f"seeds{seeds[0]}-{seeds[-1]}"


def make_run_dir(output_dir: str | Path, info: str, now: datetime | None = None) -> Path:
    """Create ``output_dir/<YYYYmmdd-HHMMSS>-<info>``, appending ``-1``, ``-2``... if it exists."""
    stamp = (now or datetime.now()).strftime("%Y%m%d-%H%M%S")
    base = Path(output_dir) / f"{stamp}-{info}"
    candidate, suffix = base, 0
    while True:
        try:
            candidate.mkdir(parents=True)
            break
        except FileExistsError:
            suffix += 1
            candidate = base.with_name(f"{base.name}-{suffix}")
    logger.trace("Created run folder {}", candidate)
    return candidate


def thread_limit(default: int | None = None) -> int:
    """Worker count allowed by ``NCB_THREADS``, the CPU count otherwise."""
    value = os.environ.get(THREADS_ENV)
    if value:
        try:
            limit = int(value)
        except ValueError as e:
            raise ConfigError(f"{THREADS_ENV} must be an integer, got {value!r}", field=THREADS_ENV) from e
        if limit < 1:
            raise ConfigError(f"{THREADS_ENV} must be at least 1, got {limit}", field=THREADS_ENV)
        return limit
    return default or os.cpu_count() or 1
