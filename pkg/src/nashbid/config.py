"""Experiment configuration loading.

A config file is checked against ``defaults/config_schema.json`` before the pydantic models are built,
so unknown keys and wrong types are reported with the dotted name of the offending field.
"""

from collections import ChainMap
from pathlib import Path
from typing import Any

import yaml
from jsonschema import Draft7Validator
from jsonschema.exceptions import ValidationError as SchemaError
from jsonschema.exceptions import best_match
from loguru import logger
from pydantic import ValidationError

from .__version__ import __config_version__
from .exceptions import ConfigError
from .models import ExperimentConfig
from .utils import read_json, read_user_dict

SCHEMA_FNAME = "config_schema.json"
RESOLVED_CONFIG_FNAME = "resolved_config.yaml"
CLI_OVERRIDES = ("seed", "epsilon", "method", "output_dir", "feature_flags")


def _schema_field(error: SchemaError) -> str:
    path = [str(part) for part in error.absolute_path]
    if error.validator == "additionalProperties" and isinstance(error.instance, dict):
        known = set(error.schema.get("properties", {}))
        unknown = sorted(set(error.instance) - known)
        if unknown:
            path.append(unknown[0])
    return ".".join(path) or "<root>"


def validate_schema(data: dict[str, Any]) -> None:
    """Check ``data`` against the shipped JSON schema.

    Raises
    ------
    ConfigError
        Naming the dotted field of the most relevant schema violation.
    """
    validator = Draft7Validator(read_json(SCHEMA_FNAME))
    error = best_match(validator.iter_errors(data))
    if error is None:
        return
    field = _schema_field(error)
    if error.validator == "additionalProperties":
        raise ConfigError(f"Unknown key {field}", field=field)
    raise ConfigError(f"Invalid value for {field}: {error.message}", field=field)


def _cli_overrides(cli_args: dict[str, Any], user_dict: dict[str, Any]) -> dict[str, Any]:
    args = {k: v for k, v in cli_args.items() if k in CLI_OVERRIDES and v is not None}
    overrides: dict[str, Any] = {}
    if "seed" in args:
        overrides["seeds"] = [args["seed"]]
    if "epsilon" in args:
        overrides["epsilon_list"] = [args["epsilon"]]
    if "method" in args:
        overrides["method"] = str(args["method"])
    if "output_dir" in args:
        overrides["output_dir"] = str(args["output_dir"])
    if flags := args.get("feature_flags"):
        train = dict(user_dict.get("train") or {})
        train.update({key: yaml.safe_load(value) for key, value in flags.items()})
        overrides["train"] = train
    return overrides


def build_config(user_dict: dict[str, Any], cli_args: dict[str, Any] | None = None) -> ExperimentConfig:
    """Validate a config mapping and apply CLI overrides on top of it.

    Precedence is CLI arguments, then the user file, then the model defaults.
    """
    data = dict(ChainMap(_cli_overrides(cli_args or {}, user_dict), user_dict))
    validate_schema(data)
    version = data.get("version", __config_version__)
    if str(version) != __config_version__:
        raise ConfigError(
            f"Config version {version} is not supported, expected {__config_version__}", field="version"
        )
    try:
        return ExperimentConfig.model_validate(data)
    except ValidationError as e:
        first = e.errors()[0]
        field = ".".join(str(part) for part in first["loc"]) or "<root>"
        raise ConfigError(f"Invalid value for {field}: {first['msg']}", field=field) from e


def load_config(path: str | Path, cli_args: dict[str, Any] | None = None) -> ExperimentConfig:
    """Read, validate and resolve an experiment config file.

    Parameters
    ----------
    path
        YAML or JSON config file.
    cli_args
        Parsed CLI arguments. ``seed``, ``epsilon``, ``method`` and ``output_dir`` override the file and
        ``feature_flags`` the fields of the ``train`` section.

    Raises
    ------
    ConfigError
        If the file is missing, cannot be parsed or holds an invalid configuration.
    """
    logger.debug("Loading config {}", path)
    config = build_config(read_user_dict(path), cli_args)
    logger.trace("Resolved config: {}", config)
    return config


def write_resolved_config(config: ExperimentConfig, folder: str | Path) -> Path:
    """Write the config with every default filled next to the run outputs."""
    fpath = Path(folder) / RESOLVED_CONFIG_FNAME
    with open(fpath, "w") as f:
        yaml.safe_dump(config.model_dump(mode="json"), f, sort_keys=False)
    return fpath
