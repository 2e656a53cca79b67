import json
from datetime import datetime

import pytest
import yaml

from nashbid.exceptions import ConfigError
from nashbid.utils import THREADS_ENV, default_file, make_run_dir, read_user_dict, seed_info, thread_limit


@pytest.mark.utils
def test_read_user_dict_inline_json():
    assert read_user_dict('{"method": "bpg"}') == {"method": "bpg"}
    with pytest.raises(ConfigError):
        read_user_dict('{"method": ')


@pytest.mark.utils
@pytest.mark.parametrize("suffix", [".yaml", ".yml", ".json"])
def test_read_user_dict_files(tmp_path, suffix):
    data = {"seeds": [1, 2], "market": {"n_agents": 3}}
    fpath = tmp_path / f"config{suffix}"
    fpath.write_text(json.dumps(data) if suffix == ".json" else yaml.safe_dump(data))
    assert read_user_dict(fpath) == data


@pytest.mark.utils
def test_read_user_dict_errors(tmp_path):
    with pytest.raises(ConfigError, match="not found"):
        read_user_dict(tmp_path / "missing.yaml")

    toml = tmp_path / "config.toml"
    toml.write_text("method = 'bpg'")
    with pytest.raises(ConfigError, match="Unsupported"):
        read_user_dict(toml)

    listing = tmp_path / "list.yaml"
    listing.write_text("- 1\n- 2\n")
    with pytest.raises(ConfigError, match="mapping"):
        read_user_dict(listing)

    broken = tmp_path / "broken.json"
    broken.write_text('{\n  "a": 1,\n}')
    with pytest.raises(ConfigError) as excinfo:
        read_user_dict(broken)
    assert excinfo.value.line == 3


@pytest.mark.utils
def test_empty_yaml_is_an_empty_config(tmp_path):
    fpath = tmp_path / "empty.yaml"
    fpath.write_text("# nothing here\n")
    assert read_user_dict(fpath) == {}


@pytest.mark.utils
def test_default_files_exist():
    for fname in ("experiment.yaml", "tiny.yaml", "config_schema.json"):
        assert default_file(fname).is_file()


@pytest.mark.utils
@pytest.mark.parametrize("seeds, expected", [([4], "seed4"), ([0, 1, 2], "seeds0-2")])
def test_seed_info(seeds, expected):
    assert seed_info(seeds) == expected


@pytest.mark.utils
def test_make_run_dir_appends_suffix(tmp_path):
    now = datetime(2024, 6, 11, 9, 30, 5)
    first = make_run_dir(tmp_path, "seed0", now=now)
    second = make_run_dir(tmp_path, "seed0", now=now)
    third = make_run_dir(tmp_path, "seed0", now=now)
    assert first.name == "20240611-093005-seed0"
    assert second.name == "20240611-093005-seed0-1"
    assert third.name == "20240611-093005-seed0-2"
    assert all(folder.is_dir() for folder in (first, second, third))


@pytest.mark.utils
def test_thread_limit(monkeypatch):
    monkeypatch.delenv(THREADS_ENV, raising=False)
    assert thread_limit(default=3) == 3
    assert thread_limit() >= 1
    monkeypatch.setenv(THREADS_ENV, "2")
    assert thread_limit(default=8) == 2


@pytest.mark.utils
@pytest.mark.parametrize("value", ["zero", "0", "-2"])
def test_thread_limit_rejects_bad_values(monkeypatch, value):
    monkeypatch.setenv(THREADS_ENV, value)
    with pytest.raises(ConfigError) as excinfo:
        thread_limit()
    assert excinfo.value.field == THREADS_ENV
