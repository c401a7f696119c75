import json
import sys

import pytest
from loguru import logger

from src.config import Settings, load_config_file, resolve_run_config, write_resolved_config
from src.errors import ConfigurationError
from src.logging_config import setup_logging


@pytest.mark.parametrize(
    "name,text",
    [
        ("run.toml", "seed = 4\n[train]\ntotal_steps = 10\n"),
        ("run.json", '{"seed": 4, "train": {"total_steps": 10}}'),
        ("run.yaml", "seed: 4\ntrain:\n  total_steps: 10\n"),
    ],
)
def test_config_formats_agree(tmp_path, name, text):
    path = tmp_path / name
    path.write_text(text)
    assert load_config_file(str(path)) == {"seed": 4, "train": {"total_steps": 10}}


def test_unsupported_suffix(tmp_path):
    path = tmp_path / "run.ini"
    path.write_text("seed=1")
    with pytest.raises(ConfigurationError):
        load_config_file(str(path))


def test_malformed_file(tmp_path):
    path = tmp_path / "run.toml"
    path.write_text("seed = = 1")
    with pytest.raises(ConfigurationError):
        load_config_file(str(path))


def test_missing_file(tmp_path):
    with pytest.raises(ConfigurationError):
        load_config_file(str(tmp_path / "absent.toml"))


def test_no_file_is_empty():
    assert load_config_file(None) == {}


def test_flags_override_file_and_none_keeps_file_value():
    file_data = {"out": "a", "seed": 1, "train": {"total_steps": 10, "lr0": 0.01}}
    config = resolve_run_config("train", file_data, {"seed": None, "train": {"total_steps": 20, "lr0": None}})
    assert config.seed == 1
    assert config.train.total_steps == 20
    assert config.train.lr0 == 0.01


def test_invalid_values_are_configuration_errors():
    with pytest.raises(ConfigurationError) as info:
        resolve_run_config("train", {"out": "a", "train": {"total_steps": 0}}, {})
    assert "train.total_steps" in str(info.value)


def test_unknown_nested_key():
    with pytest.raises(ConfigurationError):
        resolve_run_config("gen", {"out": "a", "net": {"depth": 3}}, {})


def test_resolved_config_omits_force(tmp_path):
    config = resolve_run_config("gen", {}, {"out": str(tmp_path), "force": True})
    written = json.loads(write_resolved_config(config, str(tmp_path)).read_text())
    assert written["command"] == "gen"
    assert "force" not in written


def test_settings_from_environment(monkeypatch):
    monkeypatch.setenv("WAUNET_THREADS", "2")
    monkeypatch.setenv("WAUNET_DEFAULT_DTYPE", "float64")
    settings = Settings()
    assert settings.threads == 2
    assert settings.default_dtype == "float64"


def test_setup_logging_writes_log_file(tmp_path, mocker):
    mocker.patch("src.logging_config.settings", Settings(log_dir=str(tmp_path / "logs"), log_file="run.log"))
    setup_logging("debug")
    logger.info("configured")
    logger.remove()
    logger.add(sys.stderr)
    assert "configured" in (tmp_path / "logs" / "run.log").read_text()
