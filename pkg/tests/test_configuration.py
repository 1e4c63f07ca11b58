import pytest
import torch

from domain_game.common.configuration import DomainGameSettings, configure_torch, resolve_data_root
from domain_game.training.game import TrainConfig
from domain_game.utils.logging_config import LOGGING_CONFIG, build_logging_config


@pytest.fixture
def fresh_settings():
    DomainGameSettings.get_instance.cache_clear()
    yield
    DomainGameSettings.get_instance.cache_clear()


def test_settings_read_the_environment(monkeypatch, fresh_settings):
    monkeypatch.setenv("DOMAIN_GAME_DATA_ROOT", "/data/bench")
    settings = DomainGameSettings.get_instance()
    assert settings.data_root == "/data/bench"
    assert DomainGameSettings.get_instance() is settings


def test_only_the_data_root_comes_from_the_environment(monkeypatch, fresh_settings):
    monkeypatch.setenv("DOMAIN_GAME_TORCH_NUM_THREADS", "3")
    monkeypatch.setenv("DOMAIN_GAME_DETERMINISTIC_ALGORITHMS", "false")
    assert set(DomainGameSettings.model_fields) == {"data_root"}
    assert TrainConfig().torch_num_threads == 1
    assert TrainConfig().deterministic_algorithms is True


def test_configure_torch_applies_the_run_switches():
    threads, deterministic = torch.get_num_threads(), torch.are_deterministic_algorithms_enabled()
    try:
        configure_torch(2, False)
        assert torch.get_num_threads() == 2
        assert not torch.are_deterministic_algorithms_enabled()
    finally:
        torch.set_num_threads(threads)
        torch.use_deterministic_algorithms(deterministic, warn_only=True)


def test_explicit_data_root_wins(monkeypatch, fresh_settings):
    monkeypatch.setenv("DOMAIN_GAME_DATA_ROOT", "/data/bench")
    assert resolve_data_root("/elsewhere") == "/elsewhere"
    assert resolve_data_root(None) == "/data/bench"


def test_settings_are_frozen(fresh_settings):
    settings = DomainGameSettings()
    with pytest.raises(Exception):
        settings.data_root = "/tmp"


def test_file_handler_is_added_on_request(tmp_path):
    config = build_logging_config(log_file=str(tmp_path / "run.log"))
    assert config["handlers"]["file"]["filename"] == str(tmp_path / "run.log")
    assert all("file" in logger["handlers"] for logger in config["loggers"].values())
    assert "file" not in LOGGING_CONFIG["handlers"]


def test_verbose_console_logs_debug():
    assert build_logging_config(log_file="", verbose=True)["handlers"]["console"]["level"] == "DEBUG"
    assert build_logging_config(log_file="")["handlers"]["console"]["level"] == "INFO"
