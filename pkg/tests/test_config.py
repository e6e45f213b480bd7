import logging

import pytest
from pydantic import ValidationError

from copra.config import Settings, settings, setup_logging
from copra.schemas import CopraConfig, ProblemSpec, SweepSpec


def test_defaults():
    assert settings.PARTITION_C == 0.1
    assert settings.GRID_POINTS == 200
    assert settings.SNR_MAX_DB == 40.0
    assert settings.DEFAULT_TRIALS == 1000


def test_environment_overrides(monkeypatch):
    monkeypatch.setenv("COPRA_SEED", "42")
    monkeypatch.setenv("GRID_POINTS", "64")
    fresh = Settings()
    assert fresh.COPRA_SEED == 42
    assert fresh.GRID_POINTS == 64


def test_partition_constant_is_validated(monkeypatch):
    monkeypatch.setenv("PARTITION_C", "1.5")
    with pytest.raises(ValidationError):
        Settings()


def test_default_jobs_is_positive(monkeypatch):
    monkeypatch.setattr(settings, "JOBS", None)
    assert settings.default_jobs >= 1
    monkeypatch.setattr(settings, "JOBS", 3)
    assert settings.default_jobs == 3


def test_regularizer_config_is_frozen_and_bounded():
    cfg = CopraConfig()
    assert cfg.c == settings.PARTITION_C
    assert cfg.rho_init is None
    with pytest.raises(ValidationError):
        cfg.c = 0.2
    with pytest.raises(ValidationError):
        CopraConfig(c=1.0)
    with pytest.raises(ValidationError):
        CopraConfig(max_iter=0)


def test_sweep_definition_is_validated():
    problem = ProblemSpec(name="shaw", n=16)
    with pytest.raises(ValidationError):
        SweepSpec(problem=problem, snr_db_list=[])
    with pytest.raises(ValidationError):
        SweepSpec(problem=problem, snr_db_list=[10.0], trials=0)
    with pytest.raises(ValidationError):
        SweepSpec(problem=problem, snr_db_list=[10.0], methods=["copra", "copra"])


def test_log_file_directory_is_created(tmp_path):
    log_file = tmp_path / "runs" / "first" / "copra.log"
    root = logging.getLogger()
    saved = root.handlers[:]
    try:
        setup_logging(log_file=str(log_file))
        logging.getLogger("copra").warning("written to the nested log")
        assert log_file.is_file()
        assert not (tmp_path / "logs").exists()
    finally:
        for handler in root.handlers[:]:
            handler.close()
            root.removeHandler(handler)
        for handler in saved:
            root.addHandler(handler)
