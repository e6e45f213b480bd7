import os
from pathlib import Path
from typing import Optional

from pydantic import field_validator
from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    PROJECT_NAME: str = "copra"
    VERSION: str = "0.1.0"

    # regularizer defaults
    PARTITION_C: float = 0.1
    NEWTON_XI: float = 1e-9
    NEWTON_MAX_ITER: int = 100
    EPSILON_FLOOR_REL: float = 1e-12
    BRACKET_POINTS: int = 64

    # baselines / diagnostics
    GRID_POINTS: int = 200
    SNR_MAX_DB: float = 40.0

    # harness
    DEFAULT_TRIALS: int = 1000
    COPRA_SEED: Optional[int] = None
    JOBS: Optional[int] = None
    FAILURE_TOLERANCE: float = 0.01

    model_config = SettingsConfigDict(
        env_file=".env",
        env_file_encoding='utf-8',
        case_sensitive=True,
        extra='ignore',
        env_prefix=""  # COPRA_SEED is read verbatim
    )

    @field_validator("PARTITION_C")
    @classmethod
    def check_partition_c(cls, value: float) -> float:
        if not 0.0 < value < 1.0:
            raise ValueError("PARTITION_C must lie in (0, 1)")
        return value

    @property
    def default_jobs(self) -> int:
        """Worker count used when no --jobs flag is given."""
        return self.JOBS or os.cpu_count() or 1

    BASE_DIR: Path = Path(__file__).parent.parent.parent
    OUTPUT_DIR: Path = BASE_DIR / "results"
    LOG_DIR: Path = BASE_DIR / "logs"

    LOG_LEVEL: str = "INFO"
    LOG_FILE: str = str(LOG_DIR / "copra.log")


settings = Settings()
