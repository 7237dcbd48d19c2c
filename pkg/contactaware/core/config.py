"""Application configuration management."""
from __future__ import annotations

import logging
import os
from functools import lru_cache
from pathlib import Path
from typing import Any

from dotenv import load_dotenv
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

BASE_DIR = Path(__file__).resolve().parent.parent.parent
ENV_FILE = BASE_DIR / ".env"

load_dotenv(ENV_FILE)

logger = logging.getLogger(__name__)

_LOG_LEVELS = {"CRITICAL", "ERROR", "WARNING", "INFO", "DEBUG"}


def _normalise_directory(path_str: str, *, default: Path, description: str) -> str:
    """Return a writable directory path, falling back when necessary."""

    candidate = Path(path_str).expanduser()
    if not candidate.is_absolute():
        candidate = (BASE_DIR / candidate).resolve()

    try:
        candidate.mkdir(parents=True, exist_ok=True)
    except (PermissionError, OSError) as exc:
        fallback = default.resolve()
        fallback.mkdir(parents=True, exist_ok=True)
        logger.warning(
            "Unable to create %s at %s (%s); using fallback %s",
            description,
            candidate,
            exc,
            fallback,
        )
        candidate = fallback

    return str(candidate)


class Settings(BaseModel):
    """Runtime configuration values for scenario runs and the numerical core."""

    model_config = ConfigDict(populate_by_name=True)

    output_dir: str = Field(str(BASE_DIR / "data" / "runs"), validation_alias="CONTACTAWARE_OUTPUT_DIR")
    log_dir: str = Field(str(BASE_DIR / "data" / "logs"), validation_alias="CONTACTAWARE_LOG_DIR")
    log_level: str = Field("INFO", validation_alias="CONTACTAWARE_LOG_LEVEL")
    log_max_bytes: int = Field(10 * 1024 * 1024, validation_alias="CONTACTAWARE_LOG_MAX_BYTES", gt=0)
    log_backup_count: int = Field(5, validation_alias="CONTACTAWARE_LOG_BACKUP_COUNT", gt=0)

    qp_tolerance: float = Field(1e-9, validation_alias="CONTACTAWARE_QP_TOLERANCE", gt=0)
    qp_max_iterations: int = Field(200, validation_alias="CONTACTAWARE_QP_MAX_ITERATIONS", ge=1)
    qp_penalty: float = Field(1e6, validation_alias="CONTACTAWARE_QP_PENALTY", gt=0)

    sqp_max_iterations: int = Field(50, validation_alias="CONTACTAWARE_SQP_MAX_ITERATIONS", ge=1)
    sqp_tolerance: float = Field(1e-8, validation_alias="CONTACTAWARE_SQP_TOLERANCE", gt=0)
    activation_distance: float = Field(1e-4, validation_alias="CONTACTAWARE_ACTIVATION_DISTANCE", ge=0)
    linearization_margin: float = Field(0.05, validation_alias="CONTACTAWARE_LINEARIZATION_MARGIN", gt=0)
    rank_tolerance: float = Field(1e-6, validation_alias="CONTACTAWARE_RANK_TOLERANCE", gt=0)

    fault_abort_ticks: int = Field(50, validation_alias="CONTACTAWARE_FAULT_ABORT_TICKS", ge=1)
    compare_workers: int = Field(4, validation_alias="CONTACTAWARE_COMPARE_WORKERS", ge=1)
    tick_budget_ms: float = Field(1.0, validation_alias="CONTACTAWARE_TICK_BUDGET_MS", gt=0)

    @field_validator("log_level")
    @classmethod
    def validate_log_level(cls, value: str) -> str:
        level = value.strip().upper()
        if level not in _LOG_LEVELS:
            raise ValueError(f"CONTACTAWARE_LOG_LEVEL must be one of {sorted(_LOG_LEVELS)}")
        return level

    @model_validator(mode="after")
    def validate_margins(self) -> "Settings":
        """The simulator must linearize every pair it may report as a contact."""

        if self.linearization_margin < self.activation_distance:
            raise ValueError(
                "CONTACTAWARE_LINEARIZATION_MARGIN must be at least CONTACTAWARE_ACTIVATION_DISTANCE"
            )
        return self

    @model_validator(mode="after")
    def normalise_storage_directories(self) -> "Settings":
        """Ensure the log directory is writable."""

        self.log_dir = _normalise_directory(
            self.log_dir,
            default=BASE_DIR / "data" / "logs",
            description="log directory",
        )
        return self


@lru_cache
def get_settings() -> Settings:
    """Return cached settings instance."""

    overrides: dict[str, Any] = {}
    for name, field in Settings.model_fields.items():
        alias = field.validation_alias
        if isinstance(alias, str):
            value = os.getenv(alias)
            if value:
                overrides[name] = value
    return Settings(**overrides)


settings = get_settings()
