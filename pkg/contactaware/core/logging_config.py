"""Logging for the CLI: console output plus an optional rotating run log."""
from __future__ import annotations

import logging
import logging.config
from pathlib import Path
from typing import Any, Dict, Optional

# ``extra`` fields the services attach; shown after the message when present.
CONTEXT_FIELDS = (
    "scenario",
    "controller",
    "seed",
    "tick",
    "status",
    "iterations",
    "kkt_residual",
    "fault",
    "error",
    "rows",
)


class RunContextFormatter(logging.Formatter):
    """Standard line format with the run context appended as ``key=value`` pairs."""

    def format(self, record: logging.LogRecord) -> str:
        line = super().format(record)
        context = [f"{name}={getattr(record, name)}" for name in CONTEXT_FIELDS if hasattr(record, name)]
        return f"{line} [{' '.join(context)}]" if context else line


def logging_config(level: str, log_file: Optional[Path] = None) -> Dict[str, Any]:
    handlers: Dict[str, Any] = {
        "console": {"class": "logging.StreamHandler", "formatter": "run"},
    }
    if log_file is not None:
        from contactaware.core.config import settings

        handlers["file"] = {
            "class": "logging.handlers.RotatingFileHandler",
            "formatter": "run",
            "filename": str(log_file),
            "maxBytes": settings.log_max_bytes,
            "backupCount": settings.log_backup_count,
        }
    return {
        "version": 1,
        "disable_existing_loggers": False,
        "formatters": {
            "run": {
                "()": RunContextFormatter,
                "format": "%(asctime)s [%(levelname)s] %(name)s: %(message)s",
            }
        },
        "handlers": handlers,
        # matplotlib's font manager is chatty at DEBUG
        "loggers": {"matplotlib": {"level": "WARNING"}},
        "root": {"level": level.upper(), "handlers": list(handlers)},
    }


def configure_logging(level: Optional[str] = None, *, to_file: bool = True) -> None:
    from contactaware.core.config import settings

    log_file = None
    if to_file:
        log_dir = Path(settings.log_dir)
        log_dir.mkdir(parents=True, exist_ok=True)
        log_file = log_dir / "contactaware.log"
    logging.config.dictConfig(logging_config(level or settings.log_level, log_file))
