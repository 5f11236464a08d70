"""Logging helpers for the photometric stereo toolkit."""

from __future__ import annotations

import logging
import os
from pathlib import Path
from typing import Optional

from .config import PROJECT_ROOT

LOG_FORMAT = "%(asctime)s %(levelname)s [%(name)s] %(message)s"
LEVEL_NAMES = ("DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL")
DISABLED_LOG_FILES = ("", "-", "off", "none")
DEFAULT_LOG_FILE = PROJECT_ROOT / "logs" / "ipiano_ps.log"

logger = logging.getLogger("ipiano_ps")


def resolve_level(name: Optional[str]) -> int:
    """Map a level name to its numeric value, falling back to INFO."""
    candidate = (name or "INFO").strip().upper()
    if candidate not in LEVEL_NAMES:
        return logging.INFO
    return int(getattr(logging, candidate))


def _log_file_from_env() -> Optional[Path]:
    raw = os.getenv("LOG_FILE")
    if raw is None:
        return DEFAULT_LOG_FILE
    if raw.strip().lower() in DISABLED_LOG_FILES:
        return None
    return Path(raw)


def configure_logging(level: Optional[str] = None) -> logging.Logger:
    """Install stderr and file handlers on the root logger.

    ``level`` wins over ``LOG_LEVEL``. Setting ``LOG_FILE`` to ``off`` keeps
    everything on stderr, so stdout stays free for command results.
    """
    requested = level if level is not None else os.getenv("LOG_LEVEL")
    numeric = resolve_level(requested)
    formatter = logging.Formatter(LOG_FORMAT)

    root = logging.getLogger()
    while root.handlers:
        root.handlers.pop()
    root.setLevel(numeric)

    stream_handler = logging.StreamHandler()
    stream_handler.setFormatter(formatter)
    root.addHandler(stream_handler)

    log_file = _log_file_from_env()
    if log_file is not None:
        try:
            log_file.parent.mkdir(parents=True, exist_ok=True)
            file_handler = logging.FileHandler(log_file, encoding="utf-8")
            file_handler.setFormatter(formatter)
            root.addHandler(file_handler)
        except OSError as error:
            root.warning("Unable to open log file %s (%s)", log_file, error)

    if requested and requested.strip().upper() not in LEVEL_NAMES:
        logger.warning("Unknown log level %r; using INFO", requested)
    return logger


def set_level(level: str) -> None:
    """Change the root level without replacing the installed handlers."""
    logging.getLogger().setLevel(resolve_level(level))
    logger.debug("Log level set to %s", level.upper())


__all__ = ["configure_logging", "resolve_level", "set_level"]
