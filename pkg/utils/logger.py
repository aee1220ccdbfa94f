"""
utils/logger.py
---------------
Logging for the CLI and the library. Every line carries the config hash of
the run it belongs to ('-' outside a run). While a run is bound, the same
lines also go to '<out>/<verb>-<hash>.log' next to its artifacts.

All modules should use `get_logger(__name__)` to obtain a logger instance.
"""

import logging
import os
import sys
from typing import Optional

from config import LOG_LEVEL

_LOG_FORMAT = "%(asctime)s | %(levelname)-8s | %(run)s | %(name)s | %(message)s"
_DATE_FORMAT = "%Y-%m-%d %H:%M:%S"
_NO_RUN = "-"

_initialized = False
_run_id = _NO_RUN
_file_handler: Optional[logging.FileHandler] = None


class _StdoutHandler(logging.StreamHandler):
    """Writes to whatever sys.stdout is at emit time."""

    @property
    def stream(self):
        return sys.stdout

    @stream.setter
    def stream(self, _value) -> None:
        pass


class _RunFilter(logging.Filter):
    """Stamps records with the bound run id."""

    def filter(self, record: logging.LogRecord) -> bool:
        record.run = _run_id
        return True


def _formatted(handler: logging.Handler) -> logging.Handler:
    handler.setFormatter(logging.Formatter(_LOG_FORMAT, _DATE_FORMAT))
    handler.addFilter(_RunFilter())
    return handler


def _init_logging() -> None:
    global _initialized
    if _initialized:
        return
    root = logging.getLogger()
    root.setLevel(getattr(logging, LOG_LEVEL, logging.INFO))
    root.addHandler(_formatted(_StdoutHandler()))
    _initialized = True


def get_logger(name: str) -> logging.Logger:
    """
    Get a named logger instance.

    Args:
        name: Usually ``__name__`` of the calling module.
    """
    _init_logging()
    return logging.getLogger(name)


def set_level(level: str) -> None:
    """Override the root level at runtime (--log-level)."""
    _init_logging()
    logging.getLogger().setLevel(getattr(logging, level.upper(), logging.INFO))


def bind_run(run_id: str, log_path: Optional[str] = None) -> None:
    """
    Tag subsequent lines with `run_id` and, if given, mirror them to `log_path`.

    A previously bound run is released first, so at most one run log is open.
    """
    global _run_id, _file_handler
    _init_logging()
    unbind_run()
    _run_id = run_id
    if log_path:
        parent = os.path.dirname(log_path)
        if parent:
            os.makedirs(parent, exist_ok=True)
        _file_handler = _formatted(logging.FileHandler(log_path, mode="a", encoding="utf-8"))
        logging.getLogger().addHandler(_file_handler)


def unbind_run() -> None:
    """Close the run log (if any) and drop the run tag."""
    global _run_id, _file_handler
    if _file_handler is not None:
        logging.getLogger().removeHandler(_file_handler)
        _file_handler.close()
        _file_handler = None
    _run_id = _NO_RUN
