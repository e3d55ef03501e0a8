"""Log routing for CLI runs and the small vector helpers shared by the numeric modules."""

import logging
import os
from logging import Logger
from typing import Sequence

import numpy as np

from .errors import DimensionMismatchError

LOG_FILE = "primal_dual_lab.log"
FILE_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"
CONSOLE_FORMAT = "%(levelname)s: %(message)s"


def setup_logger(output_dir: str, level: str = "INFO") -> Logger:
    """
    Routes the package's log records to the run's output directory and stderr.

    The log file is written next to the CSV/JSON results of the run. Handlers
    installed by an earlier call are closed and replaced.

    Args:
        output_dir: Result directory; receives `primal_dual_lab.log`.
        level: One of DEBUG, INFO, WARNING, ERROR; unknown names fall back to INFO.

    Returns:
        The `primal_dual_lab` package logger.
    """
    log_level = getattr(logging, level.upper(), logging.INFO)
    logger = logging.getLogger("primal_dual_lab")
    logger.setLevel(log_level)
    for handler in list(logger.handlers):
        handler.close()
        logger.removeHandler(handler)

    handlers = (
        (logging.FileHandler(os.path.join(output_dir, LOG_FILE), mode="w", encoding="utf-8"), FILE_FORMAT),
        (logging.StreamHandler(), CONSOLE_FORMAT),
    )
    for handler, fmt in handlers:
        handler.setLevel(log_level)
        handler.setFormatter(logging.Formatter(fmt))
        logger.addHandler(handler)
    return logger


def as_vector(values: Sequence[float] | np.ndarray, size: int, name: str) -> np.ndarray:
    """
    Converts a sequence to a float vector and checks its length.

    Args:
        values: Anything numpy can turn into a 1-D float array.
        size: The required length.
        name: Name used in the error message.

    Returns:
        A new 1-D float64 array.

    Raises:
        DimensionMismatchError: If the length differs from ``size``.
    """
    vec = np.array(values, dtype=float).reshape(-1)
    if vec.shape[0] != size:
        raise DimensionMismatchError(f"{name} has length {vec.shape[0]}, expected {size}")
    return vec


def positive_part(values: np.ndarray) -> np.ndarray:
    """Componentwise max(0, v); exact zeros stay zero."""
    return np.maximum(values, 0.0)


def inf_norm(values: np.ndarray) -> float:
    """Infinity norm that returns 0.0 for empty vectors."""
    return float(np.max(np.abs(values))) if values.size else 0.0
