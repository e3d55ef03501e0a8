import logging
import os

import numpy as np
import pytest

from primal_dual_lab.errors import DimensionMismatchError
from primal_dual_lab.utils import LOG_FILE, as_vector, inf_norm, positive_part, setup_logger


@pytest.fixture
def package_logger():
    """The package logger, with whatever handlers a test installs closed afterwards."""
    logger = logging.getLogger("primal_dual_lab")
    yield logger
    for handler in list(logger.handlers):
        handler.close()
        logger.removeHandler(handler)


def test_setup_logger_writes_to_output_dir(tmp_path, package_logger):
    logger = setup_logger(str(tmp_path), level="debug")
    assert logger is package_logger
    assert logger.level == logging.DEBUG
    logging.getLogger("primal_dual_lab.solvers").debug("step 1")
    for handler in logger.handlers:
        handler.flush()
    with open(os.path.join(tmp_path, LOG_FILE), encoding="utf-8") as f:
        line = f.read().strip()
    assert line.endswith(" - primal_dual_lab.solvers - DEBUG - step 1")


def test_setup_logger_replaces_handlers(tmp_path, package_logger):
    first, second = tmp_path / "a", tmp_path / "b"
    first.mkdir()
    second.mkdir()
    setup_logger(str(first))
    logger = setup_logger(str(second), level="WARNING")
    assert len(logger.handlers) == 2
    assert all(handler.level == logging.WARNING for handler in logger.handlers)
    file_handler = next(h for h in logger.handlers if isinstance(h, logging.FileHandler))
    assert file_handler.baseFilename == os.path.join(str(second), LOG_FILE)


def test_setup_logger_falls_back_to_info(tmp_path, package_logger):
    assert setup_logger(str(tmp_path), level="chatty").level == logging.INFO


def test_as_vector():
    vec = as_vector([1, 2], 2, "x")
    assert vec.dtype == np.float64 and vec.tolist() == [1.0, 2.0]
    with pytest.raises(DimensionMismatchError):
        as_vector([1.0], 2, "x")


def test_positive_part_and_inf_norm():
    assert positive_part(np.array([-1.0, 0.0, 2.0])).tolist() == [0.0, 0.0, 2.0]
    assert inf_norm(np.array([-3.0, 2.0])) == 3.0
    assert inf_norm(np.zeros(0)) == 0.0
