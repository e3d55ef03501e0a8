import textwrap
from typing import Callable

import pytest

from primal_dual_lab.problems import CATALOG_IDS, ProblemSpec, builtin, first_kkt
from primal_dual_lab.solvers import HyperParams
from primal_dual_lab.stability import ActivePartition, active_partition, certify_guess


@pytest.fixture(params=CATALOG_IDS)
def catalog_problem(request) -> ProblemSpec:
    """Every catalog problem, one test instance each."""
    return builtin(request.param)


@pytest.fixture
def partition_of() -> Callable[[str], ActivePartition]:
    """Builds the active partition at a catalog problem's known KKT point."""

    def build(name: str) -> ActivePartition:
        problem = builtin(name)
        return active_partition(problem, certify_guess(problem, first_kkt(problem)))

    return build


@pytest.fixture
def hp() -> HyperParams:
    return HyperParams(0.1, 0.1, c=1.0, omega=1.0)


@pytest.fixture
def write_config(tmp_path) -> Callable[[str], str]:
    """Writes a dedented configuration file under tmp_path and returns its path."""

    def write(text: str, name: str = "run.ini") -> str:
        path = tmp_path / name
        path.write_text(textwrap.dedent(text), encoding="utf-8")
        return str(path)

    return write
