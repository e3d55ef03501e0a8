"""
Writers for the result files produced by the command-line tool.

CSV files carry a header row, comma-separated values with floats printed to
17 significant digits and an optional '#'-prefixed footer line. JSON files
are indented, key-sorted and contain no timestamps, so repeated runs produce
identical bytes; non-finite floats become null and complex numbers
[re, im] pairs.
"""

import csv
import dataclasses
import json
import logging
import math
from typing import Any, Dict, Iterable, List, Optional, Sequence

import numpy as np

from .harness import SweepRow
from .problems import ProblemSpec
from .solvers import PrimalDualState, StepMetrics, Trajectory
from .stability import StabilityReport

logger = logging.getLogger(__name__)

SWEEP_COLUMNS = ["omega", "rho", "max_abs_imag", "kappa", "is_lssp", "rho_al", "sign_changes"]


def format_float(value: float) -> str:
    return format(float(value), ".17g")


def _cell(value: Any) -> str:
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return format_float(value)


def trajectory_header(problem: ProblemSpec) -> List[str]:
    return (
        ["t"]
        + [f"x_{i + 1}" for i in range(problem.d)]
        + [f"lambda_{i + 1}" for i in range(problem.m)]
        + [f"mu_{j + 1}" for j in range(problem.n)]
        + ["f", "norm_h_inf", "max_g_plus", "lagrangian", "kkt_residual"]
    )


def trajectory_row(state: PrimalDualState, metrics: StepMetrics) -> List[str]:
    values = [state.t] + list(state.x) + list(state.lam) + list(state.mu)
    values += [metrics.f, metrics.norm_h_inf, metrics.max_g_plus, metrics.lagrangian, metrics.kkt_residual]
    return [_cell(v) for v in values]


def write_csv(path: str, header: Sequence[str], rows: Iterable[Sequence[str]], footer: Optional[str] = None) -> None:
    """
    Writes a CSV file with an optional comment footer.

    Args:
        path: Destination.
        header: Column names.
        rows: Pre-formatted rows.
        footer: Text written after the rows as ``# <footer>``.
    """
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)
        if footer is not None:
            f.write(f"# {footer}\n")
    logger.info(f"Wrote '{path}'")


def write_trajectory_csv(path: str, problem: ProblemSpec, trajectory: Trajectory, footer: Optional[str] = None) -> None:
    """One row per recorded step; a run without steps yields a header-only file."""
    rows = (trajectory_row(s, m) for s, m in zip(trajectory.states, trajectory.metrics))
    write_csv(path, trajectory_header(problem), rows, footer)


def write_sweep_csv(path: str, rows: Sequence[SweepRow]) -> None:
    formatted = [
        [
            _cell(row.omega),
            _cell(row.spectral_radius),
            _cell(row.max_abs_imag),
            _cell(row.condition_number),
            _cell(row.is_lssp),
            _cell(row.al_spectral_radius),
            _cell(row.sign_changes),
        ]
        for row in rows
    ]
    write_csv(path, SWEEP_COLUMNS, formatted)


def to_jsonable(value: Any) -> Any:
    """
    Converts numpy values, dataclasses and complex numbers to JSON-ready objects.

    Args:
        value: Any nested structure.

    Returns:
        An equivalent structure of dicts, lists, str, int, float, bool and None.
    """
    if dataclasses.is_dataclass(value) and not isinstance(value, type):
        return {f.name: to_jsonable(getattr(value, f.name)) for f in dataclasses.fields(value)}
    if isinstance(value, dict):
        return {str(k): to_jsonable(v) for k, v in value.items()}
    if isinstance(value, np.ndarray):
        return [to_jsonable(v) for v in value.tolist()]
    if isinstance(value, (list, tuple)):
        return [to_jsonable(v) for v in value]
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, (int, np.integer)):
        return int(value)
    if isinstance(value, (complex, np.complexfloating)):
        return [to_jsonable(float(value.real)), to_jsonable(float(value.imag))]
    if isinstance(value, (float, np.floating)):
        return float(value) if math.isfinite(value) else None
    return value


def report_to_dict(report: StabilityReport) -> Dict[str, Any]:
    """Fixed-field JSON form of a StabilityReport."""
    trivial = None
    if report.trivial_eigs is not None:
        trivial = {
            "value": report.trivial_eigs.value,
            "expected": report.trivial_eigs.expected,
            "observed": report.trivial_eigs.observed,
        }
    return to_jsonable(
        {
            "jacobian": report.jacobian,
            "eigenvalues": [complex(z) for z in report.eigenvalues],
            "spectral_radius": report.spectral_radius,
            "condition_number": report.condition_number,
            "rank": report.rank,
            "is_lssp": report.is_lssp,
            "marginal": report.marginal,
            "trivial_eigs": trivial,
        }
    )


def dumps(payload: Any) -> str:
    return json.dumps(to_jsonable(payload), indent=4, sort_keys=True, allow_nan=False)


def write_json(path: str, payload: Any) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write(dumps(payload))
        f.write("\n")
    logger.info(f"Wrote '{path}'")
