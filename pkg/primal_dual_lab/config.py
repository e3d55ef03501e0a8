"""
Loads and validates experiment configuration files.

Files use nested INI-style sections read with configobj; comma-separated
values become lists (a trailing comma makes a one-element list, a lone comma
an empty one). Each section is validated by a pydantic model. Example:

    [problem]
    builtin = NC-EQ

    [solver]
    rule = al_gda
    x0 = 0.0,
    eta_x = 0.1
    eta_dual = 0.1
    c = 3.0
    max_steps = 2000
"""

import logging
from typing import Any, Dict, List, Literal, Optional

from configobj import ConfigObj, ConfigObjError
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .errors import ConfigError
from .problems import KKTGuess, ProblemSpec, builtin, from_config
from .solvers import HyperParams, PrimalDualState
from .utils import as_vector

logger = logging.getLogger(__name__)


def _as_list(value: Any) -> Any:
    if value is None:
        return []
    if isinstance(value, str):
        return [value] if value.strip() else []
    return value


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


class ProblemSection(_Section):
    """Either a catalog id or inline expressions, plus an optional KKT point."""

    builtin: Optional[str] = None
    name: Optional[str] = None
    d: Optional[int] = Field(default=None, ge=1)
    f: Optional[str] = None
    g: List[str] = []
    h: List[str] = []
    x_star: Optional[List[float]] = None
    lambda_star: Optional[List[float]] = None
    mu_star: Optional[List[float]] = None

    @field_validator("g", "h", mode="before")
    @classmethod
    def _listify(cls, value: Any) -> Any:
        return _as_list(value)

    @field_validator("x_star", "lambda_star", "mu_star", mode="before")
    @classmethod
    def _optional_list(cls, value: Any) -> Any:
        return None if value is None else _as_list(value)

    @model_validator(mode="after")
    def _one_source(self) -> "ProblemSection":
        if self.builtin is None and (self.d is None or self.f is None):
            raise ValueError("problem needs either 'builtin' or both 'd' and 'f'")
        if self.builtin is not None:
            inline = [key for key in ("d", "f", "g", "h") if getattr(self, key)]
            if inline:
                raise ValueError(f"problem cannot set both 'builtin' and {', '.join(repr(k) for k in inline)}")
        return self


class SolverSection(_Section):
    rule: Literal["lag_gda", "al_gda", "lag_gd_oa", "al_gd_oa"] = "al_gda"
    x0: List[float] = []
    lambda0: List[float] = []
    mu0: List[float] = []
    eta_x: float = Field(default=0.1, gt=0)
    eta_dual: float = Field(default=0.1, gt=0)
    c: float = Field(default=1.0, gt=0)
    omega: float = 0.0
    max_steps: int = Field(default=1000, ge=0)
    stop_tol: float = Field(default=1e-10, ge=0)
    first_step: Literal["plain", "zero-diff"] = "plain"
    divergence_bound: float = Field(default=1e12, gt=0)

    @field_validator("x0", "lambda0", "mu0", mode="before")
    @classmethod
    def _listify(cls, value: Any) -> Any:
        return _as_list(value)


class StabilitySection(_Section):
    tol_act: float = Field(default=1e-8, gt=0)
    strict_tol: float = Field(default=1e-8, gt=0)
    margin: float = Field(default=1e-10, gt=0)
    lssp_margin: float = Field(default=1e-9, ge=0)
    c_max: float = Field(default=1e6, gt=0)
    kkt_tol: float = Field(default=1e-8, gt=0)


class SweepSection(_Section):
    omegas: List[float] = [0.5, 1.0, 2.0, 4.0, 8.0]
    paired_steps: int = Field(default=0, ge=0)
    imag_tol: float = Field(default=1e-12, ge=0)

    @field_validator("omegas", mode="before")
    @classmethod
    def _listify(cls, value: Any) -> Any:
        return _as_list(value)

    @field_validator("omegas")
    @classmethod
    def _increasing(cls, value: List[float]) -> List[float]:
        if not value:
            raise ValueError("omegas must not be empty")
        if any(b <= a for a, b in zip(value, value[1:])):
            raise ValueError("omegas must be strictly increasing")
        return value


class DerivativesSection(_Section):
    fd_step: float = Field(default=1e-5, gt=0)
    points: int = Field(default=100, ge=1)
    tol: float = Field(default=1e-6, gt=0)
    scale: float = Field(default=2.0, gt=0)


class OutputSection(_Section):
    out: str = "results"
    seed: int = 0


class RunConfig(_Section):
    """A complete experiment manifest."""

    problem: ProblemSection = ProblemSection(builtin="NC-EQ")
    solver: SolverSection = SolverSection()
    stability: StabilitySection = StabilitySection()
    sweep: SweepSection = SweepSection()
    derivatives: DerivativesSection = DerivativesSection()
    output: OutputSection = OutputSection()


def config_from_dict(data: Dict[str, Any]) -> RunConfig:
    """
    Validates a nested mapping.

    Args:
        data: Section name -> key/value mapping.

    Returns:
        The RunConfig.

    Raises:
        ConfigError: On any validation failure.
    """
    try:
        return RunConfig.model_validate(data)
    except ValidationError as e:
        first = e.errors()[0]
        location = ".".join(str(part) for part in first["loc"])
        raise ConfigError(f"{location}: {first['msg']}") from e


def load_config(path: Optional[str]) -> RunConfig:
    """
    Reads and validates a configuration file.

    Args:
        path: File path; None yields the defaults.

    Returns:
        The RunConfig.

    Raises:
        ConfigError: If the file is missing, malformed or invalid.
    """
    if path is None:
        return RunConfig()
    try:
        raw = ConfigObj(path, file_error=True, list_values=True, encoding="utf-8")
    except (OSError, ConfigObjError) as e:
        raise ConfigError(f"could not read configuration '{path}': {e}") from e
    logger.info(f"Loaded configuration from '{path}'")
    return config_from_dict(raw.dict())


def build_problem(section: ProblemSection) -> ProblemSpec:
    """
    Instantiates the configured problem.

    A KKT point given in the section replaces the catalog's.
    """
    if section.builtin is not None:
        problem = builtin(section.builtin)
        if section.x_star is None:
            return problem
        guess = KKTGuess(
            as_vector(section.x_star, problem.d, "x_star"),
            as_vector(section.lambda_star or [], problem.m, "lambda_star"),
            as_vector(section.mu_star or [], problem.n, "mu_star"),
            "from configuration",
        )
        logger.debug(f"Overriding the known KKT point of {problem.name} with {section.x_star}")
        return ProblemSpec(problem.name, problem.d, problem.f, problem.g, problem.h, (guess,))
    return from_config(section.model_dump())


def build_hyperparams(section: SolverSection) -> HyperParams:
    return HyperParams(section.eta_x, section.eta_dual, section.c, section.omega)


def build_initial_state(problem: ProblemSpec, section: SolverSection) -> PrimalDualState:
    """Initial state from the solver section; an empty x0 starts at the origin."""
    x0 = section.x0 or [0.0] * problem.d
    return PrimalDualState.initial(problem, x0, section.lambda0, section.mu0)

