"""
Constrained problems of the form

    min f(x)  subject to  g(x) <= 0 (m inequalities),  h(x) = 0 (n equalities)

together with their derivative oracles, the built-in analytic catalog and a
central finite-difference checker.

Catalog problems use hand-coded quadratic maps so they can serve as an
independent oracle for problems parsed from configuration text.
"""

import logging
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .errors import DimensionMismatchError, HyperParameterError, UnknownProblemError
from .parser import ExprTree, parse_expression
from .taylor import SecondOrderValue, eval_order2
from .utils import as_vector

logger = logging.getLogger(__name__)


class ScalarMap(ABC):
    """A twice-differentiable map R^d -> R."""

    d: int

    @abstractmethod
    def value(self, x: np.ndarray) -> float: ...

    @abstractmethod
    def order2(self, x: np.ndarray) -> SecondOrderValue: ...


@dataclass(frozen=True, eq=False)
class QuadraticMap(ScalarMap):
    """
    q(x) = 0.5 * x^T Q x + b^T x + c0 with analytic derivatives.

    Attributes:
        Q: Symmetric d x d matrix.
        b: Linear term, length d.
        c0: Constant offset.
    """

    Q: np.ndarray
    b: np.ndarray
    c0: float = 0.0

    @property
    def d(self) -> int:
        return self.b.shape[0]

    def value(self, x: np.ndarray) -> float:
        return float(0.5 * x @ self.Q @ x + self.b @ x + self.c0)

    def order2(self, x: np.ndarray) -> SecondOrderValue:
        return SecondOrderValue(self.value(x), self.Q @ x + self.b, self.Q.copy())


@dataclass(frozen=True, eq=False)
class ExprMap(ScalarMap):
    """A map backed by a parsed expression tree."""

    tree: ExprTree

    @property
    def d(self) -> int:
        return self.tree.d

    def value(self, x: np.ndarray) -> float:
        return eval_order2(self.tree, x).value

    def order2(self, x: np.ndarray) -> SecondOrderValue:
        return eval_order2(self.tree, x)


@dataclass(frozen=True)
class KKTGuess:
    """
    A known (or claimed) KKT point.

    Attributes:
        x_star: Primal point, length d.
        lambda_star: Inequality multipliers, nonnegative, length m.
        mu_star: Equality multipliers, length n.
        provenance: How the values were obtained.
    """

    x_star: np.ndarray
    lambda_star: np.ndarray
    mu_star: np.ndarray
    provenance: str = ""

    def __post_init__(self) -> None:
        if np.any(self.lambda_star < 0):
            raise ValueError("lambda_star must be elementwise nonnegative")


@dataclass(frozen=True, eq=False)
class ProblemSpec:
    """
    An immutable constrained problem.

    Attributes:
        name: Catalog id or a user-chosen label.
        d: Primal dimension.
        f: Objective.
        g: Inequality constraints, g_i(x) <= 0.
        h: Equality constraints, h_j(x) = 0.
        known_kkt: Optional known KKT points.
    """

    name: str
    d: int
    f: ScalarMap
    g: Tuple[ScalarMap, ...] = ()
    h: Tuple[ScalarMap, ...] = ()
    known_kkt: Tuple[KKTGuess, ...] = field(default_factory=tuple)

    @property
    def m(self) -> int:
        return len(self.g)

    @property
    def n(self) -> int:
        return len(self.h)


@dataclass(frozen=True)
class ProblemDerivatives:
    """All first and second derivatives of a problem at one point."""

    f: float
    g: np.ndarray  # (m,)
    h: np.ndarray  # (n,)
    grad_f: np.ndarray  # (d,)
    jac_g: np.ndarray  # (m, d)
    jac_h: np.ndarray  # (n, d)
    hess_f: np.ndarray  # (d, d)
    hess_g: np.ndarray  # (m, d, d)
    hess_h: np.ndarray  # (n, d, d)


def _point(problem: ProblemSpec, x: Sequence[float] | np.ndarray) -> np.ndarray:
    return as_vector(x, problem.d, "x")


def evaluate_all(problem: ProblemSpec, x: Sequence[float] | np.ndarray) -> Tuple[float, np.ndarray, np.ndarray]:
    """
    Evaluates objective and constraint values.

    Args:
        problem: The problem.
        x: Primal point of length d.

    Returns:
        A tuple (f(x), g(x), h(x)) with g of length m and h of length n.
    """
    point = _point(problem, x)
    g = np.array([gi.value(point) for gi in problem.g], dtype=float)
    h = np.array([hj.value(point) for hj in problem.h], dtype=float)
    return problem.f.value(point), g, h


def differentiate(problem: ProblemSpec, x: Sequence[float] | np.ndarray) -> ProblemDerivatives:
    """
    Collects values, Jacobians and Hessians of f, g and h at a point.

    Args:
        problem: The problem.
        x: Primal point of length d.

    Returns:
        A ProblemDerivatives bundle; constraint arrays have a leading axis of
        length m (or n), possibly zero.
    """
    point = _point(problem, x)
    d = problem.d
    fo = problem.f.order2(point)
    go = [gi.order2(point) for gi in problem.g]
    ho = [hj.order2(point) for hj in problem.h]
    return ProblemDerivatives(
        f=fo.value,
        g=np.array([v.value for v in go], dtype=float),
        h=np.array([v.value for v in ho], dtype=float),
        grad_f=fo.gradient,
        jac_g=np.array([v.gradient for v in go], dtype=float).reshape(len(go), d),
        jac_h=np.array([v.gradient for v in ho], dtype=float).reshape(len(ho), d),
        hess_f=fo.hessian,
        hess_g=np.array([v.hessian for v in go], dtype=float).reshape(len(go), d, d),
        hess_h=np.array([v.hessian for v in ho], dtype=float).reshape(len(ho), d, d),
    )


def jacobians(problem: ProblemSpec, x: Sequence[float] | np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Returns (grad f, Jacobian of g (m x d), Jacobian of h (n x d))."""
    der = differentiate(problem, x)
    return der.grad_f, der.jac_g, der.jac_h


def constraint_hessians(
    problem: ProblemSpec, x: Sequence[float] | np.ndarray
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Returns (Hessian of f, stacked Hessians of g, stacked Hessians of h)."""
    der = differentiate(problem, x)
    return der.hess_f, der.hess_g, der.hess_h


# ---------------------------------------------------------------------------
# Catalog
# ---------------------------------------------------------------------------


def _quadratic(Q: Sequence[Sequence[float]], b: Sequence[float], c0: float = 0.0) -> QuadraticMap:
    return QuadraticMap(np.array(Q, dtype=float), np.array(b, dtype=float), float(c0))


def _affine(b: Sequence[float], c0: float) -> QuadraticMap:
    d = len(b)
    return _quadratic(np.zeros((d, d)), b, c0)


def _guess(x: Sequence[float], lam: Sequence[float], mu: Sequence[float], note: str) -> KKTGuess:
    return KKTGuess(np.array(x, dtype=float), np.array(lam, dtype=float), np.array(mu, dtype=float), note)


def _qp_eq() -> ProblemSpec:
    return ProblemSpec(
        name="QP-EQ",
        d=2,
        f=_quadratic([[1.0, 0.0], [0.0, 2.0]], [0.0, 0.0]),
        h=(_affine([1.0, 1.0], -1.0),),
        known_kkt=(
            _guess(
                [2.0 / 3.0, 1.0 / 3.0],
                [],
                [-2.0 / 3.0],
                "x1 = -mu, 2*x2 = -mu, x1 + x2 = 1 gives mu = -2/3 (stored as nearest doubles)",
            ),
        ),
    )


def _osc_eq() -> ProblemSpec:
    return ProblemSpec(
        name="OSC-EQ",
        d=1,
        f=_quadratic([[1.0]], [0.0]),
        h=(_affine([1.0], -1.0),),
        known_kkt=(_guess([1.0], [], [-1.0], "x = 1 forced by h; x + mu = 0"),),
    )


def _nc_eq() -> ProblemSpec:
    return ProblemSpec(
        name="NC-EQ",
        d=1,
        f=_quadratic([[-2.0]], [0.0]),
        h=(_affine([1.0], -1.0),),
        known_kkt=(_guess([1.0], [], [2.0], "x = 1 forced by h; -2x + mu = 0"),),
    )


def _ineq_act() -> ProblemSpec:
    return ProblemSpec(
        name="INEQ-ACT",
        d=1,
        f=_quadratic([[1.0]], [-2.0], 2.0),
        g=(_affine([1.0], -1.0),),
        known_kkt=(_guess([1.0], [1.0], [], "unconstrained minimum 2 infeasible; x - 2 + lambda = 0 at x = 1"),),
    )


def _ineq_inact() -> ProblemSpec:
    return ProblemSpec(
        name="INEQ-INACT",
        d=1,
        f=_quadratic([[1.0]], [0.0]),
        g=(_affine([1.0], -1.0),),
        known_kkt=(_guess([0.0], [0.0], [], "unconstrained minimum 0 is strictly feasible"),),
    )


def _mixed_2() -> ProblemSpec:
    return ProblemSpec(
        name="MIXED-2",
        d=2,
        f=_quadratic([[1.0, 0.0], [0.0, 1.0]], [-2.0, 0.0], 2.0),
        g=(_affine([1.0, 0.0], -1.0), _affine([0.0, 1.0], -5.0)),
        known_kkt=(_guess([1.0, 0.0], [1.0, 0.0], [], "g1 active with lambda1 = 1; g2 = -5 inactive"),),
    )


_CATALOG = {
    "QP-EQ": _qp_eq,
    "OSC-EQ": _osc_eq,
    "NC-EQ": _nc_eq,
    "INEQ-ACT": _ineq_act,
    "INEQ-INACT": _ineq_inact,
    "MIXED-2": _mixed_2,
}

CATALOG_IDS: Tuple[str, ...] = tuple(_CATALOG)

# Same problems written in the expression grammar.
_CATALOG_EXPRESSIONS: Dict[str, Dict[str, Any]] = {
    "QP-EQ": {"d": 2, "f": "0.5*(x1^2 + 2*x2^2)", "g": [], "h": ["x1 + x2 - 1"]},
    "OSC-EQ": {"d": 1, "f": "0.5*x1^2", "g": [], "h": ["x1 - 1"]},
    "NC-EQ": {"d": 1, "f": "-x1^2", "g": [], "h": ["x1 - 1"]},
    "INEQ-ACT": {"d": 1, "f": "0.5*(x1 - 2)^2", "g": ["x1 - 1"], "h": []},
    "INEQ-INACT": {"d": 1, "f": "0.5*x1^2", "g": ["x1 - 1"], "h": []},
    "MIXED-2": {"d": 2, "f": "0.5*((x1 - 2)^2 + x2^2)", "g": ["x1 - 1", "x2 - 5"], "h": []},
}


def builtin(name: str) -> ProblemSpec:
    """
    Instantiates a catalog problem with its known KKT point.

    Args:
        name: One of CATALOG_IDS.

    Returns:
        The ProblemSpec.

    Raises:
        UnknownProblemError: If the id is not in the catalog.
    """
    try:
        factory = _CATALOG[name]
    except KeyError:
        raise UnknownProblemError(f"unknown catalog id '{name}', expected one of {', '.join(CATALOG_IDS)}")
    return factory()


def catalog_expressions(name: str) -> Dict[str, Any]:
    """Returns the configuration-style expression section equivalent to a catalog problem."""
    if name not in _CATALOG_EXPRESSIONS:
        raise UnknownProblemError(f"unknown catalog id '{name}'")
    section = dict(_CATALOG_EXPRESSIONS[name])
    section["name"] = name
    return section


def from_config(config: Mapping[str, Any]) -> ProblemSpec:
    """
    Builds a problem from an expression section.

    Args:
        config: Mapping with ``d`` (int), ``f`` (str), optional ``g`` and ``h``
            (lists of str), optional ``name`` and optional ``x_star``,
            ``lambda_star``, ``mu_star`` describing a known KKT point.

    Returns:
        A ProblemSpec whose maps are expression-backed.

    Raises:
        DimensionMismatchError: If d < 1 or KKT vectors have the wrong length.
        ExpressionSyntaxError, VariableIndexError: Propagated from parsing.
    """
    d = int(config["d"])
    if d < 1:
        raise DimensionMismatchError(f"d must be at least 1, got {d}")
    g_texts: List[str] = list(config.get("g") or [])
    h_texts: List[str] = list(config.get("h") or [])
    f = ExprMap(parse_expression(str(config["f"]), d))
    g = tuple(ExprMap(parse_expression(text, d)) for text in g_texts)
    h = tuple(ExprMap(parse_expression(text, d)) for text in h_texts)

    known: Tuple[KKTGuess, ...] = ()
    if config.get("x_star") is not None:
        x_star = as_vector(config["x_star"], d, "x_star")
        lam = as_vector(config.get("lambda_star") or [], len(g), "lambda_star")
        mu = as_vector(config.get("mu_star") or [], len(h), "mu_star")
        known = (KKTGuess(x_star, lam, mu, "from configuration"),)

    name = str(config.get("name") or "custom")
    logger.debug(f"Built problem '{name}' with d={d}, m={len(g)}, n={len(h)}")
    return ProblemSpec(name=name, d=d, f=f, g=g, h=h, known_kkt=known)


# ---------------------------------------------------------------------------
# Derivative checks
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DerivativeError:
    """Maximum relative errors for one scalar map."""

    gradient_error: float
    hessian_error: float


@dataclass(frozen=True)
class DerivativeReport:
    """
    Result of comparing analytic derivatives against central differences.

    Attributes:
        point: Where the check was made.
        fd_step: The finite-difference step.
        errors: Per-map errors keyed by "f", "g1".., "h1"...
    """

    point: np.ndarray
    fd_step: float
    errors: Dict[str, DerivativeError]

    @property
    def max_error(self) -> float:
        values = [max(e.gradient_error, e.hessian_error) for e in self.errors.values()]
        return max(values) if values else 0.0

    def passed(self, tol: float = 1e-6) -> bool:
        return self.max_error <= tol

    def failures(self, tol: float = 1e-6) -> List[str]:
        return [name for name, e in self.errors.items() if max(e.gradient_error, e.hessian_error) > tol]


def _relative_error(actual: np.ndarray, expected: np.ndarray) -> float:
    if actual.size == 0:
        return 0.0
    scale = max(1.0, float(np.max(np.abs(expected))))
    return float(np.max(np.abs(actual - expected))) / scale


def _labelled_maps(problem: ProblemSpec) -> List[Tuple[str, ScalarMap]]:
    maps: List[Tuple[str, ScalarMap]] = [("f", problem.f)]
    maps += [(f"g{i + 1}", gi) for i, gi in enumerate(problem.g)]
    maps += [(f"h{j + 1}", hj) for j, hj in enumerate(problem.h)]
    return maps


def check_derivatives(problem: ProblemSpec, x: Sequence[float] | np.ndarray, fd_step: float = 1e-5) -> DerivativeReport:
    """
    Compares each map's derivatives with central differences.

    The gradient is checked against differences of values, the Hessian
    against differences of the analytic gradient.

    Args:
        problem: The problem.
        x: Point of length d.
        fd_step: Positive difference step.

    Returns:
        A DerivativeReport; failures are data, not exceptions.
    """
    if not fd_step > 0:
        raise HyperParameterError(f"fd_step must be positive, got {fd_step}")
    point = _point(problem, x)
    d = problem.d
    errors: Dict[str, DerivativeError] = {}
    for label, scalar_map in _labelled_maps(problem):
        exact = scalar_map.order2(point)
        fd_grad = np.zeros(d)
        fd_hess = np.zeros((d, d))
        for i in range(d):
            step = np.zeros(d)
            step[i] = fd_step
            fd_grad[i] = (scalar_map.value(point + step) - scalar_map.value(point - step)) / (2 * fd_step)
            fd_hess[:, i] = (scalar_map.order2(point + step).gradient - scalar_map.order2(point - step).gradient) / (
                2 * fd_step
            )
        errors[label] = DerivativeError(
            gradient_error=_relative_error(exact.gradient, fd_grad),
            hessian_error=_relative_error(exact.hessian, fd_hess),
        )
        logger.debug(f"{problem.name}/{label}: {errors[label]}")
    return DerivativeReport(point=point, fd_step=fd_step, errors=errors)


def oracle_gap(first: ProblemSpec, second: ProblemSpec, x: Sequence[float] | np.ndarray) -> float:
    """
    Largest relative disagreement between two implementations of the same problem.

    Args:
        first: E.g. a catalog problem with analytic derivatives.
        second: E.g. the same problem built from expressions.
        x: Point of length d.

    Returns:
        Max relative difference over values, gradients and Hessians of all maps.
    """
    if (first.d, first.m, first.n) != (second.d, second.m, second.n):
        raise DimensionMismatchError(f"problems '{first.name}' and '{second.name}' have different shapes")
    point = _point(first, x)
    gap = 0.0
    for (_, a), (_, b) in zip(_labelled_maps(first), _labelled_maps(second)):
        va, vb = a.order2(point), b.order2(point)
        gap = max(
            gap,
            _relative_error(np.array([va.value]), np.array([vb.value])),
            _relative_error(va.gradient, vb.gradient),
            _relative_error(va.hessian, vb.hessian),
        )
    return gap


def random_points(problem: ProblemSpec, count: int, seed: int = 0, scale: float = 2.0) -> np.ndarray:
    """Seeded uniform sample of ``count`` points in [-scale, scale]^d."""
    rng = np.random.default_rng(seed)
    return rng.uniform(-scale, scale, size=(count, problem.d))


def first_kkt(problem: ProblemSpec) -> Optional[KKTGuess]:
    return problem.known_kkt[0] if problem.known_kkt else None
