"""
Order-2 forward-mode evaluation of expression trees.

Every intermediate result is a truncated Taylor expansion carrying the value,
the gradient and the (symmetric) Hessian with respect to x1..xd, so one pass
over the tree yields all three. Nonlinear primitives go through the scalar
chain rule H = phi'(u) H_u + phi''(u) g_u g_u^T.
"""

import logging
import math
from dataclasses import dataclass
from typing import Callable, Dict, Tuple

import numpy as np

from .errors import DimensionMismatchError, DomainViolationError
from .parser import Binary, Const, ExprTree, Node, Unary, Var, to_text

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class SecondOrderValue:
    """
    Value, gradient and Hessian of a scalar map at a point.

    Attributes:
        value: f(x).
        gradient: Vector of length d.
        hessian: Symmetric d x d matrix.
    """

    value: float
    gradient: np.ndarray
    hessian: np.ndarray


@dataclass(frozen=True)
class Taylor2:
    """A truncated second-order expansion used as the evaluation carrier."""

    value: float
    grad: np.ndarray
    hess: np.ndarray

    @classmethod
    def constant(cls, value: float, d: int) -> "Taylor2":
        return cls(float(value), np.zeros(d), np.zeros((d, d)))

    @classmethod
    def variable(cls, index: int, point: np.ndarray) -> "Taylor2":
        d = point.shape[0]
        grad = np.zeros(d)
        grad[index - 1] = 1.0
        return cls(float(point[index - 1]), grad, np.zeros((d, d)))

    def is_constant(self) -> bool:
        return not self.grad.any() and not self.hess.any()

    def __add__(self, other: "Taylor2") -> "Taylor2":
        return Taylor2(self.value + other.value, self.grad + other.grad, self.hess + other.hess)

    def __sub__(self, other: "Taylor2") -> "Taylor2":
        return Taylor2(self.value - other.value, self.grad - other.grad, self.hess - other.hess)

    def __neg__(self) -> "Taylor2":
        return Taylor2(-self.value, -self.grad, -self.hess)

    def __mul__(self, other: "Taylor2") -> "Taylor2":
        cross = np.outer(self.grad, other.grad)
        return Taylor2(
            self.value * other.value,
            self.value * other.grad + other.value * self.grad,
            self.value * other.hess + other.value * self.hess + cross + cross.T,
        )

    def compose(self, f0: float, f1: float, f2: float) -> "Taylor2":
        """
        Applies a scalar function given its value and first two derivatives at self.value.

        Args:
            f0: phi(u).
            f1: phi'(u).
            f2: phi''(u).

        Returns:
            The expansion of phi(u).
        """
        hess = f1 * self.hess
        if f2 != 0.0:
            hess = hess + f2 * np.outer(self.grad, self.grad)
        return Taylor2(f0, f1 * self.grad, hess)


def _sin(u: float) -> Tuple[float, float, float]:
    s, c = math.sin(u), math.cos(u)
    return s, c, -s


def _cos(u: float) -> Tuple[float, float, float]:
    s, c = math.sin(u), math.cos(u)
    return c, -s, -c


def _exp(u: float) -> Tuple[float, float, float]:
    e = math.exp(u)
    return e, e, e


def _log(u: float) -> Tuple[float, float, float]:
    return math.log(u), 1.0 / u, -1.0 / (u * u)


def _sqrt(u: float) -> Tuple[float, float, float]:
    s = math.sqrt(u)
    return s, 0.5 / s, -0.25 / (s * u)


_FUNCTIONS: Dict[str, Callable[[float], Tuple[float, float, float]]] = {
    "sin": _sin,
    "cos": _cos,
    "exp": _exp,
    "log": _log,
    "sqrt": _sqrt,
}
_POSITIVE_ARGUMENT = frozenset({"log", "sqrt"})


class Order2Evaluator:
    """
    Walks an expression tree with Taylor2 arithmetic at a fixed point.

    Attributes:
        point: The evaluation point, length d.
    """

    def __init__(self, point: np.ndarray) -> None:
        self.point = point
        self.d = point.shape[0]

    def evaluate(self, node: Node) -> Taylor2:
        if isinstance(node, Const):
            return Taylor2.constant(node.value, self.d)
        if isinstance(node, Var):
            return Taylor2.variable(node.index, self.point)
        if isinstance(node, Unary):
            return self._unary(node)
        return self._binary(node)

    def _unary(self, node: Unary) -> Taylor2:
        operand = self.evaluate(node.operand)
        if node.op == "neg":
            return -operand
        if node.op in _POSITIVE_ARGUMENT and not operand.value > 0.0:
            raise DomainViolationError(
                f"{node.op} of non-positive value {operand.value!r} in {to_text(node)}", node
            )
        return operand.compose(*_FUNCTIONS[node.op](operand.value))

    def _binary(self, node: Binary) -> Taylor2:
        left = self.evaluate(node.left)
        right = self.evaluate(node.right)
        if node.op == "add":
            return left + right
        if node.op == "sub":
            return left - right
        if node.op == "mul":
            return left * right
        if node.op == "div":
            return left * self._reciprocal(right, node)
        return self._power(left, right, node)

    @staticmethod
    def _reciprocal(u: Taylor2, node: Node) -> Taylor2:
        if u.value == 0.0:
            raise DomainViolationError(f"division by zero in {to_text(node)}", node)
        inv = 1.0 / u.value
        return u.compose(inv, -inv * inv, 2.0 * inv * inv * inv)

    def _power(self, base: Taylor2, exponent: Taylor2, node: Binary) -> Taylor2:
        """
        Raises base to exponent.

        A constant integral exponent is handled for any base (negative powers
        still need a nonzero base); anything else requires a positive base and
        is evaluated as exp(exponent * log(base)).
        """
        if exponent.is_constant() and float(exponent.value).is_integer():
            n = int(exponent.value)
            u = base.value
            if n == 0:
                return Taylor2.constant(1.0, self.d)
            if n < 0 and u == 0.0:
                raise DomainViolationError(f"zero raised to negative power in {to_text(node)}", node)
            f1 = n * u ** (n - 1)
            f2 = n * (n - 1) * u ** (n - 2) if n != 1 else 0.0
            return base.compose(u**n, f1, f2)
        if not base.value > 0.0:
            raise DomainViolationError(
                f"non-integer power of non-positive base {base.value!r} in {to_text(node)}", node
            )
        product = exponent * base.compose(*_log(base.value))
        return product.compose(*_exp(product.value))


def eval_order2(tree: ExprTree, point: np.ndarray) -> SecondOrderValue:
    """
    Evaluates value, gradient and Hessian of an expression at a point.

    Args:
        tree: A parsed expression.
        point: Vector of length tree.d.

    Returns:
        The SecondOrderValue at the point. Results are exact to rounding for
        polynomial trees.

    Raises:
        DimensionMismatchError: If the point has the wrong length.
        DomainViolationError: On log/sqrt of a non-positive value, division by
            zero or an invalid power; the offending node is attached.
    """
    x = np.asarray(point, dtype=float).reshape(-1)
    if x.shape[0] != tree.d:
        raise DimensionMismatchError(f"point has length {x.shape[0]}, expected {tree.d}")
    try:
        result = Order2Evaluator(x).evaluate(tree.root)
    except OverflowError as e:
        raise DomainViolationError(f"overflow evaluating {tree.to_text()}: {e}", tree.root) from e
    if not math.isfinite(result.value):
        raise DomainViolationError(f"non-finite value evaluating {tree.to_text()}", tree.root)
    return SecondOrderValue(result.value, result.grad, result.hess)
