"""
Lagrangian and Augmented Lagrangian functionals.

For penalty c > 0 the Augmented Lagrangian is

    L_c(x, lam, mu) = f(x) + (1/2c) (||[lam + c g(x)]_+||^2 - ||lam||^2)
                           + mu^T h(x) + (c/2) ||h(x)||^2

It is differentiable in x except where some lam_i + c g_i(x) = 0, and twice
differentiable everywhere else. The Hessian is only assembled away from that
set.
"""

import logging
from dataclasses import dataclass
from typing import Sequence, Tuple

import numpy as np

from .errors import HyperParameterError, NondifferentiablePointError
from .problems import ProblemSpec, differentiate, evaluate_all
from .utils import as_vector, inf_norm, positive_part

logger = logging.getLogger(__name__)

Vector = Sequence[float] | np.ndarray


def _multipliers(problem: ProblemSpec, lam: Vector, mu: Vector) -> Tuple[np.ndarray, np.ndarray]:
    return as_vector(lam, problem.m, "lambda"), as_vector(mu, problem.n, "mu")


def _check_penalty(c: float) -> None:
    if not c > 0:
        raise HyperParameterError(f"penalty c must be positive, got {c}")


@dataclass(frozen=True)
class ALGradient:
    """
    Gradient of the Augmented Lagrangian.

    Attributes:
        grad_x: Primal gradient, length d.
        grad_lambda: (1/c)([lam + c g]_+ - lam), length m.
        grad_mu: h(x), length n.
    """

    grad_x: np.ndarray
    grad_lambda: np.ndarray
    grad_mu: np.ndarray


@dataclass(frozen=True)
class ALHessian:
    """
    Hessian blocks of the Augmented Lagrangian over (x, lam, mu).

    The lam-mu, mu-lam and mu-mu blocks are zero.

    Attributes:
        xx: d x d primal block.
        x_lambda: d x m, Jg^T restricted to the active columns.
        x_mu: d x n, Jh^T.
        lambda_lambda: m x m diagonal, -(1/c)(I - I_A).
        active_indicator: 0/1 vector of length m marking lam_i + c g_i > 0.
    """

    xx: np.ndarray
    x_lambda: np.ndarray
    x_mu: np.ndarray
    lambda_lambda: np.ndarray
    active_indicator: np.ndarray

    def assembled(self) -> np.ndarray:
        d, m = self.x_lambda.shape
        n = self.x_mu.shape[1]
        full = np.zeros((d + m + n, d + m + n))
        full[:d, :d] = self.xx
        full[:d, d : d + m] = self.x_lambda
        full[d : d + m, :d] = self.x_lambda.T
        full[:d, d + m :] = self.x_mu
        full[d + m :, :d] = self.x_mu.T
        full[d : d + m, d : d + m] = self.lambda_lambda
        return full


@dataclass(frozen=True)
class KKTResidual:
    """
    Componentwise KKT residuals, all as infinity norms.

    Attributes:
        stationarity: ||grad f + Jg^T lam + Jh^T mu||.
        equality: ||h||.
        inequality: ||[g]_+||.
        complementarity: max |lam_i g_i|.
    """

    stationarity: float
    equality: float
    inequality: float
    complementarity: float

    @property
    def total(self) -> float:
        return max(self.stationarity, self.equality, self.inequality, self.complementarity)


def lagrangian(problem: ProblemSpec, x: Vector, lam: Vector, mu: Vector) -> float:
    """
    Evaluates f(x) + lam^T g(x) + mu^T h(x).

    Args:
        problem: The problem.
        x: Primal point.
        lam: Inequality multipliers (nonnegative).
        mu: Equality multipliers.

    Returns:
        The Lagrangian value.
    """
    lam_v, mu_v = _multipliers(problem, lam, mu)
    f, g, h = evaluate_all(problem, x)
    return float(f + lam_v @ g + mu_v @ h)


def lagrangian_gradient(problem: ProblemSpec, x: Vector, lam: Vector, mu: Vector) -> np.ndarray:
    """Primal gradient of the Lagrangian."""
    lam_v, mu_v = _multipliers(problem, lam, mu)
    der = differentiate(problem, x)
    return der.grad_f + der.jac_g.T @ lam_v + der.jac_h.T @ mu_v


def lagrangian_hessian(problem: ProblemSpec, x: Vector, lam: Vector, mu: Vector) -> np.ndarray:
    """Primal Hessian of the Lagrangian."""
    lam_v, mu_v = _multipliers(problem, lam, mu)
    der = differentiate(problem, x)
    return (
        der.hess_f
        + np.tensordot(lam_v, der.hess_g, axes=(0, 0))
        + np.tensordot(mu_v, der.hess_h, axes=(0, 0))
    )


def aug_lagrangian_value(problem: ProblemSpec, x: Vector, lam: Vector, mu: Vector, c: float) -> float:
    """
    Evaluates the Augmented Lagrangian.

    Each inequality contributes lam_i g_i + (c/2) g_i^2 when lam_i + c g_i >= 0
    and -lam_i^2 / (2c) otherwise, which equals the compact form without its
    cancellation for small c.

    Args:
        problem: The problem.
        x: Primal point.
        lam: Inequality multipliers (nonnegative).
        mu: Equality multipliers.
        c: Penalty, strictly positive.

    Returns:
        L_c(x, lam, mu).
    """
    _check_penalty(c)
    lam_v, mu_v = _multipliers(problem, lam, mu)
    f, g, h = evaluate_all(problem, x)
    shifted = lam_v + c * g
    inequality = np.where(shifted >= 0.0, lam_v * g + 0.5 * c * g * g, -lam_v * lam_v / (2.0 * c))
    return float(f + np.sum(inequality) + mu_v @ h + 0.5 * c * (h @ h))


def aug_lagrangian_grad(problem: ProblemSpec, x: Vector, lam: Vector, mu: Vector, c: float) -> ALGradient:
    """
    Gradient of the Augmented Lagrangian in (x, lam, mu).

    Args:
        problem: The problem.
        x: Primal point.
        lam: Inequality multipliers (nonnegative).
        mu: Equality multipliers.
        c: Penalty, strictly positive.

    Returns:
        An ALGradient with grad_mu equal to h(x).
    """
    _check_penalty(c)
    lam_v, mu_v = _multipliers(problem, lam, mu)
    der = differentiate(problem, x)
    clipped = positive_part(lam_v + c * der.g)
    return ALGradient(
        grad_x=der.grad_f + der.jac_g.T @ clipped + der.jac_h.T @ (mu_v + c * der.h),
        grad_lambda=(clipped - lam_v) / c,
        grad_mu=der.h.copy(),
    )


def aug_lagrangian_hessian(
    problem: ProblemSpec, x: Vector, lam: Vector, mu: Vector, c: float, margin: float = 1e-10
) -> ALHessian:
    """
    Hessian blocks of the Augmented Lagrangian.

    Args:
        problem: The problem.
        x: Primal point.
        lam: Inequality multipliers (nonnegative).
        mu: Equality multipliers.
        c: Penalty, strictly positive.
        margin: Distance from the kink below which the point is rejected.

    Returns:
        The ALHessian.

    Raises:
        NondifferentiablePointError: If |lam_i + c g_i(x)| <= margin for some i.
    """
    _check_penalty(c)
    lam_v, mu_v = _multipliers(problem, lam, mu)
    der = differentiate(problem, x)
    shifted = lam_v + c * der.g
    for i, value in enumerate(shifted):
        if abs(value) <= margin:
            raise NondifferentiablePointError(i, float(value))

    active = (shifted > 0.0).astype(float)
    clipped = positive_part(shifted)
    xx = (
        der.hess_f
        + np.tensordot(clipped, der.hess_g, axes=(0, 0))
        + np.tensordot(mu_v + c * der.h, der.hess_h, axes=(0, 0))
        + c * (der.jac_h.T @ der.jac_h + der.jac_g.T @ (active[:, None] * der.jac_g))
    )
    return ALHessian(
        xx=xx,
        x_lambda=der.jac_g.T * active[None, :],
        x_mu=der.jac_h.T.copy(),
        lambda_lambda=np.diag(-(1.0 - active) / c),
        active_indicator=active,
    )


def kkt_residual(problem: ProblemSpec, x: Vector, lam: Vector, mu: Vector) -> KKTResidual:
    """
    Computes stationarity, feasibility and complementarity residuals.

    Args:
        problem: The problem.
        x: Primal point.
        lam: Inequality multipliers.
        mu: Equality multipliers.

    Returns:
        A KKTResidual whose ``total`` is the stopping criterion of the solvers.
    """
    lam_v, mu_v = _multipliers(problem, lam, mu)
    der = differentiate(problem, x)
    stationarity = der.grad_f + der.jac_g.T @ lam_v + der.jac_h.T @ mu_v
    return KKTResidual(
        stationarity=inf_norm(stationarity),
        equality=inf_norm(der.h),
        inequality=inf_norm(positive_part(der.g)),
        complementarity=inf_norm(lam_v * der.g),
    )
