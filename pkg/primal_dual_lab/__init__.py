"""
Primal-dual methods for smooth constrained optimization.

Expression-defined or catalog problems, Lagrangian and Augmented Lagrangian
step rules with optional optimistic multiplier updates, and the local
stability analysis of their iteration Jacobians at KKT points.
"""

from .errors import LabError
from .parser import ExprTree, parse_expression
from .problems import CATALOG_IDS, KKTGuess, ProblemSpec, builtin, from_config
from .solvers import HyperParams, PrimalDualState, Trajectory, method_of_multipliers, run
from .stability import StabilityReport, analyze_point
from .taylor import eval_order2

__all__ = [
    "CATALOG_IDS",
    "ExprTree",
    "HyperParams",
    "KKTGuess",
    "LabError",
    "PrimalDualState",
    "ProblemSpec",
    "StabilityReport",
    "Trajectory",
    "analyze_point",
    "builtin",
    "eval_order2",
    "from_config",
    "method_of_multipliers",
    "parse_expression",
    "run",
]
