"""
Exception hierarchy for primal_dual_lab.

Library code raises these; only the command-line layer turns them into exit
codes and diagnostics. Every exception carries a short ``reason`` string that
is safe to print on a single line.
"""

from typing import Any, Dict, List, Optional, Sequence


class LabError(Exception):
    """Base class for all errors raised by the package."""

    reason: str = "error"

    def __init__(self, message: str, reason: Optional[str] = None) -> None:
        super().__init__(message)
        if reason is not None:
            self.reason = reason


class ExpressionSyntaxError(LabError):
    """Malformed expression text; ``offset`` is the byte offset of the problem."""

    reason = "syntax error"

    def __init__(self, message: str, offset: int) -> None:
        super().__init__(f"{message} at offset {offset}")
        self.offset = offset


class UnknownIdentifierError(ExpressionSyntaxError):
    reason = "unknown identifier"

    def __init__(self, name: str, offset: int) -> None:
        super().__init__(f"unknown identifier '{name}'", offset)
        self.name = name


class VariableIndexError(LabError):
    reason = "variable index exceeds d"

    def __init__(self, index: int, d: int) -> None:
        super().__init__(f"variable x{index} is outside x1..x{d}")
        self.index = index
        self.d = d


class DomainViolationError(LabError):
    """An evaluation left the domain of a primitive (log of 0, division by 0...)."""

    reason = "domain violation"

    def __init__(self, message: str, node: Any = None) -> None:
        super().__init__(message)
        self.node = node


class DimensionMismatchError(LabError):
    reason = "dimension mismatch"


class HyperParameterError(LabError):
    reason = "invalid hyperparameters"


class UnknownProblemError(LabError):
    reason = "unknown catalog id"


class ConfigError(LabError):
    reason = "config error"


class NotAKKTPoint(ConfigError):
    """A claimed KKT point whose residual exceeds the tolerance."""

    reason = "not a KKT point"

    def __init__(self, residual: float, tol: float) -> None:
        super().__init__(f"KKT residual {residual:.3e} exceeds tolerance {tol:.1e}")
        self.residual = residual
        self.tol = tol


class UnsupportedProblemError(LabError):
    """The operation only covers equality-constrained problems."""

    reason = "inequality constraints present"


class NondifferentiablePointError(LabError):
    """Raised when some lambda_i + c*g_i(x) sits on the kink of the AL penalty."""

    reason = "nondifferentiable point"

    def __init__(self, index: int, value: float) -> None:
        super().__init__(f"lambda_{index + 1} + c*g_{index + 1}(x) = {value!r} is within the margin")
        self.index = index
        self.value = value


class StrictComplementarityViolated(LabError):
    reason = "strict complementarity violated"

    def __init__(self, indices: Sequence[int]) -> None:
        names = ", ".join(str(i + 1) for i in indices)
        super().__init__(f"strict complementarity fails for constraints {names}")
        self.indices = list(indices)


class AssumptionViolated(LabError):
    reason = "assumption violated"

    def __init__(self, verdicts: Dict[str, bool]) -> None:
        failed = sorted(name for name, ok in verdicts.items() if not ok)
        super().__init__(f"regularity assumptions failed: {', '.join(failed)}")
        self.verdicts = dict(verdicts)
        if failed == ["strict_cs"]:
            self.reason = StrictComplementarityViolated.reason


class DivergenceDetected(LabError):
    """An iterate became non-finite or exceeded the divergence bound."""

    reason = "divergence"

    def __init__(self, step: int, last_state: Any = None, trajectory: Any = None) -> None:
        super().__init__(f"iterates diverged at t={step}")
        self.step = step
        self.last_state = last_state
        self.trajectory = trajectory


class NoConvergentTail(LabError):
    reason = "no convergent tail"


class EigenNonConvergence(LabError):
    reason = "eigenvalue iteration did not converge"

    def __init__(self, message: str, matrix: Any = None, partial: Optional[List[Any]] = None) -> None:
        super().__init__(message)
        self.matrix = matrix
        self.partial = partial or []
