"""
Single-step primal-dual update rules and the loops that drive them.

Four rules are available through `run`:

* ``lag_gda``    dual ascent on the Lagrangian, then a primal descent step.
* ``al_gda``     primal descent on the Augmented Lagrangian, then dual ascent.
* ``lag_gd_oa``  like ``lag_gda`` with an optimistic term
                 omega * (g(x_t) - g(x_{t-1})) added to the dual step.
* ``al_gd_oa``   like ``al_gda`` with the optimistic term added to the dual
                 step (equality constraints only).

Multipliers of inequality constraints are projected onto the nonnegative
orthant after every update. `method_of_multipliers` is the classical outer
loop with an inner gradient-descent minimization of L_c.
"""

import logging
from dataclasses import dataclass, field, replace
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from .errors import DivergenceDetected, HyperParameterError, UnsupportedProblemError
from .functionals import aug_lagrangian_grad, kkt_residual, lagrangian, lagrangian_gradient
from .problems import KKTGuess, ProblemSpec, evaluate_all
from .utils import as_vector, inf_norm, positive_part

logger = logging.getLogger(__name__)

FIRST_STEP_CONVENTIONS = ("plain", "zero-diff")
DIVERGENCE_BOUND = 1e12


@dataclass(frozen=True)
class HyperParams:
    """
    Step sizes, penalty and optimism.

    Attributes:
        eta_x: Primal step size, > 0.
        eta_dual: Dual step size, > 0.
        c: Augmented Lagrangian penalty, > 0.
        omega: Optimism coefficient; negative values are allowed for
            destabilization experiments.
    """

    eta_x: float
    eta_dual: float
    c: float = 1.0
    omega: float = 0.0

    def __post_init__(self) -> None:
        for name in ("eta_x", "eta_dual", "c"):
            value = getattr(self, name)
            if not (np.isfinite(value) and value > 0):
                raise HyperParameterError(f"{name} must be a positive finite number, got {value}")
        if not np.isfinite(self.omega):
            raise HyperParameterError(f"omega must be finite, got {self.omega}")

    def updated(self, **changes: float) -> "HyperParams":
        return replace(self, **changes)

    def check_al_gda(self) -> None:
        """Raises unless 0 < eta_dual <= c, which keeps the AL-GDA multipliers nonnegative."""
        if self.eta_dual > self.c:
            raise HyperParameterError(f"al_gda requires eta_dual <= c, got eta_dual={self.eta_dual}, c={self.c}")


@dataclass(frozen=True)
class PrimalDualState:
    """
    An iterate (x, lambda, mu) with the constraint values of the previous primal point.

    Attributes:
        x: Primal vector, length d.
        lam: Inequality multipliers, nonnegative, length m.
        mu: Equality multipliers, length n.
        prev_g: g(x_{t-1}); None at t = 0.
        prev_h: h(x_{t-1}); None at t = 0.
        t: Iteration counter.
    """

    x: np.ndarray
    lam: np.ndarray
    mu: np.ndarray
    prev_g: Optional[np.ndarray] = None
    prev_h: Optional[np.ndarray] = None
    t: int = 0

    @classmethod
    def initial(
        cls,
        problem: ProblemSpec,
        x0: Sequence[float] | np.ndarray,
        lam0: Sequence[float] | np.ndarray = (),
        mu0: Sequence[float] | np.ndarray = (),
    ) -> "PrimalDualState":
        """
        Builds a t = 0 state, checking dimensions and multiplier signs.

        Empty ``lam0``/``mu0`` default to zeros.
        """
        lam = np.zeros(problem.m) if len(lam0) == 0 else as_vector(lam0, problem.m, "lambda0")
        mu = np.zeros(problem.n) if len(mu0) == 0 else as_vector(mu0, problem.n, "mu0")
        if np.any(lam < 0):
            raise HyperParameterError("initial inequality multipliers must be nonnegative")
        return cls(as_vector(x0, problem.d, "x0"), lam, mu)

    @classmethod
    def at_kkt(cls, guess: KKTGuess) -> "PrimalDualState":
        return cls(guess.x_star.copy(), guess.lambda_star.copy(), guess.mu_star.copy())

    def stacked(self) -> np.ndarray:
        """The concatenation (x, lambda, mu)."""
        return np.concatenate([self.x, self.lam, self.mu])

    def is_finite_within(self, bound: float) -> bool:
        z = self.stacked()
        return bool(np.all(np.isfinite(z)) and np.all(np.abs(z) <= bound))


@dataclass(frozen=True)
class StepMetrics:
    """Per-state diagnostics recorded along a trajectory."""

    f: float
    g: np.ndarray
    h: np.ndarray
    norm_h_inf: float
    max_g_plus: float
    lagrangian: float
    kkt_residual: float
    step_norm: float


@dataclass
class Trajectory:
    """
    The recorded run of a rule.

    ``states`` and ``metrics`` hold post-step entries only, so both are empty
    when the run stops before its first step.

    Attributes:
        rule: The rule id (or "mom" for the Method of Multipliers).
        initial: The starting state.
        initial_metrics: Metrics of the starting state.
        states: States after each step.
        metrics: Metrics after each step.
        converged: Whether the stop tolerance was reached.
    """

    rule: str
    initial: PrimalDualState
    initial_metrics: StepMetrics
    states: List[PrimalDualState] = field(default_factory=list)
    metrics: List[StepMetrics] = field(default_factory=list)
    converged: bool = False

    def append(self, state: PrimalDualState, metrics: StepMetrics) -> None:
        self.states.append(state)
        self.metrics.append(metrics)

    @property
    def final(self) -> PrimalDualState:
        return self.states[-1] if self.states else self.initial

    @property
    def final_metrics(self) -> StepMetrics:
        return self.metrics[-1] if self.metrics else self.initial_metrics

    def __len__(self) -> int:
        return len(self.states)


def displacement(first: PrimalDualState, second: PrimalDualState) -> float:
    """Infinity-norm distance between two states in (x, lambda, mu)."""
    return inf_norm(first.stacked() - second.stacked())


def measure(problem: ProblemSpec, state: PrimalDualState, previous: Optional[PrimalDualState] = None) -> StepMetrics:
    """
    Computes the diagnostics of a state.

    Args:
        problem: The problem.
        state: The state to measure.
        previous: The state before the step, for the step norm.

    Returns:
        StepMetrics for the state.
    """
    f, g, h = evaluate_all(problem, state.x)
    return StepMetrics(
        f=f,
        g=g,
        h=h,
        norm_h_inf=inf_norm(h),
        max_g_plus=inf_norm(positive_part(g)),
        lagrangian=lagrangian(problem, state.x, state.lam, state.mu),
        kkt_residual=kkt_residual(problem, state.x, state.lam, state.mu).total,
        step_norm=displacement(state, previous) if previous is not None else 0.0,
    )


# ---------------------------------------------------------------------------
# Step rules
# ---------------------------------------------------------------------------


def step_lag_gda(problem: ProblemSpec, state: PrimalDualState, hp: HyperParams) -> PrimalDualState:
    """
    One Lagrangian GDA step: dual ascent first, then primal descent.

    Args:
        problem: The problem.
        state: Current iterate.
        hp: eta_x and eta_dual are used.

    Returns:
        The next state.
    """
    _, g, h = evaluate_all(problem, state.x)
    mu = state.mu + hp.eta_dual * h
    lam = positive_part(state.lam + hp.eta_dual * g)
    x = state.x - hp.eta_x * lagrangian_gradient(problem, state.x, lam, mu)
    return PrimalDualState(x, lam, mu, prev_g=g, prev_h=h, t=state.t + 1)


def step_dual_optimistic(
    problem: ProblemSpec, state: PrimalDualState, hp: HyperParams, first_step: str = "plain"
) -> PrimalDualState:
    """
    One Lagrangian step with optimistic dual ascent.

    The dual step adds omega * (g(x_t) - g(x_{t-1})) (and likewise for h). At
    t = 0 there is no previous point: ``plain`` drops the optimistic term and
    ``zero-diff`` uses g(x_{-1}) = g(x_0); both give the same numbers.

    Args:
        problem: The problem.
        state: Current iterate.
        hp: eta_x, eta_dual and omega are used.
        first_step: One of FIRST_STEP_CONVENTIONS.

    Returns:
        The next state.
    """
    if first_step not in FIRST_STEP_CONVENTIONS:
        raise HyperParameterError(f"first_step must be one of {FIRST_STEP_CONVENTIONS}, got '{first_step}'")
    _, g, h = evaluate_all(problem, state.x)
    mu_arg = state.mu + hp.eta_dual * h
    lam_arg = state.lam + hp.eta_dual * g

    prev_g, prev_h = state.prev_g, state.prev_h
    if prev_g is None and first_step == "zero-diff":
        prev_g, prev_h = g, h
    if hp.omega != 0.0 and prev_g is not None:
        mu_arg = mu_arg + hp.omega * (h - prev_h)
        lam_arg = lam_arg + hp.omega * (g - prev_g)

    mu = mu_arg
    lam = positive_part(lam_arg)
    x = state.x - hp.eta_x * lagrangian_gradient(problem, state.x, lam, mu)
    return PrimalDualState(x, lam, mu, prev_g=g, prev_h=h, t=state.t + 1)


def _al_primal_step(problem: ProblemSpec, state: PrimalDualState, hp: HyperParams) -> np.ndarray:
    grad = aug_lagrangian_grad(problem, state.x, state.lam, state.mu, hp.c)
    return state.x - hp.eta_x * grad.grad_x


def step_al_gda(problem: ProblemSpec, state: PrimalDualState, hp: HyperParams) -> PrimalDualState:
    """
    One Augmented Lagrangian GDA step: primal descent on L_c, then dual ascent.

    The inequality update is the convex combination
    (1 - eta_dual/c) lam + (eta_dual/c) [lam + c g(x_{t+1})]_+.

    Args:
        problem: The problem.
        state: Current iterate.
        hp: eta_x, eta_dual and c are used; eta_dual <= c is required.

    Returns:
        The next state.
    """
    hp.check_al_gda()
    _, g_prev, h_prev = evaluate_all(problem, state.x)
    x = _al_primal_step(problem, state, hp)
    _, g, h = evaluate_all(problem, x)
    mu = state.mu + hp.eta_dual * h
    ratio = hp.eta_dual / hp.c
    lam = (1.0 - ratio) * state.lam + ratio * positive_part(state.lam + hp.c * g)
    return PrimalDualState(x, lam, mu, prev_g=g_prev, prev_h=h_prev, t=state.t + 1)


def step_al_optimistic(problem: ProblemSpec, state: PrimalDualState, hp: HyperParams) -> PrimalDualState:
    """
    One Augmented Lagrangian step with optimistic dual ascent.

    mu_{t+1} = mu_t + eta_dual h(x_{t+1}) + omega (h(x_{t+1}) - h(x_t)). The
    iterates coincide with ``al_gda`` at penalty c + omega when the initial
    multiplier is shifted by -omega h(x_0).

    Args:
        problem: An equality-constrained problem.
        state: Current iterate.
        hp: eta_x, eta_dual, c and omega are used.

    Returns:
        The next state.

    Raises:
        UnsupportedProblemError: If the problem has inequality constraints.
    """
    if problem.m > 0:
        raise UnsupportedProblemError(f"al_gd_oa supports equality constraints only, '{problem.name}' has m={problem.m}")
    _, g_prev, h_prev = evaluate_all(problem, state.x)
    x = _al_primal_step(problem, state, hp)
    _, _, h = evaluate_all(problem, x)
    mu = state.mu + hp.eta_dual * h
    if hp.omega != 0.0:
        mu = mu + hp.omega * (h - h_prev)
    return PrimalDualState(x, state.lam.copy(), mu, prev_g=g_prev, prev_h=h_prev, t=state.t + 1)


StepRule = Callable[[ProblemSpec, PrimalDualState, HyperParams], PrimalDualState]

RULES: Dict[str, StepRule] = {
    "lag_gda": step_lag_gda,
    "al_gda": step_al_gda,
    "lag_gd_oa": step_dual_optimistic,
    "al_gd_oa": step_al_optimistic,
}


def resolve_rule(rule: str, first_step: str = "plain") -> StepRule:
    """
    Looks up a step rule by id.

    Args:
        rule: One of the keys of RULES.
        first_step: Convention for the first optimistic step.

    Returns:
        A callable (problem, state, hp) -> state.
    """
    if rule not in RULES:
        raise HyperParameterError(f"unknown rule '{rule}', expected one of {', '.join(RULES)}")
    if rule == "lag_gd_oa":
        return lambda problem, state, hp: step_dual_optimistic(problem, state, hp, first_step=first_step)
    return RULES[rule]


def _validate(problem: ProblemSpec, rule: str, hp: HyperParams) -> None:
    if rule == "al_gda":
        hp.check_al_gda()
    if rule == "al_gd_oa" and problem.m > 0:
        raise UnsupportedProblemError(f"al_gd_oa supports equality constraints only, '{problem.name}' has m={problem.m}")
    if hp.omega < 0 and rule in ("lag_gd_oa", "al_gd_oa"):
        logger.warning(f"Running {rule} with negative optimism omega={hp.omega}")


def run(
    problem: ProblemSpec,
    rule: str,
    init: PrimalDualState,
    hp: HyperParams,
    max_steps: int,
    stop_tol: float = 1e-10,
    first_step: str = "plain",
    divergence_bound: float = DIVERGENCE_BOUND,
) -> Trajectory:
    """
    Iterates a rule until the KKT residual drops to stop_tol or the budget runs out.

    The residual is checked before every step, so a run started at a KKT
    point records no steps.

    Args:
        problem: The problem.
        rule: One of the keys of RULES.
        init: Starting state.
        hp: Hyperparameters.
        max_steps: Step budget, >= 0.
        stop_tol: KKT residual tolerance.
        first_step: Convention for the first optimistic step.
        divergence_bound: Largest allowed magnitude of any state component.

    Returns:
        The Trajectory.

    Raises:
        DivergenceDetected: When a state becomes non-finite or exceeds the
            bound; carries the last good state and the partial trajectory.
    """
    if max_steps < 0:
        raise HyperParameterError(f"max_steps must be nonnegative, got {max_steps}")
    _validate(problem, rule, hp)
    step = resolve_rule(rule, first_step)

    state = init
    with np.errstate(all="ignore"):
        trajectory = Trajectory(rule=rule, initial=init, initial_metrics=measure(problem, init))
        residual = trajectory.initial_metrics.kkt_residual
        for _ in range(max_steps):
            if residual <= stop_tol:
                break
            candidate = step(problem, state, hp)
            if not candidate.is_finite_within(divergence_bound):
                logger.debug(f"{rule} on {problem.name} left the bound at t={candidate.t}")
                raise DivergenceDetected(candidate.t, last_state=state, trajectory=trajectory)
            metrics = measure(problem, candidate, state)
            trajectory.append(candidate, metrics)
            state = candidate
            residual = metrics.kkt_residual
    trajectory.converged = residual <= stop_tol
    logger.debug(
        f"{rule} on {problem.name}: {len(trajectory)} steps, residual {residual:.3e}, converged={trajectory.converged}"
    )
    return trajectory


# ---------------------------------------------------------------------------
# Method of Multipliers
# ---------------------------------------------------------------------------

PenaltySchedule = Sequence[float] | Callable[[int], float]


def geometric_schedule(c0: float, factor: float, c_max: float) -> Callable[[int], float]:
    """Returns t -> min(c0 * factor**t, c_max)."""
    if not (c0 > 0 and factor >= 1 and c_max >= c0):
        raise HyperParameterError(f"invalid geometric schedule c0={c0}, factor={factor}, c_max={c_max}")
    return lambda t: min(c0 * factor**t, c_max)


def _penalty_at(schedule: PenaltySchedule, t: int) -> float:
    if callable(schedule):
        return float(schedule(t))
    if len(schedule) == 0:
        raise HyperParameterError("c_schedule is empty")
    return float(schedule[min(t, len(schedule) - 1)])


def method_of_multipliers(
    problem: ProblemSpec,
    init: PrimalDualState,
    c_schedule: PenaltySchedule,
    inner_tol: float = 1e-10,
    inner_max: int = 10000,
    outer_max: int = 100,
    inner_step: float = 0.05,
    outer_tol: float = 1e-10,
    divergence_bound: float = DIVERGENCE_BOUND,
) -> Trajectory:
    """
    Runs the Method of Multipliers.

    Each outer step approximately minimizes L_{c_t}(., lam, mu) by gradient
    descent, then sets mu += c_t h(x) and lam = [lam + c_t g(x)]_+.

    Args:
        problem: The problem.
        init: Starting state.
        c_schedule: Nondecreasing positive penalties, either a sequence (the
            last entry repeats) or a callable t -> c_t.
        inner_tol: Stop the inner loop when ||grad_x L_c||_inf <= inner_tol.
        inner_max: Inner iteration cap.
        outer_max: Outer iteration cap.
        inner_step: Inner gradient-descent step size.
        outer_tol: KKT residual at which the outer loop stops.
        divergence_bound: Largest allowed magnitude of the primal iterate.

    Returns:
        A Trajectory with one entry per outer step.

    Raises:
        DivergenceDetected: If the inner minimization blows up.
    """
    if not inner_step > 0:
        raise HyperParameterError(f"inner_step must be positive, got {inner_step}")
    state = init
    previous_c = 0.0
    with np.errstate(all="ignore"):
        trajectory = Trajectory(rule="mom", initial=init, initial_metrics=measure(problem, init))
        residual = trajectory.initial_metrics.kkt_residual
        for t in range(outer_max):
            if residual <= outer_tol:
                break
            c = _penalty_at(c_schedule, t)
            if not c > 0 or c < previous_c:
                raise HyperParameterError(f"c_schedule must be positive and nondecreasing, got c_{t}={c}")
            previous_c = c

            x = state.x
            for _ in range(inner_max):
                grad = aug_lagrangian_grad(problem, x, state.lam, state.mu, c).grad_x
                if inf_norm(grad) <= inner_tol:
                    break
                x = x - inner_step * grad
                if not (np.all(np.isfinite(x)) and np.all(np.abs(x) <= divergence_bound)):
                    logger.debug(f"Inner minimization of L_c at c={c} diverged in outer step {t}")
                    raise DivergenceDetected(t + 1, last_state=state, trajectory=trajectory)

            _, g, h = evaluate_all(problem, x)
            candidate = PrimalDualState(
                x,
                positive_part(state.lam + c * g),
                state.mu + c * h,
                prev_g=g,
                prev_h=h,
                t=state.t + 1,
            )
            metrics = measure(problem, candidate, state)
            trajectory.append(candidate, metrics)
            state = candidate
            residual = metrics.kkt_residual
    trajectory.converged = residual <= outer_tol
    return trajectory
