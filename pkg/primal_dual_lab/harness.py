"""
Composite experiments built on the solvers and the stability analysis.

Contains the matched-iterate equivalence runs, omega sweeps, oscillation
metrics, empirical rate estimation and the negative-optimism and
monotonic-inclusion checks.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .errors import DivergenceDetected, HyperParameterError, NoConvergentTail, UnsupportedProblemError
from .problems import KKTGuess, ProblemSpec, evaluate_all
from .solvers import (
    HyperParams,
    PrimalDualState,
    Trajectory,
    run,
    step_al_gda,
    step_al_optimistic,
    step_dual_optimistic,
)
from .stability import (
    ActivePartition,
    StabilityReport,
    analyze_al,
    analyze_og,
    active_partition,
    certify_guess,
    require_assumptions,
    require_kkt,
)
from .utils import inf_norm

logger = logging.getLogger(__name__)


@dataclass
class EquivalenceResult:
    """
    Deviation between runs that should produce matching iterates.

    Gaps are relative: ||difference||_inf / (1 + ||reference||_inf).

    Attributes:
        max_primal_gap: Largest primal gap over all steps (and pairs).
        max_dual_gap: Largest gap of the dual change of variable.
        steps: Number of steps compared.
        primal_gaps: Per-step primal gap.
        dual_gaps: Per-step dual gap.
        pairwise: Per-pair maximum primal gap for three-way comparisons.
    """

    max_primal_gap: float
    max_dual_gap: float
    steps: int
    primal_gaps: List[float] = field(default_factory=list)
    dual_gaps: List[float] = field(default_factory=list)
    pairwise: Dict[str, float] = field(default_factory=dict)


def _relative_gap(a: np.ndarray, b: np.ndarray) -> float:
    return inf_norm(a - b) / (1.0 + inf_norm(b))


def _require_equality_only(problem: ProblemSpec) -> None:
    if problem.m > 0:
        raise UnsupportedProblemError(f"'{problem.name}' has {problem.m} inequality constraints")


def _finite(*states: PrimalDualState) -> bool:
    return all(np.all(np.isfinite(s.stacked())) for s in states)


def run_equivalence_equality(
    problem: ProblemSpec,
    x0: Sequence[float] | np.ndarray,
    mu0: Sequence[float] | np.ndarray,
    hp: HyperParams,
    steps: int,
) -> EquivalenceResult:
    """
    Runs al_gda and lag_gd_oa with omega = c from matched starting points.

    lag_gd_oa starts from mu0 + (c - eta_dual) h(x0). The primal iterates
    then coincide, and mu_OG_{t+1} = mu_AL_t + c h(x_AL_t).

    Args:
        problem: An equality-constrained problem.
        x0: Common primal start.
        mu0: AL-GDA multiplier start.
        hp: Hyperparameters with omega == c.
        steps: Number of steps.

    Returns:
        The EquivalenceResult.
    """
    _require_equality_only(problem)
    if hp.omega != hp.c:
        raise HyperParameterError(f"equivalence needs omega == c, got omega={hp.omega}, c={hp.c}")
    al = PrimalDualState.initial(problem, x0, (), mu0)
    _, _, h0 = evaluate_all(problem, al.x)
    og = PrimalDualState(al.x.copy(), al.lam.copy(), al.mu + (hp.c - hp.eta_dual) * h0)

    result = EquivalenceResult(0.0, 0.0, 0)
    with np.errstate(all="ignore"):
        for _ in range(steps):
            _, _, h_al = evaluate_all(problem, al.x)
            al_next = step_al_gda(problem, al, hp)
            og_next = step_dual_optimistic(problem, og, hp)
            if not _finite(al_next, og_next):
                logger.warning(f"Equivalence run on {problem.name} left the finite range at t={al.t + 1}")
                break
            result.dual_gaps.append(_relative_gap(og_next.mu, al.mu + hp.c * h_al))
            result.primal_gaps.append(_relative_gap(og_next.x, al_next.x))
            al, og = al_next, og_next
    result.steps = len(result.primal_gaps)
    result.max_primal_gap = max(result.primal_gaps, default=0.0)
    result.max_dual_gap = max(result.dual_gaps, default=0.0)
    logger.info(
        f"Equivalence on {problem.name} (c=omega={hp.c}, eta_dual={hp.eta_dual}): "
        f"primal gap {result.max_primal_gap:.3e}, dual gap {result.max_dual_gap:.3e}"
    )
    return result


def run_compounding_check(
    problem: ProblemSpec,
    x0: Sequence[float] | np.ndarray,
    mu0: Sequence[float] | np.ndarray,
    c: float,
    omega: float,
    eta: float,
    steps: int,
) -> EquivalenceResult:
    """
    Compares al_gd_oa(c, omega) with al_gda(c + omega) and lag_gd_oa(omega' = c + omega).

    Starting multipliers: mu0 for al_gd_oa, mu0 - omega h(x0) for al_gda and
    mu0 + (c - eta) h(x0) for lag_gd_oa.

    Args:
        problem: An equality-constrained problem.
        x0: Common primal start.
        mu0: al_gd_oa multiplier start.
        c: Penalty of al_gd_oa.
        omega: Optimism of al_gd_oa.
        eta: Primal and dual step size for all three runs.
        steps: Number of steps.

    Returns:
        An EquivalenceResult whose ``pairwise`` holds the three pairwise
        primal gaps; the dual gap tracks mu_OA_t = mu_AL_t + omega h(x_t).
    """
    _require_equality_only(problem)
    hp_oa = HyperParams(eta, eta, c, omega)
    hp_al = HyperParams(eta, eta, c + omega, 0.0)
    hp_og = HyperParams(eta, eta, c + omega, c + omega)

    oa = PrimalDualState.initial(problem, x0, (), mu0)
    _, _, h0 = evaluate_all(problem, oa.x)
    al = PrimalDualState(oa.x.copy(), oa.lam.copy(), oa.mu - omega * h0)
    og = PrimalDualState(oa.x.copy(), oa.lam.copy(), oa.mu + (c - eta) * h0)
    logger.info(
        f"Compounding check on {problem.name}: al_gda starts from mu0 - {omega}*h(x0), "
        f"lag_gd_oa from mu0 + {c - eta}*h(x0)"
    )

    pairs = {"al_gd_oa~al_gda": [], "al_gd_oa~lag_gd_oa": [], "al_gda~lag_gd_oa": []}
    dual_gaps: List[float] = []
    with np.errstate(all="ignore"):
        for _ in range(steps):
            oa_next = step_al_optimistic(problem, oa, hp_oa)
            al_next = step_al_gda(problem, al, hp_al)
            og_next = step_dual_optimistic(problem, og, hp_og)
            if not _finite(oa_next, al_next, og_next):
                logger.warning(f"Compounding run on {problem.name} left the finite range at t={oa.t + 1}")
                break
            pairs["al_gd_oa~al_gda"].append(_relative_gap(oa_next.x, al_next.x))
            pairs["al_gd_oa~lag_gd_oa"].append(_relative_gap(oa_next.x, og_next.x))
            pairs["al_gda~lag_gd_oa"].append(_relative_gap(al_next.x, og_next.x))
            _, _, h_next = evaluate_all(problem, al_next.x)
            dual_gaps.append(_relative_gap(oa_next.mu, al_next.mu + omega * h_next))
            oa, al, og = oa_next, al_next, og_next

    pairwise = {name: max(gaps, default=0.0) for name, gaps in pairs.items()}
    primal = [max(values) for values in zip(*pairs.values())]
    return EquivalenceResult(
        max_primal_gap=max(pairwise.values()),
        max_dual_gap=max(dual_gaps, default=0.0),
        steps=len(primal),
        primal_gaps=primal,
        dual_gaps=dual_gaps,
        pairwise=pairwise,
    )


@dataclass(frozen=True)
class OscillationMetrics:
    """
    Sign-change statistics of the constraint values along a trajectory.

    Attributes:
        sign_changes: Per constraint ("g1", "h1", ...), the number of t with
            value_t * value_{t+1} < 0.
        overshoots: Completed excursions: for inequalities, runs of
            violation that end back in the feasible set; for equalities,
            pairs of sign changes.
        tail_amplitude: Largest violation (|h|, [g]_+) over the last tenth
            of the trajectory.
    """

    sign_changes: Dict[str, int]
    overshoots: int
    tail_amplitude: float

    @property
    def total_sign_changes(self) -> int:
        return sum(self.sign_changes.values())


def oscillation_metrics(trajectory: Trajectory, feas_tol: float = 0.0) -> OscillationMetrics:
    """
    Counts how often the iterates cross constraint boundaries.

    Args:
        trajectory: A recorded run; the initial state is included.
        feas_tol: Violations at or below this count as feasible.

    Returns:
        The OscillationMetrics.
    """
    records = [trajectory.initial_metrics] + trajectory.metrics
    g = np.array([r.g for r in records]).reshape(len(records), -1)
    h = np.array([r.h for r in records]).reshape(len(records), -1)

    sign_changes: Dict[str, int] = {}
    overshoots = 0
    for i in range(g.shape[1]):
        series = g[:, i]
        sign_changes[f"g{i + 1}"] = int(np.sum(series[:-1] * series[1:] < 0))
        violated = series > feas_tol
        # a violation run that ends feasible after having started feasible
        overshoots += int(np.sum(~violated[:-1] & violated[1:] & _returns_feasible(violated)))
    for j in range(h.shape[1]):
        series = h[:, j]
        changes = int(np.sum(series[:-1] * series[1:] < 0))
        sign_changes[f"h{j + 1}"] = changes
        overshoots += changes // 2

    tail = max(1, math.ceil(len(records) / 10))
    violation = np.concatenate([np.abs(h[-tail:]).ravel(), np.maximum(g[-tail:], 0.0).ravel()])
    return OscillationMetrics(sign_changes, overshoots, float(np.max(violation)) if violation.size else 0.0)


def _returns_feasible(violated: np.ndarray) -> np.ndarray:
    """For each entry into violation (index t -> t+1), whether a later index is feasible again."""
    later_feasible = np.zeros(violated.shape[0], dtype=bool)
    seen = False
    for t in range(violated.shape[0] - 1, -1, -1):
        later_feasible[t] = seen
        seen = seen or not violated[t]
    return later_feasible[1:]


@dataclass(frozen=True)
class SweepRow:
    """
    One omega of a sweep.

    Attributes:
        omega: Optimism (and penalty c for the AL side).
        spectral_radius: rho(J_OG).
        max_abs_imag: Largest |Im| over the spectrum of J_OG.
        condition_number: kappa(J_OG).
        is_lssp: rho(J_OG) < 1 - margin.
        al_spectral_radius: rho(J_AL) at c = omega, when eta_dual <= omega.
        sign_changes: From a paired lag_gd_oa trajectory, when requested.
    """

    omega: float
    spectral_radius: float
    max_abs_imag: float
    condition_number: float
    is_lssp: bool
    al_spectral_radius: Optional[float] = None
    sign_changes: Optional[int] = None


def _certified_partition(problem: ProblemSpec, guess: KKTGuess) -> ActivePartition:
    cert = certify_guess(problem, guess)
    require_assumptions(cert)
    require_kkt(cert)
    return active_partition(problem, cert)


def omega_sweep(
    problem: ProblemSpec,
    kkt: KKTGuess,
    hp_base: HyperParams,
    omegas: Sequence[float],
    paired_init: Optional[PrimalDualState] = None,
    paired_steps: int = 0,
) -> List[SweepRow]:
    """
    Evaluates J_OG (and J_AL at c = omega) along an increasing omega grid.

    Args:
        problem: The problem.
        kkt: A KKT point satisfying the regularity assumptions.
        hp_base: Step sizes; omega and c are overridden per row.
        omegas: Strictly increasing grid.
        paired_init: Start of an optional lag_gd_oa run per row.
        paired_steps: Length of that run; 0 disables it.

    Returns:
        One SweepRow per omega.

    Raises:
        AssumptionViolated: If the point fails the regularity checks.
    """
    grid = [float(w) for w in omegas]
    if not grid:
        raise HyperParameterError("omega grid is empty")
    if any(b <= a for a, b in zip(grid, grid[1:])):
        raise HyperParameterError(f"omega grid must be strictly increasing, got {grid}")
    partition = _certified_partition(problem, kkt)

    rows: List[SweepRow] = []
    for omega in grid:
        hp = hp_base.updated(omega=omega, c=omega) if omega > 0 else hp_base.updated(omega=omega)
        og = analyze_og(partition, hp)
        al_radius = analyze_al(partition, hp).spectral_radius if omega > 0 and hp.eta_dual <= hp.c else None
        changes = None
        if paired_init is not None and paired_steps > 0:
            try:
                trajectory = run(problem, "lag_gd_oa", paired_init, hp, paired_steps, stop_tol=0.0)
                changes = oscillation_metrics(trajectory).total_sign_changes
            except DivergenceDetected as e:
                logger.warning(f"Paired run at omega={omega} diverged at t={e.step}")
        rows.append(
            SweepRow(
                omega=omega,
                spectral_radius=og.spectral_radius,
                max_abs_imag=og.max_abs_imag,
                condition_number=og.condition_number,
                is_lssp=og.is_lssp,
                al_spectral_radius=al_radius,
                sign_changes=changes,
            )
        )
        logger.debug(f"omega={omega}: rho={og.spectral_radius:.6g}, kappa={og.condition_number:.6g}")
    return rows


def damping_threshold(rows: Sequence[SweepRow], imag_tol: float = 1e-12) -> Optional[float]:
    """First omega from which max_abs_imag stays <= imag_tol for the rest of the sweep."""
    threshold = None
    for row in rows:
        if row.max_abs_imag <= imag_tol:
            threshold = row.omega if threshold is None else threshold
        else:
            threshold = None
    return threshold


def halving_grid(start: float = 0.1, stop: float = 1e-4) -> List[float]:
    """start, start/2, start/4, ... down to (and including values >=) stop."""
    if not (start > 0 and stop > 0):
        raise HyperParameterError("halving grid bounds must be positive")
    grid = []
    value = start
    while value >= stop:
        grid.append(value)
        value /= 2.0
    return grid


@dataclass(frozen=True)
class InclusionResult:
    """Per-omega stabilizability with the step size that achieved it."""

    stabilizable: Dict[float, bool]
    eta_found: Dict[float, Optional[float]]
    is_up_set: bool


def monotonic_inclusion_check(
    problem: ProblemSpec, kkt: KKTGuess, omegas: Sequence[float], eta_grid: Sequence[float]
) -> InclusionResult:
    """
    Searches, per omega, for step sizes making the KKT point an LSSP of lag_gd_oa.

    Args:
        problem: The problem.
        kkt: A KKT point satisfying the regularity assumptions.
        omegas: Increasing positive grid; c = omega.
        eta_grid: Step sizes tried (eta_x = eta_dual), e.g. `halving_grid()`.

    Returns:
        The InclusionResult; ``is_up_set`` holds when every omega after a
        stabilizable one is stabilizable too.
    """
    if len(eta_grid) == 0:
        raise HyperParameterError("eta_grid is empty")
    partition = _certified_partition(problem, kkt)
    stabilizable: Dict[float, bool] = {}
    eta_found: Dict[float, Optional[float]] = {}
    for omega in omegas:
        eta_found[omega] = None
        for eta in eta_grid:
            hp = HyperParams(eta, eta, c=omega, omega=omega)
            if analyze_og(partition, hp).is_lssp:
                eta_found[omega] = eta
                break
        stabilizable[omega] = eta_found[omega] is not None
    verdicts = list(stabilizable.values())
    is_up_set = all(later for i, v in enumerate(verdicts) if v for later in verdicts[i:])
    return InclusionResult(stabilizable, eta_found, is_up_set)


def negative_optimism_check(
    problem: ProblemSpec, kkt: KKTGuess, hp_base: HyperParams, omega_neg: float
) -> StabilityReport:
    """
    Analyzes J_OG with a negative optimism coefficient.

    Args:
        problem: The problem.
        kkt: A KKT point satisfying the regularity assumptions.
        hp_base: Step sizes.
        omega_neg: Strictly negative optimism.

    Returns:
        The StabilityReport of J_OG.
    """
    if not omega_neg < 0:
        raise HyperParameterError(f"omega_neg must be negative, got {omega_neg}")
    partition = _certified_partition(problem, kkt)
    report = analyze_og(partition, hp_base.updated(omega=omega_neg))
    logger.warning(f"Negative optimism omega={omega_neg} on {problem.name}: rho(J_OG)={report.spectral_radius:.6g}")
    return report


def destabilizing_omega(partition: ActivePartition) -> Optional[float]:
    """
    An optimism value at which A + omega B^T B has a negative eigenvalue.

    min(-(lambda_min(A) + 1) / lambda_min+(B^T B), -1), where lambda_min+ is
    the smallest nonzero eigenvalue of B^T B. None when B is empty.
    """
    if partition.dual_size == 0:
        return None
    BtB = partition.B.T @ partition.B
    eigs = np.linalg.eigvalsh(BtB)
    nonzero = eigs[eigs > max(BtB.shape) * np.finfo(float).eps * max(eigs[-1], 1.0)]
    if nonzero.size == 0:
        return None
    a_min = float(np.linalg.eigvalsh(0.5 * (partition.A + partition.A.T))[0])
    return min(-(a_min + 1.0) / float(nonzero[0]), -1.0)


def estimate_linear_rate(
    trajectory: Trajectory,
    target_point: np.ndarray,
    tail_fraction: float = 0.25,
    window: Tuple[float, float] = (1e-10, 1e-3),
) -> float:
    """
    Geometric-mean contraction of ||(x, lambda, mu)_t - target|| over the tail.

    Only steps whose error lies inside ``window`` are used, and of those the
    last ``tail_fraction``.

    Args:
        trajectory: A converging trajectory.
        target_point: Stacked (x*, lambda*, mu*).
        tail_fraction: Share of the window kept.
        window: (lower, upper) error bounds.

    Returns:
        The estimated per-step rate.

    Raises:
        NoConvergentTail: If the run does not end inside the window's upper
            bound or fewer than two steps qualify.
    """
    lower, upper = window
    states = [trajectory.initial] + trajectory.states
    errors = np.array([np.linalg.norm(s.stacked() - target_point) for s in states])
    if not np.isfinite(errors[-1]) or errors[-1] > upper:
        raise NoConvergentTail(f"final error {errors[-1]:.3e} is above {upper:.1e}")
    indices = np.flatnonzero((errors >= lower) & (errors <= upper))
    if indices.size < 2:
        raise NoConvergentTail("fewer than two errors fall inside the rate window")
    keep = max(2, math.ceil(tail_fraction * indices.size))
    tail = indices[-keep:]
    first, last = int(tail[0]), int(tail[-1])
    return float((errors[last] / errors[first]) ** (1.0 / (last - first)))


@dataclass(frozen=True)
class LSSPCheck:
    """Spectral verdict next to the outcome of a perturbed run."""

    rule: str
    spectral_radius: float
    is_lssp: bool
    converged: bool
    final_residual: float


def lssp_convergence_check(
    problem: ProblemSpec,
    kkt: KKTGuess,
    rule: str,
    hp: HyperParams,
    perturbation: float = 1e-3,
    steps: int = 5000,
    tol: float = 1e-8,
) -> LSSPCheck:
    """
    Runs a rule from a perturbed KKT point and compares with the spectral verdict.

    Args:
        problem: The problem.
        kkt: A KKT point satisfying the regularity assumptions.
        rule: "al_gda" or "lag_gd_oa".
        hp: Hyperparameters.
        perturbation: Added to every component of (x*, lambda*, mu*).
        steps: Step budget.
        tol: Residual counted as converged.

    Returns:
        The LSSPCheck.
    """
    analyzers = {"al_gda": analyze_al, "lag_gd_oa": analyze_og}
    if rule not in analyzers:
        raise HyperParameterError(f"no Jacobian for rule '{rule}'")
    report = analyzers[rule](_certified_partition(problem, kkt), hp)
    init = PrimalDualState(
        kkt.x_star + perturbation,
        kkt.lambda_star + perturbation,
        kkt.mu_star + perturbation,
    )
    try:
        trajectory = run(problem, rule, init, hp, steps, stop_tol=tol)
        converged, residual = trajectory.converged, trajectory.final_metrics.kkt_residual
    except DivergenceDetected:
        converged, residual = False, float("inf")
    return LSSPCheck(rule, report.spectral_radius, report.is_lssp, converged, residual)
