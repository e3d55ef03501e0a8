"""
Named property suites run by the ``verify`` command.

Each suite exercises one family of properties on the problem catalog and
returns a SuiteResult; failures are collected as data so every suite runs
to the end. ``run_suites`` executes a selection, ``format_table`` renders
the pass/fail table and ``summary`` the JSON-ready digest.
"""

import logging
import time
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np
from tabulate import tabulate

from .errors import ConfigError, DivergenceDetected, LabError, NoConvergentTail
from .harness import (
    destabilizing_omega,
    estimate_linear_rate,
    lssp_convergence_check,
    negative_optimism_check,
    omega_sweep,
    oscillation_metrics,
    run_compounding_check,
    run_equivalence_equality,
)
from .problems import (
    CATALOG_IDS,
    builtin,
    catalog_expressions,
    check_derivatives,
    first_kkt,
    from_config,
    oracle_gap,
    random_points,
)
from .solvers import RULES, HyperParams, PrimalDualState, displacement, resolve_rule, run
from .stability import (
    ActivePartition,
    StabilityReport,
    active_partition,
    analyze_al,
    analyze_og,
    certify_guess,
    char_poly_residuals,
    complementarity_fixed_point,
    convexification_threshold,
    eigen_analysis,
    feasible_complementary,
    require_assumptions,
    verify_spectral_relation,
)

logger = logging.getLogger(__name__)

PERTURBATION = 0.5


@dataclass(frozen=True)
class VerifyOptions:
    """
    Knobs shared by all suites.

    Attributes:
        seed: Seed of the randomized suites.
        perturb: Shift one entry of every analyzed Jacobian (sabotage hook).
        instances: Random instances of the complementarity suite.
        derivative_points: Random points per problem in the derivative suite.
        fd_step: Central-difference step.
        derivative_tol: Relative tolerance of the derivative oracles.
    """

    seed: int = 0
    perturb: bool = False
    instances: int = 500
    derivative_points: int = 100
    fd_step: float = 1e-5
    derivative_tol: float = 1e-6


@dataclass
class SuiteResult:
    name: str
    passed: bool
    checks: int
    failures: List[str] = field(default_factory=list)
    elapsed: float = 0.0

    @property
    def detail(self) -> str:
        if not self.failures:
            return f"{self.checks} checks"
        more = f" (+{len(self.failures) - 1} more)" if len(self.failures) > 1 else ""
        return self.failures[0] + more


class _Checks:
    """Accumulates named expectations."""

    def __init__(self) -> None:
        self.count = 0
        self.failures: List[str] = []

    def expect(self, ok: bool, label: str) -> None:
        self.count += 1
        if not ok:
            self.failures.append(label)
            logger.debug(f"FAILED {label}")


def _partition(name: str) -> ActivePartition:
    problem = builtin(name)
    cert = certify_guess(problem, first_kkt(problem))
    require_assumptions(cert)
    return active_partition(problem, cert)


def _analyze(partition: ActivePartition, hp: HyperParams, family: str, perturb: bool) -> StabilityReport:
    report = analyze_al(partition, hp) if family == "al" else analyze_og(partition, hp)
    if not perturb:
        return report
    J = report.jacobian.copy()
    J[0, 0] += PERTURBATION
    trivial = report.trivial_eigs
    return eigen_analysis(J, trivial.value, trivial.expected)


def _perturbed_start(name: str, offset: float) -> PrimalDualState:
    guess = first_kkt(builtin(name))
    return PrimalDualState(guess.x_star + offset, guess.lambda_star.copy(), guess.mu_star.copy())


# ---------------------------------------------------------------------------
# Suites
# ---------------------------------------------------------------------------


def suite_equivalence(checks: _Checks, options: VerifyOptions) -> None:
    """AL-GDA and Lag-GD-OA with omega = c produce the same primal iterates on equality problems."""
    for name in ("NC-EQ", "QP-EQ", "OSC-EQ"):
        problem = builtin(name)
        guess = first_kkt(problem)
        for c in (0.5, 2.0, 10.0):
            for eta_dual in (0.1 * c, c):
                hp = HyperParams(0.1, eta_dual, c=c, omega=c)
                result = run_equivalence_equality(problem, guess.x_star + 0.1, guess.mu_star, hp, 2000)
                label = f"{name} c={c} eta_dual={eta_dual:g}"
                checks.expect(result.max_primal_gap <= 1e-9, f"{label}: primal gap {result.max_primal_gap:.2e}")
                checks.expect(result.max_dual_gap <= 1e-9, f"{label}: dual gap {result.max_dual_gap:.2e}")


def suite_spectral_relation(checks: _Checks, options: VerifyOptions) -> None:
    """rho(J_AL) = max(rho(J_OG), 1 - eta_dual/c) at omega = c."""
    for name in ("INEQ-ACT", "INEQ-INACT", "MIXED-2", "NC-EQ"):
        partition = _partition(name)
        for c in (1.0, 3.0):
            for eta in (0.05, 0.1):
                hp = HyperParams(eta, eta, c=c, omega=c)
                al = _analyze(partition, hp, "al", options.perturb)
                og = _analyze(partition, hp, "og", options.perturb)
                relation = verify_spectral_relation(al, og, hp, partition.inactive_count)
                checks.expect(relation.gap <= 1e-8, f"{name} c={c} eta={eta}: gap {relation.gap:.2e}")
    al = _analyze(_partition("INEQ-ACT"), HyperParams(0.1, 0.1, c=1.0, omega=1.0), "al", options.perturb)
    checks.expect(
        abs(al.spectral_radius - 0.9270156) <= 1e-6, f"INEQ-ACT rho(J_AL)={al.spectral_radius:.8f}, expected 0.9270156"
    )


def suite_fixed_points(checks: _Checks, options: VerifyOptions) -> None:
    """KKT points are fixed points of every rule, and converged states are KKT points."""
    hp = HyperParams(0.1, 0.1, c=1.0, omega=1.0)
    for name in CATALOG_IDS:
        problem = builtin(name)
        guess = first_kkt(problem)
        state = PrimalDualState.at_kkt(guess)
        for rule in RULES:
            if rule == "al_gd_oa" and problem.m > 0:
                continue
            moved = displacement(resolve_rule(rule)(problem, state, hp), state)
            checks.expect(moved <= 1e-14, f"{name}/{rule}: KKT point moved by {moved:.2e}")

        init = PrimalDualState(guess.x_star + 1e-3, guess.lambda_star + 1e-3, guess.mu_star + 1e-3)
        trajectory = run(problem, "al_gda", init, HyperParams(0.1, 0.1, c=3.0), 5000, stop_tol=0.0)
        states = [trajectory.initial] + trajectory.states
        settled = [
            metrics.kkt_residual
            for previous, current, metrics in zip(states, states[1:], trajectory.metrics)
            if displacement(current, previous) <= 1e-14
        ]
        checks.expect(bool(settled), f"{name}: al_gda never settled")
        if settled:
            checks.expect(max(settled) <= 1e-10, f"{name}: settled state has residual {max(settled):.2e}")


def suite_char_poly(checks: _Checks, options: VerifyOptions) -> None:
    """Every eigenvalue of J_AL and J_OG is a root of its characteristic polynomial."""
    settings = (HyperParams(0.05, 0.1, c=1.0, omega=1.0), HyperParams(0.1, 0.1, c=3.0, omega=3.0))
    for name in CATALOG_IDS:
        partition = _partition(name)
        for hp in settings:
            for family in ("al", "og"):
                report = _analyze(partition, hp, family, options.perturb)
                worst = max(char_poly_residuals(report, partition, hp, family), default=0.0)
                label = f"{name} {family} eta_x={hp.eta_x} c={hp.c}"
                checks.expect(worst <= 1e-8, f"{label}: residual {worst:.2e}")
                trivial = report.trivial_eigs
                checks.expect(
                    trivial.matches,
                    f"{label}: eigenvalue {trivial.value:g} seen {trivial.observed}x, expected {trivial.expected}x",
                )


def suite_complementarity(checks: _Checks, options: VerifyOptions) -> None:
    """lam = [lam + k g]_+ exactly when g <= 0 and lam * g = 0."""
    # every (lam, g) sign pattern of a single component
    for lam in (0.0, 0.7):
        for g in (-1.3, 0.0, 2.1):
            for k in (0.01, 1.0, 50.0):
                lhs = complementarity_fixed_point(np.array([lam]), np.array([g]), k)
                rhs = feasible_complementary(np.array([lam]), np.array([g]))
                checks.expect(lhs == rhs, f"lam={lam} g={g} k={k}: {lhs} vs {rhs}")

    rng = np.random.default_rng(options.seed)
    counterexamples = 0
    for _ in range(options.instances):
        m = int(rng.integers(1, 6))
        lam = np.where(rng.random(m) < 0.5, 0.0, rng.uniform(0.1, 5.0, m))
        pattern = rng.integers(-1, 2, m)
        g = pattern * rng.uniform(0.1, 5.0, m)
        k = float(rng.uniform(0.01, 10.0))
        componentwise = all(
            complementarity_fixed_point(lam[i : i + 1], g[i : i + 1], k) for i in range(m)
        ) == feasible_complementary(lam, g)
        if complementarity_fixed_point(lam, g, k) != feasible_complementary(lam, g) or not componentwise:
            counterexamples += 1
    checks.expect(counterexamples == 0, f"{counterexamples} counterexamples in {options.instances} instances")


def suite_nonconvex_recovery(checks: _Checks, options: VerifyOptions) -> None:
    """On NC-EQ plain Lag-GDA is repelled while AL-GDA and Lag-GD-OA with c = omega = 3 converge."""
    problem = builtin("NC-EQ")
    guess = first_kkt(problem)
    init = _perturbed_start("NC-EQ", 1e-2)
    target = PrimalDualState.at_kkt(guess)
    try:
        trajectory = run(problem, "lag_gda", init, HyperParams(0.1, 0.1), 500, stop_tol=0.0)
        distance = displacement(trajectory.final, target)
        checks.expect(distance > 1e-2, f"lag_gda ended at distance {distance:.2e}")
    except DivergenceDetected as e:
        checks.expect(True, f"lag_gda diverged at t={e.step}")

    for rule, hp in (("al_gda", HyperParams(0.1, 0.1, c=3.0)), ("lag_gd_oa", HyperParams(0.1, 0.1, c=3.0, omega=3.0))):
        try:
            trajectory = run(problem, rule, init, hp, 5000, stop_tol=1e-8)
            residual = trajectory.final_metrics.kkt_residual
            checks.expect(trajectory.converged, f"{rule}: residual {residual:.2e} after {len(trajectory)} steps")
        except DivergenceDetected as e:
            checks.expect(False, f"{rule}: diverged at t={e.step}")


def suite_threshold(checks: _Checks, options: VerifyOptions) -> None:
    """The smallest convexifying penalty is 2 on NC-EQ and 0 on INEQ-ACT."""
    nc = convexification_threshold(_partition("NC-EQ"))
    checks.expect(abs(nc - 2.0) <= 1e-6, f"NC-EQ threshold {nc!r}")
    act = convexification_threshold(_partition("INEQ-ACT"))
    checks.expect(act == 0.0, f"INEQ-ACT threshold {act!r}")


def suite_rates(checks: _Checks, options: VerifyOptions) -> None:
    """Empirical tail contraction matches the spectral radius within 5%."""
    cases = (
        ("INEQ-ACT", "al_gda", HyperParams(0.1, 0.1, c=1.0)),
        ("QP-EQ", "lag_gd_oa", HyperParams(0.1, 1.0, c=1.0, omega=1.0)),
    )
    for name, rule, hp in cases:
        problem = builtin(name)
        guess = first_kkt(problem)
        report = _analyze(_partition(name), hp, "al" if rule == "al_gda" else "og", options.perturb)
        target = np.concatenate([guess.x_star, guess.lambda_star, guess.mu_star])
        try:
            trajectory = run(problem, rule, _perturbed_start(name, 1e-3), hp, 2000, stop_tol=0.0)
            rate = estimate_linear_rate(trajectory, target)
        except (DivergenceDetected, NoConvergentTail) as e:
            checks.expect(False, f"{name}/{rule}: {e}")
            continue
        rho = report.spectral_radius
        checks.expect(abs(rate - rho) <= 0.05 * rho, f"{name}/{rule}: rate {rate:.6f} vs rho {rho:.6f}")

        lssp = lssp_convergence_check(problem, guess, rule, hp)
        checks.expect(lssp.is_lssp == lssp.converged, f"{name}/{rule}: LSSP {lssp.is_lssp}, converged {lssp.converged}")


def suite_damping(checks: _Checks, options: VerifyOptions) -> None:
    """Large enough optimism removes the rotation of OSC-EQ's dynamics."""
    problem = builtin("OSC-EQ")
    rows = omega_sweep(problem, first_kkt(problem), HyperParams(0.1, 0.1), [0.5, 1.0, 2.0, 4.0, 8.0])
    for row in rows:
        if row.omega >= 2.0:
            checks.expect(row.max_abs_imag <= 1e-12, f"omega={row.omega}: max |Im| {row.max_abs_imag:.2e}")
    checks.expect(rows[0].max_abs_imag > 0.0, "omega=0.5 spectrum is real")

    init = PrimalDualState.initial(problem, [0.0], (), [0.0])
    baseline = oscillation_metrics(run(problem, "lag_gda", init, HyperParams(0.1, 0.1), 400, stop_tol=0.0))
    damped = oscillation_metrics(
        run(problem, "lag_gd_oa", init, HyperParams(0.1, 0.1, c=4.0, omega=4.0), 400, stop_tol=0.0)
    )
    checks.expect(baseline.total_sign_changes >= 10, f"lag_gda sign changes {baseline.total_sign_changes}")
    checks.expect(damped.total_sign_changes <= 2, f"omega=4 sign changes {damped.total_sign_changes}")


def suite_conditioning(checks: _Checks, options: VerifyOptions) -> None:
    """kappa(J_OG) grows with omega wherever constraints couple to the primal block."""
    omegas = (1.0, 1e2, 1e4)
    for name in CATALOG_IDS:
        partition = _partition(name)
        if partition.dual_size == 0:
            continue
        kappas = [_analyze(partition, HyperParams(0.1, 0.1, c=w, omega=w), "og", options.perturb).condition_number for w in omegas]
        increasing = all(b > a for a, b in zip(kappas, kappas[1:]))
        checks.expect(increasing, f"{name}: kappa {['%.3g' % k for k in kappas]} not increasing")
        checks.expect(kappas[-1] >= 10 * kappas[0], f"{name}: kappa grew only from {kappas[0]:.3g} to {kappas[-1]:.3g}")


def suite_negative_optimism(checks: _Checks, options: VerifyOptions) -> None:
    """Negative optimism can destabilize a point that is stable for small |omega|."""
    problem = builtin("INEQ-ACT")
    guess = first_kkt(problem)
    hp = HyperParams(0.1, 0.1, c=1.0)
    unstable = negative_optimism_check(problem, guess, hp, -2.0)
    checks.expect(unstable.spectral_radius > 1.0, f"omega=-2: rho {unstable.spectral_radius:.6f}")
    stable = negative_optimism_check(problem, guess, hp, -0.5)
    checks.expect(stable.spectral_radius < 1.0, f"omega=-0.5: rho {stable.spectral_radius:.6f}")
    omega = destabilizing_omega(_partition("INEQ-ACT"))
    checks.expect(omega is not None and omega < 0, f"destabilizing omega {omega}")
    if omega is not None:
        report = negative_optimism_check(problem, guess, hp, omega)
        checks.expect(report.spectral_radius > 1.0, f"omega={omega}: rho {report.spectral_radius:.6f}")


def suite_compounding(checks: _Checks, options: VerifyOptions) -> None:
    """AL-GD-OA(c, omega) tracks AL-GDA(c + omega) and Lag-GD-OA(c + omega)."""
    for name in ("NC-EQ", "QP-EQ"):
        guess = first_kkt(builtin(name))
        result = run_compounding_check(builtin(name), guess.x_star + 0.1, guess.mu_star, 1.0, 2.0, 0.1, 2000)
        for pair, gap in result.pairwise.items():
            checks.expect(gap <= 1e-9, f"{name} {pair}: gap {gap:.2e}")


def suite_derivatives(checks: _Checks, options: VerifyOptions) -> None:
    """Analytic, expression-based and finite-difference derivatives agree."""
    for name in CATALOG_IDS:
        analytic = builtin(name)
        parsed = from_config(catalog_expressions(name))
        worst_fd, worst_gap = 0.0, 0.0
        for x in random_points(analytic, options.derivative_points, options.seed):
            worst_fd = max(
                worst_fd,
                check_derivatives(analytic, x, options.fd_step).max_error,
                check_derivatives(parsed, x, options.fd_step).max_error,
            )
            worst_gap = max(worst_gap, oracle_gap(analytic, parsed, x))
        checks.expect(worst_fd <= options.derivative_tol, f"{name}: finite-difference error {worst_fd:.2e}")
        checks.expect(worst_gap <= options.derivative_tol, f"{name}: analytic vs parsed gap {worst_gap:.2e}")


SuiteFn = Callable[[_Checks, VerifyOptions], None]

SUITES: Dict[str, SuiteFn] = {
    "equivalence": suite_equivalence,
    "spectral-relation": suite_spectral_relation,
    "fixed-points": suite_fixed_points,
    "char-poly": suite_char_poly,
    "complementarity": suite_complementarity,
    "nonconvex-recovery": suite_nonconvex_recovery,
    "threshold": suite_threshold,
    "rates": suite_rates,
    "damping": suite_damping,
    "conditioning": suite_conditioning,
    "negative-optimism": suite_negative_optimism,
    "compounding": suite_compounding,
    "derivatives": suite_derivatives,
}


def run_suite(name: str, options: VerifyOptions) -> SuiteResult:
    """
    Runs one suite, turning library errors into failures.

    Args:
        name: A key of SUITES.
        options: Shared options.

    Returns:
        The SuiteResult.
    """
    checks = _Checks()
    start = time.perf_counter()
    try:
        SUITES[name](checks, options)
    except LabError as e:
        checks.expect(False, f"{type(e).__name__}: {e}")
    elapsed = time.perf_counter() - start
    result = SuiteResult(name, not checks.failures, checks.count, checks.failures, elapsed)
    logger.info(f"Suite {name}: {'pass' if result.passed else 'FAIL'} ({checks.count} checks, {elapsed:.2f}s)")
    return result


def run_suites(names: Optional[Sequence[str]], options: VerifyOptions) -> List[SuiteResult]:
    """
    Runs the selected suites in registry order.

    Args:
        names: Suite names, or None for all.
        options: Shared options.

    Returns:
        One SuiteResult per selected suite.

    Raises:
        ConfigError: If a name is not a known suite.
    """
    selected = list(SUITES) if not names else list(names)
    unknown = [n for n in selected if n not in SUITES]
    if unknown:
        raise ConfigError(f"unknown suite {', '.join(unknown)}; expected one of {', '.join(SUITES)}")
    if options.perturb:
        logger.warning(f"Jacobian entry (0, 0) is shifted by {PERTURBATION} in every analysis")
    return [run_suite(name, options) for name in SUITES if name in selected]


def format_table(results: Sequence[SuiteResult]) -> str:
    rows = [[r.name, "pass" if r.passed else "FAIL", r.checks, f"{r.elapsed:.2f}", r.detail] for r in results]
    return tabulate(rows, headers=["suite", "result", "checks", "seconds", "detail"], tablefmt="simple")


def summary(results: Sequence[SuiteResult]) -> Dict[str, object]:
    """JSON-ready digest; timings are left out so the file is reproducible."""
    return {
        "passed": all(r.passed for r in results),
        "suites": {r.name: {"passed": r.passed, "checks": r.checks, "failures": list(r.failures)} for r in results},
    }
