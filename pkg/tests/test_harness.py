import numpy as np
import pytest

from primal_dual_lab.errors import HyperParameterError, NoConvergentTail, NotAKKTPoint, UnsupportedProblemError
from primal_dual_lab.harness import (
    SweepRow,
    damping_threshold,
    destabilizing_omega,
    estimate_linear_rate,
    halving_grid,
    lssp_convergence_check,
    monotonic_inclusion_check,
    negative_optimism_check,
    omega_sweep,
    oscillation_metrics,
    run_compounding_check,
    run_equivalence_equality,
)
from primal_dual_lab.problems import CATALOG_IDS, KKTGuess, builtin, first_kkt
from primal_dual_lab.solvers import HyperParams, PrimalDualState, StepMetrics, Trajectory, run
from primal_dual_lab.stability import analyze_al, analyze_og

# (problem, c = omega, eta_x, eta_dual)
EQUIVALENCE_CASES = [
    ("NC-EQ", 3.0, 0.1, 0.1),
    ("QP-EQ", 2.0, 0.05, 0.05),
    ("OSC-EQ", 1.0, 0.1, 0.5),
]

# (problem, c, omega, eta)
COMPOUNDING_CASES = [
    ("NC-EQ", 1.0, 2.0, 0.1),
    ("QP-EQ", 0.5, 1.5, 0.1),
]

# (problem, rule, hyperparameters) for the empirical rate checks
RATE_CASES = [
    ("INEQ-ACT", "al_gda", HyperParams(0.1, 0.1, c=1.0)),
    ("QP-EQ", "lag_gd_oa", HyperParams(0.1, 1.0, c=1.0, omega=1.0)),
]

# Settings for the spectral-verdict runs: a stabilizing penalty and one under
# which NC-EQ loses stability; the convex problems stay stable under both.
VERDICT_SETTINGS = [
    HyperParams(0.1, 0.1, c=3.0, omega=3.0),
    HyperParams(0.1, 0.1, c=0.5, omega=0.5),
]

# Catalog problems with a nonempty active Jacobian
CONSTRAINED_IDS = [name for name in CATALOG_IDS if name != "INEQ-INACT"]


def _stacked_kkt(name):
    guess = first_kkt(builtin(name))
    return np.concatenate([guess.x_star, guess.lambda_star, guess.mu_star])


def _metrics(g):
    g = np.array([g])
    return StepMetrics(0.0, g, np.zeros(0), 0.0, max(g[0], 0.0), 0.0, 0.0, 0.0)


@pytest.mark.parametrize("name, c, eta_x, eta_dual", EQUIVALENCE_CASES)
def test_equivalence_of_matched_runs(name, c, eta_x, eta_dual):
    """
    Tests that al_gda and lag_gd_oa with omega = c produce the same primal iterates.

    Args:
        name: Catalog id of an equality-constrained problem.
        c: Penalty and optimism.
        eta_x: Primal step.
        eta_dual: Dual step.
    """
    problem = builtin(name)
    result = run_equivalence_equality(problem, np.zeros(problem.d), [0.0], HyperParams(eta_x, eta_dual, c, c), 2000)
    assert result.steps == 2000
    assert result.max_primal_gap <= 1e-9
    assert result.max_dual_gap <= 1e-9
    assert len(result.primal_gaps) == len(result.dual_gaps) == 2000


def test_equivalence_rejects_mismatched_optimism():
    with pytest.raises(HyperParameterError):
        run_equivalence_equality(builtin("NC-EQ"), [0.0], [0.0], HyperParams(0.1, 0.1, c=3.0, omega=2.0), 10)


def test_equivalence_rejects_inequalities():
    with pytest.raises(UnsupportedProblemError):
        run_equivalence_equality(builtin("MIXED-2"), [0.0, 0.0], [], HyperParams(0.1, 0.1, c=1.0, omega=1.0), 10)


@pytest.mark.parametrize("name, c, omega, eta", COMPOUNDING_CASES)
def test_compounding_matches_larger_penalty(name, c, omega, eta):
    problem = builtin(name)
    result = run_compounding_check(problem, np.zeros(problem.d), [0.0], c, omega, eta, 2000)
    assert result.steps == 2000
    assert set(result.pairwise) == {"al_gd_oa~al_gda", "al_gd_oa~lag_gd_oa", "al_gda~lag_gd_oa"}
    assert result.max_primal_gap <= 1e-9
    assert result.max_dual_gap <= 1e-9


def test_compounding_without_optimism_is_exact():
    result = run_compounding_check(builtin("NC-EQ"), [0.2], [0.5], 3.0, 0.0, 0.1, 200)
    assert result.pairwise["al_gd_oa~al_gda"] == 0.0


def test_compounding_rejects_inequalities():
    with pytest.raises(UnsupportedProblemError):
        run_compounding_check(builtin("INEQ-ACT"), [0.0], [], 1.0, 1.0, 0.1, 10)


def test_oscillation_metrics_on_synthetic_series():
    problem = builtin("INEQ-ACT")
    states = [PrimalDualState.initial(problem, [0.0]) for _ in range(5)]
    values = [-1.0, 0.5, -0.2, 0.3, 0.4]
    trajectory = Trajectory("lag_gda", states[0], _metrics(values[0]), states[1:], [_metrics(v) for v in values[1:]])
    metrics = oscillation_metrics(trajectory)
    assert metrics.sign_changes == {"g1": 3}
    # the last excursion never returns to the feasible set
    assert metrics.overshoots == 1
    assert metrics.tail_amplitude == pytest.approx(0.4)


def test_optimism_removes_oscillations():
    problem = builtin("OSC-EQ")
    init = PrimalDualState.initial(problem, [0.0], (), [0.0])
    plain = run(problem, "lag_gda", init, HyperParams(0.1, 0.1), 400, stop_tol=0.0)
    damped = run(problem, "lag_gd_oa", init, HyperParams(0.1, 0.1, c=4.0, omega=4.0), 400, stop_tol=0.0)
    assert oscillation_metrics(plain).sign_changes["h1"] >= 10
    assert oscillation_metrics(damped).total_sign_changes <= 2


def test_omega_sweep_damps_complex_spectrum():
    problem = builtin("OSC-EQ")
    init = PrimalDualState.initial(problem, [0.0], (), [0.0])
    rows = omega_sweep(problem, first_kkt(problem), HyperParams(0.1, 0.1), [0.5, 1.0, 2.0, 4.0, 8.0], init, 400)
    assert [r.omega for r in rows] == [0.5, 1.0, 2.0, 4.0, 8.0]
    assert rows[0].max_abs_imag > 0
    assert all(r.max_abs_imag <= 1e-12 for r in rows[2:])
    assert damping_threshold(rows, imag_tol=1e-12) == 1.0
    assert all(r.al_spectral_radius is not None and r.sign_changes is not None for r in rows)
    assert rows[3].spectral_radius == pytest.approx(0.9796, abs=1e-4)


def test_omega_sweep_rejects_unsorted_grid():
    problem = builtin("OSC-EQ")
    with pytest.raises(HyperParameterError):
        omega_sweep(problem, first_kkt(problem), HyperParams(0.1, 0.1), [1.0, 1.0])


def test_condition_number_grows_with_omega():
    problem = builtin("QP-EQ")
    rows = omega_sweep(problem, first_kkt(problem), HyperParams(0.1, 0.1), [1.0, 1e2, 1e4])
    kappas = [r.condition_number for r in rows]
    assert kappas[0] < kappas[1] < kappas[2]
    assert kappas[2] >= 10 * kappas[0]


def test_damping_threshold_needs_a_real_tail():
    rows = [
        SweepRow(omega, 0.9, imag, 1.0, True)
        for omega, imag in [(1.0, 0.1), (2.0, 0.0), (3.0, 0.2), (4.0, 0.0), (5.0, 0.0)]
    ]
    assert damping_threshold(rows) == 4.0
    assert damping_threshold(rows[:3]) is None


def test_halving_grid():
    assert halving_grid(0.1, 0.02) == [0.1, 0.05, 0.025]
    with pytest.raises(HyperParameterError):
        halving_grid(0.0, 1e-4)


def test_monotonic_inclusion_on_nonconvex_problem():
    problem = builtin("NC-EQ")
    result = monotonic_inclusion_check(problem, first_kkt(problem), [1.0, 2.5, 5.0, 10.0], halving_grid())
    assert result.stabilizable == {1.0: False, 2.5: True, 5.0: True, 10.0: True}
    assert result.eta_found[1.0] is None
    assert result.is_up_set


def test_negative_optimism(partition_of):
    problem = builtin("INEQ-ACT")
    hp = HyperParams(0.1, 0.1)
    assert destabilizing_omega(partition_of("INEQ-ACT")) == pytest.approx(-2.0)
    assert destabilizing_omega(partition_of("INEQ-INACT")) is None

    unstable = negative_optimism_check(problem, first_kkt(problem), hp, -2.0)
    assert unstable.spectral_radius > 1.0
    assert not unstable.is_lssp

    mild = negative_optimism_check(problem, first_kkt(problem), hp, -0.5)
    assert mild.is_lssp

    with pytest.raises(HyperParameterError):
        negative_optimism_check(problem, first_kkt(problem), hp, 0.0)


@pytest.mark.parametrize("name, rule, hp", RATE_CASES)
def test_empirical_rate_matches_spectral_radius(name, rule, hp, partition_of):
    problem = builtin(name)
    guess = first_kkt(problem)
    init = PrimalDualState(guess.x_star + 1e-3, guess.lambda_star + 1e-3, guess.mu_star + 1e-3)
    trajectory = run(problem, rule, init, hp, 2000, stop_tol=0.0)
    analyze = analyze_al if rule == "al_gda" else analyze_og
    rho = analyze(partition_of(name), hp).spectral_radius
    rate = estimate_linear_rate(trajectory, _stacked_kkt(name))
    assert abs(rate - rho) <= 0.05 * rho


def test_rate_estimate_needs_a_convergent_tail():
    problem = builtin("NC-EQ")
    trajectory = run(problem, "al_gda", PrimalDualState.initial(problem, [5.0]), HyperParams(0.1, 0.1, c=3.0), 0)
    with pytest.raises(NoConvergentTail):
        estimate_linear_rate(trajectory, _stacked_kkt("NC-EQ"))


def test_lssp_verdict_agrees_with_runs():
    problem = builtin("NC-EQ")
    guess = first_kkt(problem)
    stable = lssp_convergence_check(problem, guess, "lag_gd_oa", HyperParams(0.1, 0.1, c=3.0, omega=3.0))
    assert stable.is_lssp and stable.converged

    unstable = lssp_convergence_check(problem, guess, "lag_gd_oa", HyperParams(0.1, 0.1, c=0.5, omega=0.5))
    assert unstable.spectral_radius > 1.0
    assert not unstable.is_lssp and not unstable.converged

    with pytest.raises(HyperParameterError):
        lssp_convergence_check(problem, guess, "lag_gda", HyperParams(0.1, 0.1))


@pytest.mark.parametrize("hp", VERDICT_SETTINGS)
@pytest.mark.parametrize("rule", ["al_gda", "lag_gd_oa"])
def test_spectral_verdict_predicts_local_convergence(catalog_problem, rule, hp):
    """
    Tests that runs from a perturbed KKT point converge exactly when the point is an LSSP.

    Args:
        catalog_problem: Every catalog problem.
        rule: The step rule whose Jacobian is analyzed.
        hp: Step sizes with c = omega.
    """
    check = lssp_convergence_check(catalog_problem, first_kkt(catalog_problem), rule, hp)
    assert check.is_lssp == check.converged
    if check.converged:
        assert check.final_residual <= 1e-8


@pytest.mark.parametrize("name", CONSTRAINED_IDS)
def test_destabilizing_omega_breaks_stability(name, partition_of):
    problem = builtin(name)
    omega = destabilizing_omega(partition_of(name))
    assert omega <= -1.0
    report = negative_optimism_check(problem, first_kkt(problem), HyperParams(0.1, 0.1), omega)
    assert report.spectral_radius > 1.0
    assert not report.is_lssp


def test_real_spectrum_persists_as_omega_grows(catalog_problem):
    rows = omega_sweep(catalog_problem, first_kkt(catalog_problem), HyperParams(0.1, 0.1), [0.5, 1.0, 2.0, 4.0, 8.0])
    real = [row.max_abs_imag <= 1e-12 for row in rows]
    # once real, the spectrum stays real
    assert real == sorted(real)
    first_real = next(row.omega for row, ok in zip(rows, real) if ok)
    assert damping_threshold(rows) == first_real


def test_damping_threshold_ignores_rounding_noise():
    problem = builtin("QP-EQ")
    rows = omega_sweep(problem, first_kkt(problem), HyperParams(0.1, 0.1), [0.5, 1.0, 2.0, 4.0, 8.0])
    assert rows[0].max_abs_imag > 0.05
    assert damping_threshold(rows) == 1.0
    assert damping_threshold(rows, imag_tol=0.1) == 0.5


def test_sweep_rejects_a_point_that_is_not_kkt():
    problem = builtin("INEQ-ACT")
    guess = KKTGuess(np.array([0.5]), np.array([1.0]), np.array([]))
    with pytest.raises(NotAKKTPoint):
        omega_sweep(problem, guess, HyperParams(0.1, 0.1), [1.0, 2.0])
