import numpy as np
import pytest
from numpy.testing import assert_allclose

from primal_dual_lab.errors import DimensionMismatchError, UnknownProblemError, VariableIndexError
from primal_dual_lab.functionals import kkt_residual
from primal_dual_lab.problems import (
    CATALOG_IDS,
    KKTGuess,
    ProblemSpec,
    ScalarMap,
    builtin,
    catalog_expressions,
    check_derivatives,
    constraint_hessians,
    evaluate_all,
    first_kkt,
    from_config,
    jacobians,
    oracle_gap,
    random_points,
)
from primal_dual_lab.taylor import SecondOrderValue

# (problem, x, f, g, h)
EVALUATE_CASES = [
    ("NC-EQ", [0.0], 0.0, [], [-1.0]),
    ("INEQ-ACT", [1.0], 0.5, [0.0], []),
    ("MIXED-2", [1.0, 0.0], 0.5, [0.0, -5.0], []),
    ("QP-EQ", [1.0, 1.0], 1.5, [], [1.0]),
    ("INEQ-INACT", [0.0], 0.0, [-1.0], []),
]

# (problem, x*, lambda*, mu*)
KNOWN_KKT = [
    ("QP-EQ", [2.0 / 3.0, 1.0 / 3.0], [], [-2.0 / 3.0]),
    ("OSC-EQ", [1.0], [], [-1.0]),
    ("NC-EQ", [1.0], [], [2.0]),
    ("INEQ-ACT", [1.0], [1.0], []),
    ("INEQ-INACT", [0.0], [0.0], []),
    ("MIXED-2", [1.0, 0.0], [1.0, 0.0], []),
]


@pytest.mark.parametrize("name, x, f, g, h", EVALUATE_CASES)
def test_evaluate_all(name, x, f, g, h):
    value, g_val, h_val = evaluate_all(builtin(name), x)
    assert value == pytest.approx(f)
    assert_allclose(g_val, g)
    assert_allclose(h_val, h)
    assert g_val.shape == (len(g),)
    assert h_val.shape == (len(h),)


@pytest.mark.parametrize("name, x_star, lambda_star, mu_star", KNOWN_KKT)
def test_catalog_known_kkt(name, x_star, lambda_star, mu_star):
    """
    Tests the stored KKT points and that their residuals vanish.

    Args:
        name: Catalog id.
        x_star: Expected primal point.
        lambda_star: Expected inequality multipliers.
        mu_star: Expected equality multipliers.
    """
    guess = first_kkt(builtin(name))
    assert_allclose(guess.x_star, x_star, atol=1e-15)
    assert_allclose(guess.lambda_star, lambda_star)
    assert_allclose(guess.mu_star, mu_star, atol=1e-15)
    residual = kkt_residual(builtin(name), guess.x_star, guess.lambda_star, guess.mu_star)
    assert residual.total <= 1e-12


def test_unknown_catalog_id():
    with pytest.raises(UnknownProblemError):
        builtin("NOPE")


def test_kkt_guess_rejects_negative_multipliers():
    with pytest.raises(ValueError):
        KKTGuess(np.array([0.0]), np.array([-1.0]), np.array([]))


def test_from_config_matches_catalog_behaviour():
    parsed = from_config({"d": 1, "f": "-x1^2", "h": ["x1-1"]})
    reference = builtin("NC-EQ")
    assert (parsed.d, parsed.m, parsed.n) == (1, 0, 1)
    for x in ([0.0], [0.3], [-2.5], [7.0]):
        assert oracle_gap(reference, parsed, x) <= 1e-14


def test_from_config_unit_disk():
    problem = from_config({"d": 2, "f": "x1", "g": ["x1^2+x2^2-1"], "name": "disk"})
    assert (problem.name, problem.m, problem.n) == ("disk", 1, 0)
    _, g, _ = evaluate_all(problem, [0.6, 0.8])
    assert g[0] == pytest.approx(0.0, abs=1e-15)
    assert problem.known_kkt == ()


def test_from_config_with_kkt_point():
    problem = from_config({"d": 1, "f": "0.5*x1^2", "g": ["x1 - 1"], "x_star": [0.0], "lambda_star": [0.0]})
    guess = first_kkt(problem)
    assert guess.provenance == "from configuration"
    assert_allclose(guess.mu_star, [])


# (config section, expected error)
FROM_CONFIG_ERRORS = [
    ({"d": 1, "f": "x2"}, VariableIndexError),
    ({"d": 0, "f": "1"}, DimensionMismatchError),
    ({"d": 1, "f": "x1", "x_star": [0.0, 1.0]}, DimensionMismatchError),
]


@pytest.mark.parametrize("config, error", FROM_CONFIG_ERRORS)
def test_from_config_errors(config, error):
    with pytest.raises(error):
        from_config(config)


def test_catalog_expressions_agree_with_analytic_maps(catalog_problem):
    parsed = from_config(catalog_expressions(catalog_problem.name))
    assert parsed.name == catalog_problem.name
    for x in random_points(catalog_problem, 20, seed=3):
        assert oracle_gap(catalog_problem, parsed, x) <= 1e-12


def test_check_derivatives_on_catalog(catalog_problem):
    for x in random_points(catalog_problem, 10, seed=1):
        report = check_derivatives(catalog_problem, x, 1e-5)
        assert report.passed(1e-6), report.failures(1e-6)


def test_check_derivatives_qp_eq_point():
    report = check_derivatives(builtin("QP-EQ"), [0.1, 0.2], 1e-5)
    assert set(report.errors) == {"f", "h1"}
    assert report.max_error <= 1e-6


def test_check_derivatives_constant_objective():
    problem = from_config({"d": 2, "f": "4.5"})
    report = check_derivatives(problem, [0.3, -0.7])
    assert report.errors["f"].gradient_error == 0.0
    assert report.errors["f"].hessian_error == 0.0


class _WrongSlope(ScalarMap):
    """-x^2 whose reported derivatives are scaled by 1.5."""

    d = 1

    def value(self, x):
        return float(-x[0] ** 2)

    def order2(self, x):
        return SecondOrderValue(self.value(x), np.array([-3.0 * x[0]]), np.array([[-3.0]]))


def test_check_derivatives_nc_eq_gradient():
    grad_f, _, _ = jacobians(builtin("NC-EQ"), [3.0])
    assert grad_f[0] == pytest.approx(-6.0)
    report = check_derivatives(builtin("NC-EQ"), [3.0])
    assert report.passed()


def test_check_derivatives_reports_wrong_derivatives():
    good = builtin("NC-EQ")
    broken = ProblemSpec(good.name, good.d, _WrongSlope(), good.g, good.h)
    report = check_derivatives(broken, [3.0])
    assert not report.passed()
    assert report.failures() == ["f"]
    assert report.errors["f"].gradient_error > 0.1


def test_jacobians_and_hessians_shapes():
    grad_f, jac_g, jac_h = jacobians(builtin("MIXED-2"), [1.0, 0.0])
    assert_allclose(grad_f, [-1.0, 0.0])
    assert_allclose(jac_g, [[1.0, 0.0], [0.0, 1.0]])
    assert jac_h.shape == (0, 2)
    hess_f, hess_g, hess_h = constraint_hessians(builtin("MIXED-2"), [1.0, 0.0])
    assert_allclose(hess_f, np.eye(2))
    assert hess_g.shape == (2, 2, 2)
    assert hess_h.shape == (0, 2, 2)


def test_random_points_are_seeded():
    problem = builtin("QP-EQ")
    first = random_points(problem, 5, seed=11, scale=1.0)
    assert first.shape == (5, 2)
    assert np.all(np.abs(first) <= 1.0)
    assert_allclose(first, random_points(problem, 5, seed=11, scale=1.0))


def test_catalog_ids():
    assert set(CATALOG_IDS) == {"QP-EQ", "OSC-EQ", "NC-EQ", "INEQ-ACT", "INEQ-INACT", "MIXED-2"}
