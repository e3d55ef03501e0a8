import numpy as np
import pytest
from numpy.testing import assert_allclose

from primal_dual_lab.errors import AssumptionViolated, HyperParameterError, NotAKKTPoint, StrictComplementarityViolated
from primal_dual_lab.problems import CATALOG_IDS, KKTGuess, builtin, first_kkt
from primal_dual_lab.solvers import HyperParams
from primal_dual_lab.stability import (
    ActivePartition,
    active_partition,
    analyze_al,
    analyze_og,
    analyze_point,
    assemble_J_AL,
    assemble_J_OG,
    certify_guess,
    char_poly_AL,
    char_poly_OG,
    char_poly_residuals,
    check_assumptions,
    complementarity_fixed_point,
    convexification_threshold,
    eigen_analysis,
    feasible_complementary,
    kkt_certificate,
    require_assumptions,
    require_kkt,
    verify_spectral_relation,
)

# Settings under which no nontrivial eigenvalue collides with a trivial one
# on any catalog problem: (eta_x, eta_dual, c, omega).
BOOKKEEPING_SETTINGS = [
    (0.05, 0.1, 1.0, 1.0),
    (0.1, 0.1, 3.0, 3.0),
]

# (matrix, expected sorted eigenvalues)
SPECTRUM_CASES = [
    ([[0.8, -0.1], [0.08, 0.99]], [0.8629844, 0.9270156]),
    (np.eye(3), [1.0, 1.0, 1.0]),
    ([[2.0, 0.0], [0.0, -3.0]], [-3.0, 2.0]),
]

# (problem, hyperparameters)
RELATION_CASES = [
    ("INEQ-ACT", HyperParams(0.1, 0.1, c=1.0, omega=1.0)),
    ("INEQ-INACT", HyperParams(0.1, 0.1, c=1.0, omega=1.0)),
    ("NC-EQ", HyperParams(0.1, 0.1, c=3.0, omega=3.0)),
    ("MIXED-2", HyperParams(0.05, 0.1, c=1.0, omega=1.0)),
]


def test_certificate_at_active_constraint():
    cert = certify_guess(builtin("INEQ-ACT"), first_kkt(builtin("INEQ-ACT")))
    assert cert.residual <= 1e-12
    assert cert.active == (0,)
    assert cert.inactive == ()
    assert cert.strict_margin == pytest.approx(1.0)
    assert check_assumptions(cert) == {"strict_cs": True, "licq": True, "sosc": True}


def test_certificate_at_inactive_constraint():
    cert = certify_guess(builtin("INEQ-INACT"), first_kkt(builtin("INEQ-INACT")))
    assert cert.active == ()
    assert cert.inactive == (0,)
    assert cert.strict_margin == pytest.approx(1.0)
    assert cert.licq_min_singular == float("inf")


def test_certificate_without_strict_complementarity():
    problem = builtin("INEQ-ACT")
    cert = kkt_certificate(problem, [1.0], [0.0], [])
    assert cert.strict_margin == 0.0
    assert not check_assumptions(cert)["strict_cs"]
    with pytest.raises(AssumptionViolated) as excinfo:
        require_assumptions(cert)
    assert excinfo.value.reason == "strict complementarity violated"
    with pytest.raises(StrictComplementarityViolated):
        active_partition(problem, cert)


def test_sosc_holds_vacuously_on_trivial_tangent_space():
    cert = certify_guess(builtin("NC-EQ"), first_kkt(builtin("NC-EQ")))
    assert cert.sosc_min_eig == float("inf")
    assert all(check_assumptions(cert).values())


def test_partition_of_mixed_problem(partition_of):
    partition = partition_of("MIXED-2")
    assert partition.active == (0,)
    assert partition.inactive == (1,)
    assert_allclose(partition.A, np.eye(2))
    assert_allclose(partition.B, [[1.0, 0.0]])


@pytest.mark.parametrize("name, A, B", [("INEQ-ACT", [[1.0]], [[1.0]]), ("NC-EQ", [[-2.0]], [[1.0]])])
def test_partition_matrices(name, A, B, partition_of):
    partition = partition_of(name)
    assert_allclose(partition.A, A)
    assert_allclose(partition.B, B)


def test_assemble_J_AL(partition_of, hp):
    assert_allclose(assemble_J_AL(partition_of("INEQ-ACT"), None, hp), [[0.8, -0.1], [0.08, 0.99]], atol=1e-15)
    inactive = assemble_J_AL(partition_of("INEQ-INACT"), None, hp)
    assert inactive.shape == (2, 2)
    assert inactive[1, 1] == pytest.approx(0.9)

    # eta_dual == c empties the inactive block
    full_step = assemble_J_AL(partition_of("INEQ-INACT"), None, HyperParams(0.1, 1.0, c=1.0))
    assert full_step[1, 1] == 0.0


def test_assemble_J_AL_rejects_large_dual_step(partition_of):
    with pytest.raises(HyperParameterError):
        assemble_J_AL(partition_of("INEQ-ACT"), None, HyperParams(0.1, 2.0, c=1.0))


def test_assemble_J_OG(partition_of, hp):
    expected = [[0.79, 0.1, -0.1], [1.0, 0.0, 0.0], [1.1, -1.0, 1.0]]
    assert_allclose(assemble_J_OG(partition_of("INEQ-ACT"), None, hp), expected, atol=1e-15)
    assert assemble_J_OG(partition_of("MIXED-2"), None, hp).shape == (6, 6)


@pytest.mark.parametrize("matrix, expected", SPECTRUM_CASES)
def test_eigen_analysis_spectrum(matrix, expected):
    report = eigen_analysis(np.array(matrix, dtype=float))
    assert_allclose(report.eigenvalues.real, expected, atol=1e-7)
    assert report.spectral_radius == pytest.approx(max(abs(v) for v in expected), abs=1e-7)


def test_eigen_analysis_identity():
    report = eigen_analysis(np.eye(3))
    assert report.condition_number == pytest.approx(1.0)
    assert report.rank == 3
    assert report.marginal
    assert not report.is_lssp


def test_eigen_analysis_complex_pair():
    report = eigen_analysis(np.array([[0.89, -0.1], [0.1, 1.0]]))
    assert report.max_abs_imag == pytest.approx(np.sqrt(3.6 - 1.89**2) / 2)
    assert report.eigenvalues[0].imag < 0 < report.eigenvalues[1].imag
    assert report.spectral_radius == pytest.approx(np.sqrt(0.9))
    assert report.is_lssp


def test_eigen_analysis_rejects_non_square():
    with pytest.raises(ValueError):
        eigen_analysis(np.zeros((2, 3)))


def test_char_poly_examples(partition_of, hp):
    assert char_poly_AL(0.0, partition_of("INEQ-ACT"), None, hp) == pytest.approx(0.8)
    sigma = 1.0 - hp.eta_dual / hp.c
    assert char_poly_AL(sigma, partition_of("INEQ-INACT"), None, hp) == 0
    assert char_poly_OG(0.0, partition_of("INEQ-ACT"), None, hp) == 0


@pytest.mark.parametrize("setting", BOOKKEEPING_SETTINGS)
@pytest.mark.parametrize("name", CATALOG_IDS)
def test_char_poly_vanishes_on_spectrum(name, setting, partition_of):
    """
    Tests that both characteristic polynomials vanish at every computed eigenvalue.

    Args:
        name: Catalog id.
        setting: (eta_x, eta_dual, c, omega).
        partition_of: Fixture building the active partition at the known KKT point.
    """
    partition = partition_of(name)
    hp = HyperParams(*setting)
    for family, report in (("al", analyze_al(partition, hp)), ("og", analyze_og(partition, hp))):
        assert max(char_poly_residuals(report, partition, hp, family)) <= 1e-8


@pytest.mark.parametrize("setting", BOOKKEEPING_SETTINGS)
@pytest.mark.parametrize("name", CATALOG_IDS)
def test_trivial_eigenvalue_counts(name, setting, partition_of):
    partition = partition_of(name)
    hp = HyperParams(*setting)
    al, og = analyze_al(partition, hp), analyze_og(partition, hp)
    assert al.trivial_eigs.observed == partition.inactive_count
    assert og.trivial_eigs.observed == partition.inactive_count + partition.d
    assert al.trivial_eigs.matches and og.trivial_eigs.matches
    # one is never an eigenvalue under the regularity assumptions
    assert np.min(np.abs(al.eigenvalues - 1.0)) > 1e-8
    assert np.min(np.abs(og.eigenvalues - 1.0)) > 1e-8


def test_nontrivial_eigenvalues_drop_the_inactive_block(partition_of):
    report = analyze_al(partition_of("INEQ-INACT"), HyperParams(0.05, 0.1, c=1.0))
    assert_allclose(report.nontrivial_eigenvalues(), [0.95])


def test_nontrivial_factors_coincide_when_omega_equals_c(partition_of):
    rng = np.random.default_rng(2)
    hp = HyperParams(0.1, 0.1, c=2.0, omega=2.0)
    for name in CATALOG_IDS:
        partition = partition_of(name)
        for re, im in rng.uniform(-1.5, 1.5, size=(20, 2)):
            sigma = complex(re, im)
            al = char_poly_AL(sigma, partition, 0, hp) * (-sigma) ** partition.d
            og = char_poly_OG(sigma, partition, 0, hp)
            assert abs(al - og) <= 1e-12 * max(1.0, abs(og))


@pytest.mark.parametrize("name, hp", RELATION_CASES)
def test_spectral_relation(name, hp, partition_of):
    partition = partition_of(name)
    relation = verify_spectral_relation(analyze_al(partition, hp), analyze_og(partition, hp), hp, partition.inactive_count)
    assert relation.gap <= 1e-8


def test_spectral_relation_values_on_active_constraint(partition_of, hp):
    partition = partition_of("INEQ-ACT")
    relation = verify_spectral_relation(analyze_al(partition, hp), analyze_og(partition, hp), hp, 0)
    assert relation.lhs == pytest.approx(0.9270156, abs=1e-6)
    assert relation.rhs == pytest.approx(0.9270156, abs=1e-6)


def test_spectral_relation_requires_omega_equal_to_c(partition_of):
    hp = HyperParams(0.1, 0.1, c=1.0, omega=2.0)
    partition = partition_of("INEQ-ACT")
    with pytest.raises(HyperParameterError):
        verify_spectral_relation(analyze_al(partition, hp), analyze_og(partition, hp), hp, 0)


def test_convexification_threshold(partition_of):
    assert convexification_threshold(partition_of("NC-EQ")) == pytest.approx(2.0, abs=1e-6)
    assert convexification_threshold(partition_of("INEQ-ACT")) == 0.0
    degenerate = ActivePartition(active=(), inactive=(), A=np.array([[-1.0]]), B=np.array([[0.0]]))
    assert convexification_threshold(degenerate) == float("inf")
    with pytest.raises(HyperParameterError):
        convexification_threshold(degenerate, c_max=0.0)


def test_complementarity_characterization():
    rng = np.random.default_rng(0)
    for _ in range(500):
        m = int(rng.integers(1, 5))
        lam = np.where(rng.random(m) < 0.5, 0.0, rng.uniform(0, 2, m))
        g = np.where(rng.random(m) < 0.5, 0.0, rng.uniform(-2, 2, m))
        k = rng.uniform(0.1, 10.0)
        assert complementarity_fixed_point(lam, g, k) == feasible_complementary(lam, g)


def test_analyze_point(hp):
    problem = builtin("INEQ-ACT")
    analysis = analyze_point(problem, first_kkt(problem), hp)
    assert analysis.verdicts == {"strict_cs": True, "licq": True, "sosc": True}
    assert analysis.al.is_lssp and analysis.og.is_lssp
    assert analysis.relation.gap <= 1e-8
    assert analysis.threshold == 0.0

    no_relation = analyze_point(problem, first_kkt(problem), hp.updated(omega=2.0))
    assert no_relation.relation is None


# (x, lambda) claimed for INEQ-ACT, residual of the claim
NOT_KKT_CASES = [
    ([0.5], [1.0], 0.5),  # inactive constraint with a positive multiplier
    ([1.0], [2.0], 1.0),  # right point, wrong multiplier
]


@pytest.mark.parametrize("x, lam, residual", NOT_KKT_CASES)
def test_analyze_point_rejects_points_that_are_not_kkt(x, lam, residual, hp):
    problem = builtin("INEQ-ACT")
    guess = KKTGuess(np.array(x), np.array(lam), np.array([]))
    with pytest.raises(NotAKKTPoint) as excinfo:
        analyze_point(problem, guess, hp)
    assert excinfo.value.residual == pytest.approx(residual)
    assert excinfo.value.reason == "not a KKT point"
    # a looser tolerance accepts the claim
    assert analyze_point(problem, guess, hp, kkt_tol=2.0).certificate.residual == pytest.approx(residual)


def test_regularity_is_checked_before_the_kkt_residual(hp):
    problem = builtin("INEQ-ACT")
    guess = KKTGuess(np.array([1.0]), np.array([0.0]), np.array([]))
    with pytest.raises(AssumptionViolated):
        analyze_point(problem, guess, hp)


def test_require_kkt_accepts_catalog_points(catalog_problem):
    require_kkt(certify_guess(catalog_problem, first_kkt(catalog_problem)))
