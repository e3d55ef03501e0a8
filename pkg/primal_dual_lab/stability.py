"""
Local stability analysis of primal-dual iterations at KKT points.

At a KKT point (x*, lam*, mu*) satisfying strict complementarity, LICQ and
second-order sufficiency, the AL-GDA and optimistic Lag-GD-OA maps are
differentiable. Their Jacobians are built from

    A = Hessian of the Lagrangian in x   (d x d)
    B = [Jacobian of active g; Jacobian of h]   ((|A| + n) x d)

and a point is a locally stable stationary point (LSSP) of an iteration when
the spectral radius of its Jacobian is below one.

Index sets are zero-based throughout.
"""

import logging
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .errors import (
    AssumptionViolated,
    EigenNonConvergence,
    HyperParameterError,
    NotAKKTPoint,
    StrictComplementarityViolated,
)
from .functionals import kkt_residual, lagrangian_hessian
from .problems import KKTGuess, ProblemSpec, differentiate
from .solvers import HyperParams
from .utils import as_vector, positive_part

logger = logging.getLogger(__name__)

TOL_ACT = 1e-8
KKT_TOL = 1e-8
STRICT_TOL = 1e-8
LSSP_MARGIN = 1e-9
TRIVIAL_TOL = 1e-9


@dataclass(frozen=True)
class KKTCertificate:
    """
    Residuals, active set and regularity data at a candidate KKT point.

    Attributes:
        x, lam, mu: The point.
        stationarity: ||grad_x L||_inf.
        equality: ||h||_inf.
        inequality: ||[g]_+||_inf.
        complementarity: max |lam_i g_i|.
        active: Indices with |g_i| <= tol_act.
        inactive: The remaining inequality indices.
        strict_margin: min_i max(lam_i, -g_i); +inf when m = 0.
        licq_min_singular: Smallest singular value of B, 0 when B has more
            rows than columns; +inf when B is empty.
        sosc_min_eig: Smallest eigenvalue of A on the null space of B; +inf
            when the null space is trivial.
        hessian: A, the Hessian of the Lagrangian.
        active_jacobian: B.
    """

    x: np.ndarray
    lam: np.ndarray
    mu: np.ndarray
    stationarity: float
    equality: float
    inequality: float
    complementarity: float
    active: Tuple[int, ...]
    inactive: Tuple[int, ...]
    strict_margin: float
    licq_min_singular: float
    sosc_min_eig: float
    hessian: np.ndarray
    active_jacobian: np.ndarray
    tol_act: float = TOL_ACT

    @property
    def residual(self) -> float:
        return max(self.stationarity, self.equality, self.inequality, self.complementarity)


@dataclass(frozen=True)
class ActivePartition:
    """
    Matrices governing the linearized dynamics at a KKT point.

    Attributes:
        active: Active inequality indices.
        inactive: Inactive inequality indices.
        A: Hessian of the Lagrangian, d x d.
        B: Active inequality rows followed by equality rows, (|A| + n) x d.
    """

    active: Tuple[int, ...]
    inactive: Tuple[int, ...]
    A: np.ndarray
    B: np.ndarray

    @property
    def d(self) -> int:
        return self.A.shape[0]

    @property
    def inactive_count(self) -> int:
        return len(self.inactive)

    @property
    def dual_size(self) -> int:
        return self.B.shape[0]


@dataclass(frozen=True)
class TrivialEigenvalues:
    """Expected versus observed multiplicity of a known eigenvalue."""

    value: float
    expected: int
    observed: int

    @property
    def matches(self) -> bool:
        return self.expected == self.observed


@dataclass(frozen=True)
class StabilityReport:
    """
    Spectral summary of an iteration Jacobian.

    Attributes:
        jacobian: The matrix.
        eigenvalues: Complex spectrum sorted by (real, imag).
        spectral_radius: max |eigenvalue|.
        condition_number: Ratio of the largest to the smallest numerically
            nonzero singular value.
        rank: Numerical rank.
        is_lssp: spectral_radius < 1 - lssp_margin.
        marginal: |spectral_radius - 1| <= lssp_margin.
        trivial_eigs: Bookkeeping for the eigenvalues fixed by the inactive
            block (and the lagged iterate for J_OG).
    """

    jacobian: np.ndarray
    eigenvalues: np.ndarray
    spectral_radius: float
    condition_number: float
    rank: int
    is_lssp: bool
    marginal: bool
    trivial_eigs: Optional[TrivialEigenvalues] = None

    @property
    def max_abs_imag(self) -> float:
        return float(np.max(np.abs(self.eigenvalues.imag))) if self.eigenvalues.size else 0.0

    def nontrivial_eigenvalues(self) -> np.ndarray:
        """Eigenvalues with the expected trivial ones (closest to their value) removed."""
        if self.trivial_eigs is None or self.trivial_eigs.expected == 0:
            return self.eigenvalues
        order = np.argsort(np.abs(self.eigenvalues - self.trivial_eigs.value), kind="stable")
        keep = np.sort(order[self.trivial_eigs.expected :])
        return self.eigenvalues[keep]


@dataclass(frozen=True)
class SpectralRelation:
    """Both sides of rho(J_AL) = max(rho(J_OG), 1 - eta_dual/c) and their gap."""

    lhs: float
    rhs: float
    gap: float


# ---------------------------------------------------------------------------
# Certification
# ---------------------------------------------------------------------------


def _null_space(B: np.ndarray, d: int) -> np.ndarray:
    if B.shape[0] == 0:
        return np.eye(d)
    _, s, vt = np.linalg.svd(B)
    tol = max(B.shape) * np.finfo(float).eps * (s[0] if s.size else 0.0)
    rank = int(np.sum(s > tol))
    return vt[rank:].T


def kkt_certificate(
    problem: ProblemSpec,
    x: Sequence[float] | np.ndarray,
    lam: Sequence[float] | np.ndarray,
    mu: Sequence[float] | np.ndarray,
    tol_act: float = TOL_ACT,
) -> KKTCertificate:
    """
    Certifies a candidate KKT point.

    Args:
        problem: The problem.
        x: Primal point.
        lam: Inequality multipliers (nonnegative).
        mu: Equality multipliers.
        tol_act: |g_i| at or below which constraint i counts as active.

    Returns:
        The KKTCertificate.
    """
    x_v = as_vector(x, problem.d, "x")
    lam_v = as_vector(lam, problem.m, "lambda")
    mu_v = as_vector(mu, problem.n, "mu")
    der = differentiate(problem, x_v)
    residual = kkt_residual(problem, x_v, lam_v, mu_v)

    active = tuple(int(i) for i in np.flatnonzero(np.abs(der.g) <= tol_act))
    inactive = tuple(i for i in range(problem.m) if i not in active)
    strict_margin = float(np.min(np.maximum(lam_v, -der.g))) if problem.m else float("inf")

    A = lagrangian_hessian(problem, x_v, lam_v, mu_v)
    B = np.vstack([der.jac_g[list(active)], der.jac_h]).reshape(len(active) + problem.n, problem.d)

    if B.shape[0] == 0:
        licq = float("inf")
    elif B.shape[0] > problem.d:
        licq = 0.0
    else:
        licq = float(np.linalg.svd(B, compute_uv=False)[-1])

    Z = _null_space(B, problem.d)
    if Z.shape[1] == 0:
        sosc = float("inf")
    else:
        reduced = Z.T @ A @ Z
        sosc = float(np.linalg.eigvalsh(0.5 * (reduced + reduced.T))[0])

    return KKTCertificate(
        x=x_v,
        lam=lam_v,
        mu=mu_v,
        stationarity=residual.stationarity,
        equality=residual.equality,
        inequality=residual.inequality,
        complementarity=residual.complementarity,
        active=active,
        inactive=inactive,
        strict_margin=strict_margin,
        licq_min_singular=licq,
        sosc_min_eig=sosc,
        hessian=A,
        active_jacobian=B,
        tol_act=tol_act,
    )


def certify_guess(problem: ProblemSpec, guess: KKTGuess, tol_act: float = TOL_ACT) -> KKTCertificate:
    return kkt_certificate(problem, guess.x_star, guess.lambda_star, guess.mu_star, tol_act)


def check_assumptions(
    cert: KKTCertificate,
    strict_tol: float = STRICT_TOL,
    licq_tol: float = STRICT_TOL,
    sosc_tol: float = STRICT_TOL,
) -> Dict[str, bool]:
    """
    Evaluates strict complementarity, LICQ and second-order sufficiency.

    Args:
        cert: A certificate from `kkt_certificate`.
        strict_tol: Threshold for the strict-complementarity margin.
        licq_tol: Threshold for the smallest singular value of B.
        sosc_tol: Threshold for the reduced Hessian's smallest eigenvalue.

    Returns:
        {"strict_cs": bool, "licq": bool, "sosc": bool}.
    """
    return {
        "strict_cs": cert.strict_margin > strict_tol,
        "licq": cert.licq_min_singular > licq_tol,
        "sosc": cert.sosc_min_eig > sosc_tol,
    }


def require_assumptions(cert: KKTCertificate, strict_tol: float = STRICT_TOL) -> Dict[str, bool]:
    """Like `check_assumptions` but raises AssumptionViolated when any verdict is false."""
    verdicts = check_assumptions(cert, strict_tol, strict_tol, strict_tol)
    if not all(verdicts.values()):
        raise AssumptionViolated(verdicts)
    return verdicts


def require_kkt(cert: KKTCertificate, kkt_tol: float = KKT_TOL) -> None:
    """Raises NotAKKTPoint when the certificate's residual exceeds kkt_tol."""
    if cert.residual > kkt_tol:
        raise NotAKKTPoint(cert.residual, kkt_tol)


def active_partition(problem: ProblemSpec, cert: KKTCertificate, strict_tol: float = STRICT_TOL) -> ActivePartition:
    """
    Splits the inequality multipliers into active and inactive blocks.

    Args:
        problem: The problem the certificate belongs to.
        cert: A certificate.
        strict_tol: Strict-complementarity threshold.

    Returns:
        The ActivePartition with equality rows appended to B.

    Raises:
        StrictComplementarityViolated: If some constraint has both lam_i and
            -g_i within strict_tol of zero.
    """
    if problem.m:
        g = differentiate(problem, cert.x).g
        weak = [i for i in range(problem.m) if max(cert.lam[i], -g[i]) <= strict_tol]
        if weak:
            raise StrictComplementarityViolated(weak)
    return ActivePartition(active=cert.active, inactive=cert.inactive, A=cert.hessian, B=cert.active_jacobian)


# ---------------------------------------------------------------------------
# Jacobians
# ---------------------------------------------------------------------------


def _inactive(partition: ActivePartition, inactive_count: Optional[int]) -> int:
    return partition.inactive_count if inactive_count is None else int(inactive_count)


def assemble_J_AL(partition: ActivePartition, inactive_count: Optional[int], hp: HyperParams) -> np.ndarray:
    """
    Jacobian of the AL-GDA map over (x, lam_A and mu, lam_I).

    Args:
        partition: The active partition.
        inactive_count: Size of the inactive block; None takes it from the partition.
        hp: eta_x, eta_dual and c are used; eta_dual <= c is required.

    Returns:
        A square matrix of size d + |A| + n + inactive_count.
    """
    hp.check_al_gda()
    A, B = partition.A, partition.B
    d, p, q = partition.d, partition.dual_size, _inactive(partition, inactive_count)
    K = np.eye(d) - hp.eta_x * (A + hp.c * B.T @ B)

    J = np.zeros((d + p + q, d + p + q))
    J[:d, :d] = K
    J[:d, d : d + p] = -hp.eta_x * B.T
    J[d : d + p, :d] = hp.eta_dual * B @ K
    J[d : d + p, d : d + p] = np.eye(p) - hp.eta_x * hp.eta_dual * B @ B.T
    J[d + p :, d + p :] = (1.0 - hp.eta_dual / hp.c) * np.eye(q)
    return J


def assemble_J_OG(partition: ActivePartition, inactive_count: Optional[int], hp: HyperParams) -> np.ndarray:
    """
    Jacobian of the optimistic Lag-GD-OA map over (x_t, x_{t-1}, lam_A and mu, lam_I).

    Args:
        partition: The active partition.
        inactive_count: Size of the inactive block; None takes it from the partition.
        hp: eta_x, eta_dual and omega are used.

    Returns:
        A square matrix of size 2d + |A| + n + inactive_count. The inactive
        block is zero.
    """
    A, B = partition.A, partition.B
    d, p, q = partition.d, partition.dual_size, _inactive(partition, inactive_count)
    BtB = B.T @ B
    eta_x, eta_dual, omega = hp.eta_x, hp.eta_dual, hp.omega

    J = np.zeros((2 * d + p + q, 2 * d + p + q))
    J[:d, :d] = np.eye(d) - eta_x * A - eta_x * (eta_dual + omega) * BtB
    J[:d, d : 2 * d] = eta_x * omega * BtB
    J[:d, 2 * d : 2 * d + p] = -eta_x * B.T
    J[d : 2 * d, :d] = np.eye(d)
    J[2 * d : 2 * d + p, :d] = (eta_dual + omega) * B
    J[2 * d : 2 * d + p, d : 2 * d] = -omega * B
    J[2 * d : 2 * d + p, 2 * d : 2 * d + p] = np.eye(p)
    return J


# ---------------------------------------------------------------------------
# Spectra
# ---------------------------------------------------------------------------


def condition_number(matrix: np.ndarray) -> Tuple[float, int]:
    """
    Condition number over the numerically nonzero singular values.

    Args:
        matrix: Any real matrix.

    Returns:
        (sigma_max / sigma_min_nonzero, numerical rank); (inf, 0) for a zero matrix.
    """
    if matrix.size == 0:
        return 1.0, 0
    s = np.linalg.svd(matrix, compute_uv=False)
    tol = max(matrix.shape) * np.finfo(float).eps * s[0]
    nonzero = s[s > tol]
    if nonzero.size == 0:
        return float("inf"), 0
    return float(nonzero[0] / nonzero[-1]), int(nonzero.size)


def eigen_analysis(
    matrix: np.ndarray,
    trivial_value: Optional[float] = None,
    trivial_expected: int = 0,
    lssp_margin: float = LSSP_MARGIN,
    trivial_tol: float = TRIVIAL_TOL,
) -> StabilityReport:
    """
    Computes the spectrum, spectral radius and conditioning of a Jacobian.

    Args:
        matrix: Square real matrix.
        trivial_value: Eigenvalue whose multiplicity should be tracked.
        trivial_expected: The multiplicity it should have.
        lssp_margin: Margin below one for the LSSP verdict.
        trivial_tol: Distance within which an eigenvalue counts as trivial.

    Returns:
        The StabilityReport.

    Raises:
        EigenNonConvergence: If the eigenvalue iteration fails.
    """
    J = np.asarray(matrix, dtype=float)
    if J.ndim != 2 or J.shape[0] != J.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {J.shape}")
    try:
        raw = np.linalg.eigvals(J) if J.size else np.zeros(0, dtype=complex)
    except np.linalg.LinAlgError as e:
        raise EigenNonConvergence(f"eigenvalue computation failed: {e}", matrix=J) from e

    eigenvalues = np.array(sorted(raw.astype(complex), key=lambda z: (z.real, z.imag)), dtype=complex)
    radius = float(np.max(np.abs(eigenvalues))) if eigenvalues.size else 0.0
    kappa, rank = condition_number(J)

    trivial = None
    if trivial_value is not None:
        observed = int(np.sum(np.abs(eigenvalues - trivial_value) <= trivial_tol))
        trivial = TrivialEigenvalues(value=float(trivial_value), expected=trivial_expected, observed=observed)
        if not trivial.matches:
            logger.debug(f"Trivial eigenvalue {trivial_value} observed {observed} times, expected {trivial_expected}")

    marginal = abs(radius - 1.0) <= lssp_margin
    if marginal:
        logger.warning(f"Spectral radius {radius!r} is within {lssp_margin} of one")
    return StabilityReport(
        jacobian=J,
        eigenvalues=eigenvalues,
        spectral_radius=radius,
        condition_number=kappa,
        rank=rank,
        is_lssp=radius < 1.0 - lssp_margin,
        marginal=marginal,
        trivial_eigs=trivial,
    )


def analyze_al(
    partition: ActivePartition, hp: HyperParams, lssp_margin: float = LSSP_MARGIN
) -> StabilityReport:
    """Eigen-analysis of J_AL with the inactive eigenvalue 1 - eta_dual/c tracked."""
    q = partition.inactive_count
    return eigen_analysis(
        assemble_J_AL(partition, q, hp),
        trivial_value=1.0 - hp.eta_dual / hp.c,
        trivial_expected=q,
        lssp_margin=lssp_margin,
    )


def analyze_og(
    partition: ActivePartition, hp: HyperParams, lssp_margin: float = LSSP_MARGIN
) -> StabilityReport:
    """Eigen-analysis of J_OG with its m - |A| + d zero eigenvalues tracked."""
    q = partition.inactive_count
    return eigen_analysis(
        assemble_J_OG(partition, q, hp),
        trivial_value=0.0,
        trivial_expected=q + partition.d,
        lssp_margin=lssp_margin,
    )


# ---------------------------------------------------------------------------
# Characteristic polynomials
# ---------------------------------------------------------------------------


def _nontrivial_factor(sigma: complex, partition: ActivePartition, eta_x: float, coupling: complex) -> complex:
    d = partition.d
    BtB = partition.B.T @ partition.B
    one_minus = 1.0 - sigma
    M = one_minus**2 * np.eye(d, dtype=complex) - eta_x * one_minus * partition.A - eta_x * coupling * BtB
    return complex(np.linalg.det(M))


def char_poly_AL(sigma: complex, partition: ActivePartition, inactive_count: Optional[int], hp: HyperParams) -> complex:
    """
    Characteristic polynomial of J_AL evaluated at sigma.

    (1 - eta_dual/c - sigma)^q * det((1-sigma)^2 I - eta_x (1-sigma) A
    - eta_x (c (1-sigma) - eta_dual sigma) B^T B). When |A| + n < d the
    determinant carries extra roots at sigma = 1, so this vanishes on the
    spectrum of J_AL without being exactly its characteristic polynomial.
    """
    q = _inactive(partition, inactive_count)
    sigma = complex(sigma)
    coupling = hp.c * (1.0 - sigma) - hp.eta_dual * sigma
    trivial = (1.0 - hp.eta_dual / hp.c - sigma) ** q
    return trivial * _nontrivial_factor(sigma, partition, hp.eta_x, coupling)


def char_poly_OG(sigma: complex, partition: ActivePartition, inactive_count: Optional[int], hp: HyperParams) -> complex:
    """
    Characteristic polynomial of J_OG evaluated at sigma.

    (-sigma)^(q + d) * det((1-sigma)^2 I - eta_x (1-sigma) A
    - eta_x (omega (1-sigma) - eta_dual sigma) B^T B).
    """
    q = _inactive(partition, inactive_count)
    sigma = complex(sigma)
    coupling = hp.omega * (1.0 - sigma) - hp.eta_dual * sigma
    trivial = (-sigma) ** (q + partition.d)
    return trivial * _nontrivial_factor(sigma, partition, hp.eta_x, coupling)


def char_poly_residuals(
    report: StabilityReport, partition: ActivePartition, hp: HyperParams, family: str
) -> List[float]:
    """
    |chi(sigma_i)| / (1 + |sigma_i|)^(2d) at every eigenvalue of a report.

    Args:
        report: Eigen-analysis of J_AL or J_OG.
        partition: The partition the Jacobian was built from.
        hp: The hyperparameters it was built with.
        family: "al" or "og".

    Returns:
        One scaled residual per eigenvalue.
    """
    poly = {"al": char_poly_AL, "og": char_poly_OG}[family]
    scale_power = 2 * partition.d
    return [
        abs(poly(sigma, partition, None, hp)) / (1.0 + abs(sigma)) ** scale_power for sigma in report.eigenvalues
    ]


def verify_spectral_relation(
    report_al: StabilityReport, report_og: StabilityReport, hp: HyperParams, inactive_count: int
) -> SpectralRelation:
    """
    Compares rho(J_AL) with max(rho(J_OG), 1 - eta_dual/c).

    The 1 - eta_dual/c term only enters when the inactive block is nonempty.

    Args:
        report_al: Report for J_AL.
        report_og: Report for J_OG from the same partition.
        hp: Must have omega == c.
        inactive_count: m - |A|.

    Returns:
        The SpectralRelation.
    """
    if hp.omega != hp.c:
        raise HyperParameterError(f"spectral relation requires omega == c, got omega={hp.omega}, c={hp.c}")
    rhs = report_og.spectral_radius
    if inactive_count > 0:
        rhs = max(rhs, 1.0 - hp.eta_dual / hp.c)
    lhs = report_al.spectral_radius
    return SpectralRelation(lhs=lhs, rhs=rhs, gap=abs(lhs - rhs))


def convexification_threshold(partition: ActivePartition, c_max: float = 1e6, tol: float = 1e-8) -> float:
    """
    Smallest penalty c making A + c B^T B positive definite.

    Args:
        partition: The active partition.
        c_max: Largest penalty tried.
        tol: Bisection width.

    Returns:
        0.0 if A is already positive definite, the threshold found by
        bisection on (0, c_max], or +inf when c_max is not enough.
    """
    if not c_max > 0:
        raise HyperParameterError(f"c_max must be positive, got {c_max}")
    A = 0.5 * (partition.A + partition.A.T)
    BtB = partition.B.T @ partition.B

    def min_eig(c: float) -> float:
        return float(np.linalg.eigvalsh(A + c * BtB)[0])

    if min_eig(0.0) > 0:
        return 0.0
    if min_eig(c_max) <= 0:
        return float("inf")
    lo, hi = 0.0, c_max
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if min_eig(mid) > 0:
            hi = mid
        else:
            lo = mid
    return hi


# ---------------------------------------------------------------------------
# Complementarity characterization
# ---------------------------------------------------------------------------


def complementarity_fixed_point(lam: np.ndarray, g: np.ndarray, k: float) -> bool:
    """True when lam == [lam + k g]_+ componentwise."""
    return bool(np.array_equal(lam, positive_part(lam + k * g)))


def feasible_complementary(lam: np.ndarray, g: np.ndarray) -> bool:
    """True when g <= 0 and lam_i g_i == 0 for every component."""
    return bool(np.all(g <= 0) and np.all(lam * g == 0))


# ---------------------------------------------------------------------------
# Combined analysis
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PointAnalysis:
    """Everything computed at one KKT point for one hyperparameter setting."""

    certificate: KKTCertificate
    verdicts: Dict[str, bool]
    partition: ActivePartition
    al: StabilityReport
    og: StabilityReport
    relation: Optional[SpectralRelation]
    threshold: float


def analyze_point(
    problem: ProblemSpec,
    guess: KKTGuess,
    hp: HyperParams,
    tol_act: float = TOL_ACT,
    strict_tol: float = STRICT_TOL,
    lssp_margin: float = LSSP_MARGIN,
    c_max: float = 1e6,
    kkt_tol: float = KKT_TOL,
) -> PointAnalysis:
    """
    Certifies a KKT point and analyzes both Jacobians there.

    Args:
        problem: The problem.
        guess: The KKT point.
        hp: Hyperparameters; the spectral relation is computed when omega == c.
        tol_act: Active-set tolerance.
        strict_tol: Tolerance of the regularity checks.
        lssp_margin: LSSP margin below one.
        c_max: Upper end of the convexification search.
        kkt_tol: Largest accepted KKT residual at the point.

    Returns:
        The PointAnalysis.

    Raises:
        AssumptionViolated: If strict complementarity, LICQ or SOSC fails.
        NotAKKTPoint: If the point passes those checks but is not a KKT point.
    """
    cert = certify_guess(problem, guess, tol_act)
    verdicts = require_assumptions(cert, strict_tol)
    require_kkt(cert, kkt_tol)
    partition = active_partition(problem, cert, strict_tol)
    al = analyze_al(partition, hp, lssp_margin)
    og = analyze_og(partition, hp, lssp_margin)
    relation = None
    if hp.omega == hp.c:
        relation = verify_spectral_relation(al, og, hp, partition.inactive_count)
    threshold = convexification_threshold(partition, c_max)
    logger.info(
        f"{problem.name}: rho(J_AL)={al.spectral_radius:.10g}, rho(J_OG)={og.spectral_radius:.10g}, "
        f"threshold={threshold:.6g}"
    )
    return PointAnalysis(cert, verdicts, partition, al, og, relation, threshold)
