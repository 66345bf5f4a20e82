"""
W-step: for fixed U, find V (VᵀV = I) from G = Ω^{1/2}C_XYᵀU.

Two solutions are provided:
  - Procrustes: V = QPᵀ from the thin SVD G = QΣPᵀ, the exact maximizer of
    Tr{VᵀG}. Extracted features are correlated unless P is a permutation.
  - Eigen: V = top-k eigenvectors of GGᵀ (= Q), Λ = Σ². Keeps UᵀC_XY Ω^{1/2}V
    diagonal, and with it the uncorrelation of the extracted features.
"""

import enum
import logging
from dataclasses import dataclass

import numpy as np

from regmva import linalg
from regmva.errors import NumericalError, RotationMismatchError, ShapeError

logger = logging.getLogger(__name__)

REPEATED_RTOL = 1e-10
ROTATION_TOL = 1e-8
CORRELATION_TOL = 1e-6


class WStepStrategy(str, enum.Enum):
    PROCRUSTES = "Procrustes"
    EIGEN = "Eigen"

    @classmethod
    def parse(cls, text):
        for member in cls:
            if str(text).strip().lower() in (member.value.lower(), member.name.lower()):
                return member
        raise ValueError(f"unknown W-step strategy {text!r} (expected procrustes or eigen)")


@dataclass(frozen=True, eq=False)
class WStepResult:
    V: np.ndarray
    eigenvalues: np.ndarray
    singular_values: np.ndarray
    rank: int
    rank_deficient: bool = False
    repeated: bool = False


def _as_g(G):
    G = np.asarray(G, dtype=float)
    if G.ndim != 2:
        raise ShapeError(f"G must be 2-D, got shape {G.shape}")
    if G.shape[1] > G.shape[0]:
        raise ShapeError(f"G must have at least as many rows as columns, got {G.shape}")
    if not np.all(np.isfinite(G)):
        raise NumericalError("G contains non-finite entries")
    return G


def _null_block(Q_range, P_null, Q_default, previous):
    """
    Orthonormal m×(k−r) block for the null singular directions, chosen to stay
    closest to the previous iterate when one is given.
    """
    if previous is None or previous.shape != (Q_range.shape[0], P_null.shape[0]):
        return Q_default
    H = previous @ P_null
    H = H - Q_range @ (Q_range.T @ H)
    h = linalg.thin_svd(H)
    if h.rank < H.shape[1]:
        return Q_default
    return h.Q @ h.P.T


def w_step_procrustes(G, previous=None):
    """V = QPᵀ; rank-deficient G is completed toward previous (if given)."""
    G = _as_g(G)
    k = G.shape[1]
    svd = linalg.thin_svd(G)
    r = svd.rank
    V = svd.Q[:, :r] @ svd.P[:, :r].T
    if r < k:
        logger.debug("Procrustes W-step: rank(G) = %d < k = %d, solution not unique", r, k)
        P_null = svd.P[:, r:]
        Z = _null_block(svd.Q[:, :r], P_null, svd.Q[:, r:], previous)
        V = V + Z @ P_null.T
    return WStepResult(
        V=V, eigenvalues=svd.sigma ** 2, singular_values=svd.sigma, rank=r,
        rank_deficient=r < k,
    )


def w_step_eigen(G):
    """V = top-k eigenvectors of GGᵀ, Λ their eigenvalues."""
    G = _as_g(G)
    k = G.shape[1]
    eig = linalg.sym_eig(G @ G.T)
    lam_all = np.clip(eig.eigenvalues, 0.0, None)
    lam = lam_all[:k].copy()
    top = max(float(lam_all[0]), np.finfo(float).tiny)
    # A tie at the k/k+1 boundary also leaves the subspace undetermined
    gaps = -np.diff(lam_all[:k + 1])
    repeated = bool(np.any(gaps <= REPEATED_RTOL * top))
    rank = int(np.sum(lam > linalg.RANK_RTOL ** 2 * top))
    if repeated:
        logger.debug("Eigen W-step: repeated eigenvalues, basis choice is arbitrary")
    return WStepResult(
        V=eig.eigenvectors[:, :k].copy(), eigenvalues=lam, singular_values=np.sqrt(lam),
        rank=rank, rank_deficient=rank < k, repeated=repeated,
    )


def w_step(G, strategy, previous=None):
    strategy = WStepStrategy(strategy)
    if strategy is WStepStrategy.PROCRUSTES:
        return w_step_procrustes(G, previous)
    return w_step_eigen(G)


def rotation_between(V_p, V_eig, G):
    """
    The k×k rotation R with V_p = V_eig·R, i.e. Pᵀ from the SVD of G with P's
    columns flipped to V_eig's sign convention.
    """
    G = _as_g(G)
    svd = linalg.thin_svd(G)
    signs = np.sign(np.sum(svd.Q * V_eig, axis=0))
    signs[signs == 0] = 1.0
    R = signs[:, None] * svd.P.T
    residual = float(np.linalg.norm(V_p - V_eig @ R))
    if residual > ROTATION_TOL:
        raise RotationMismatchError(
            f"V_p and V_eig are not related by Pᵀ (residual {residual:.3e})", residual
        )
    return R


@dataclass(frozen=True, eq=False)
class ProcrustesCorrelation:
    matrix: np.ndarray
    expected: np.ndarray
    P: np.ndarray
    sigma: np.ndarray
    U: np.ndarray
    residual: float

    @property
    def offdiag(self):
        return linalg.offdiag_norm(self.matrix)

    def matches(self, tol=CORRELATION_TOL):
        return self.residual <= tol


def procrustes_feature_correlation(d, variant, V_p):
    """
    Feature autocorrelation U_pᵀC_XX U_p of the unregularized U-step after a
    Procrustes W-step, against PΣPᵀ from the SVD of Ω^{1/2}C_XYᵀU_p. The two
    agree whenever V_p is a fixed point of the Procrustes map.
    """
    from regmva.core import MvaProblem, prepare_problem

    problem = d if isinstance(d, MvaProblem) else prepare_problem(d, variant)
    V_p = np.asarray(V_p, dtype=float)
    if V_p.ndim != 2 or V_p.shape[0] != problem.m:
        raise ShapeError(f"V_p must have {problem.m} rows, got {V_p.shape}")
    _, cinv = problem.eigen_operator(0.0)
    U_p = cinv @ (problem.B @ V_p)
    corr = U_p.T @ problem.cxx @ U_p
    corr = 0.5 * (corr + corr.T)
    svd = linalg.thin_svd(problem.B.T @ U_p)
    expected = (svd.P * svd.sigma) @ svd.P.T
    residual = float(np.linalg.norm(corr - expected))
    if residual > CORRELATION_TOL * max(1.0, float(np.linalg.norm(svd.sigma))):
        logger.warning("U_pᵀC_XX U_p differs from PΣPᵀ by %.3e; V_p is not a fixed point", residual)
    return ProcrustesCorrelation(
        matrix=corr, expected=expected, P=svd.P, sigma=svd.sigma, U=U_p, residual=residual,
    )
