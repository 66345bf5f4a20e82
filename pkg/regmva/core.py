"""
Closed-form MVA: PCA, CCA and OPLS as particularizations of one objective.

    L(W, U) = Tr{YᵀΩY} − 2Tr{UᵀC_XY Ω W} + Tr{UᵀC_XX U WᵀΩW} + γR(U)

The output space is parameterized by V = Ω^{1/2}W. With G = Ω^{1/2}C_XYᵀ and
C̃ = C_XX + γI, the optimum is V = top-k eigenvectors of
M = Ω^{1/2}C_XYᵀ C̃⁻¹ C_XY Ω^{1/2} and U = C̃⁻¹ C_XY Ω^{1/2} V.
"""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field
from typing import TYPE_CHECKING

import numpy as np

from regmva import linalg
from regmva.dataset import Dataset, covariances
from regmva.errors import ShapeError
from regmva.metrics import cef
from regmva.regularizers import Penalty

if TYPE_CHECKING:
    from regmva.iterate import InitScheme, IterationTrace

logger = logging.getLogger(__name__)

# CCA jitter on C_YY, relative to trace(C_YY)/m
DEFAULT_OMEGA_JITTER = 1e-8


class Variant(str, enum.Enum):
    PCA = "pca"
    CCA = "cca"
    OPLS = "opls"


class Method(str, enum.Enum):
    CLOSED_FORM = "ClosedForm"
    PROCRUSTES = "Procrustes"
    EIGEN = "Eigen"


@dataclass(frozen=True)
class MvaVariant:
    tag: Variant
    omega_jitter: float = None

    def __post_init__(self):
        object.__setattr__(self, 'tag', Variant(self.tag))
        if self.omega_jitter is not None and self.omega_jitter < 0:
            raise ValueError(f"omega_jitter must be non-negative, got {self.omega_jitter}")

    @classmethod
    def parse(cls, text, omega_jitter=None):
        try:
            return cls(Variant(str(text).strip().lower()), omega_jitter)
        except ValueError:
            raise ValueError(f"unknown variant {text!r} (expected pca, cca or opls)")

    def __str__(self):
        return self.tag.value


@dataclass(frozen=True, eq=False)
class MvaProblem:
    """Covariances and Ω factors of one (dataset, variant) pair."""
    dataset: Dataset
    variant: MvaVariant
    cxx: np.ndarray
    cyy: np.ndarray
    cxy: np.ndarray
    omega: np.ndarray
    omega_half: np.ndarray
    omega_inv_half: np.ndarray
    B: np.ndarray
    trace_yoy: float
    jitter: float = 0.0

    @property
    def n(self):
        return self.cxx.shape[0]

    @property
    def m(self):
        return self.cyy.shape[0]

    @property
    def max_k(self):
        return min(self.n, self.m)

    def eigen_operator(self, gamma=0.0):
        """(M, C̃⁻¹) with M = Bᵀ C̃⁻¹ B, B = C_XY Ω^{1/2}."""
        cinv = linalg.regularized_inverse(self.cxx, gamma)
        M = self.B.T @ cinv @ self.B
        return 0.5 * (M + M.T), cinv

    def objective_v(self, U, V, penalty=None):
        """The loss L(U, W) evaluated at W = Ω^{-1/2}V."""
        gram = U.T @ self.cxx @ U
        value = (
            self.trace_yoy
            - 2.0 * float(np.sum(U * (self.B @ V)))
            + float(np.sum(gram * (V.T @ V)))
        )
        if penalty is not None:
            value += penalty.gamma * penalty.value(U)
        return value


def prepare_problem(d, variant):
    variant = variant if isinstance(variant, MvaVariant) else MvaVariant.parse(variant)
    if variant.tag is Variant.PCA:
        d = d.as_pca()
    cov = covariances(d)
    m = cov.cyy.shape[0]
    jitter = 0.0
    if variant.tag is Variant.CCA:
        jitter = variant.omega_jitter
        if jitter is None:
            jitter = DEFAULT_OMEGA_JITTER * float(np.trace(cov.cyy)) / m
        omega_half = linalg.inv_sqrt_psd(cov.cyy, jitter)
        omega_inv_half = linalg.sqrt_psd(cov.cyy, jitter)
        omega = omega_half @ omega_half
        omega = 0.5 * (omega + omega.T)
    else:
        omega = omega_half = omega_inv_half = np.eye(m)
    B = cov.cxy @ omega_half
    return MvaProblem(
        dataset=d, variant=variant, cxx=cov.cxx, cyy=cov.cyy, cxy=cov.cxy,
        omega=omega, omega_half=omega_half, omega_inv_half=omega_inv_half,
        B=B, trace_yoy=float(np.sum(omega * cov.cyy)), jitter=jitter,
    )


@dataclass(frozen=True, eq=False)
class ProjectionModel:
    U: np.ndarray
    W: np.ndarray
    V: np.ndarray
    eigenvalues: np.ndarray
    k: int
    gamma: float
    penalty: Penalty
    variant: MvaVariant
    method: Method = Method.CLOSED_FORM
    trace: IterationTrace = None
    init: InitScheme = None
    converged: bool = True
    iterations: int = 0
    flags: frozenset = field(default_factory=frozenset)

    @property
    def losses(self):
        return () if self.trace is None else self.trace.objectives


def check_k(k, problem):
    if not isinstance(k, (int, np.integer)) or not 1 <= k <= problem.max_k:
        raise ShapeError(f"k must be an integer in [1, {problem.max_k}], got {k!r}")
    return int(k)


def fit_closed_form(d, variant, k, gamma=0.0):
    """Non-iterative solution of the ridge-regularized problem."""
    problem = d if isinstance(d, MvaProblem) else prepare_problem(d, variant)
    k = check_k(k, problem)
    M, cinv = problem.eigen_operator(gamma)
    eig = linalg.sym_eig(M)
    V = eig.eigenvectors[:, :k].copy()
    lam = eig.eigenvalues[:k].copy()
    U = cinv @ (problem.B @ V)
    W = problem.omega_inv_half @ V

    flags = set()
    top = max(float(eig.eigenvalues[0]), np.finfo(float).tiny)
    if lam[-1] <= linalg.RANK_RTOL * top:
        flags.add("beyond_rank")
        logger.warning(
            "%s: k=%d exceeds the rank of the eigenproblem; trailing eigenvalues are zero",
            problem.variant, k,
        )
    penalty = Penalty.ridge(gamma) if gamma > 0 else Penalty.none()
    return ProjectionModel(
        U=U, W=W, V=V, eigenvalues=lam, k=k, gamma=float(gamma), penalty=penalty,
        variant=problem.variant, method=Method.CLOSED_FORM, flags=frozenset(flags),
    )


def _check_shapes(problem, U, W):
    U = np.asarray(U, dtype=float)
    W = np.asarray(W, dtype=float)
    if U.ndim != 2 or W.ndim != 2 or U.shape[0] != problem.n or W.shape[0] != problem.m \
            or U.shape[1] != W.shape[1]:
        raise ShapeError(
            f"expected U ({problem.n}×k) and W ({problem.m}×k), got {U.shape} and {W.shape}"
        )
    return U, W


def objective(d, variant, U, W, penalty=None):
    """The loss L(U, W); γ and R(U) are taken from the penalty."""
    problem = d if isinstance(d, MvaProblem) else prepare_problem(d, variant)
    U, W = _check_shapes(problem, U, W)
    omega_w = problem.omega @ W
    value = (
        problem.trace_yoy
        - 2.0 * float(np.sum(U * (problem.cxy @ omega_w)))
        + float(np.sum((U.T @ problem.cxx @ U) * (W.T @ omega_w)))
    )
    if penalty is not None:
        value += penalty.gamma * penalty.value(U)
    return value


def trace_objective(d, variant, V, gamma=0.0):
    """Tr{VᵀMV}, the maximization form reported for CCA."""
    problem = d if isinstance(d, MvaProblem) else prepare_problem(d, variant)
    V = np.asarray(V, dtype=float)
    if V.ndim != 2 or V.shape[0] != problem.m:
        raise ShapeError(f"expected V with {problem.m} rows, got {V.shape}")
    M, _ = problem.eigen_operator(gamma)
    return float(np.sum(V * (M @ V)))


def uncorrelation_residual(U, C_XX):
    """‖offdiag(UᵀC_XX U)‖_F; the same quantity as metrics.cef."""
    return cef(U, C_XX)
