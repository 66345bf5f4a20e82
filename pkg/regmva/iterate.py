"""
Coupled two-step iteration for regularized MVA.

    U-step: U ← argmin ‖VᵀΩ^{1/2}Y − UᵀX‖²_F + γR(U)      (F = C_XY Ω^{1/2} V)
    W-step: V ← Procrustes or Eigen solution for G = Ω^{1/2}C_XYᵀU

Iteration stops on the relative change of U. W = Ω^{-1/2}V on exit.
"""

import enum
import logging
from dataclasses import dataclass

import numpy as np

from regmva import linalg
from regmva.core import Method, MvaProblem, ProjectionModel, check_k, fit_closed_form, prepare_problem
from regmva.errors import DivergenceError, NotOrthogonalError, ShapeError
from regmva.regularizers import Penalty, PenaltyKind, lipschitz_constant, solve_u_step, sparsity_rate
from regmva.wstep import WStepStrategy, w_step, w_step_procrustes

logger = logging.getLogger(__name__)

DEFAULT_MAX_ITER = 500
DEFAULT_TOL = 1e-6
CHANGE_EPS = 1e-12
ORTHOGONALITY_TOL = 1e-10


class InitKind(str, enum.Enum):
    RANDOM_UNIFORM = "random"
    ORTHOGONAL = "orthogonal"
    IDEAL = "ideal"


@dataclass(frozen=True)
class InitScheme:
    """
    Starting V⁽⁰⁾ for the iteration.

    random      entries i.i.d. uniform on [0, 1), used as drawn
    orthogonal  top-k eigenvectors of C_YY (C_XX for PCA)
    ideal       the unregularized closed-form V
    """
    kind: InitKind = InitKind.RANDOM_UNIFORM
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, 'kind', InitKind(self.kind))

    @classmethod
    def random(cls, seed):
        return cls(InitKind.RANDOM_UNIFORM, int(seed))

    @classmethod
    def orthogonal(cls):
        return cls(InitKind.ORTHOGONAL)

    @classmethod
    def ideal(cls):
        return cls(InitKind.IDEAL)

    def initial_v(self, problem, k):
        if self.kind is InitKind.RANDOM_UNIFORM:
            return np.random.default_rng(self.seed).random((problem.m, k))
        if self.kind is InitKind.ORTHOGONAL:
            return linalg.sym_eig(problem.cyy).eigenvectors[:, :k].copy()
        return fit_closed_form(problem, problem.variant, k, 0.0).V

    def __str__(self):
        return self.kind.value


def derive_seed(root, index):
    """64-bit seed for run `index` of an experiment rooted at `root`."""
    seq = np.random.SeedSequence(int(root), spawn_key=(int(index),))
    return int(seq.generate_state(1, dtype=np.uint64)[0])


@dataclass(frozen=True)
class IterationRecord:
    objective: float
    u_change: float
    v_change: float
    sparsity: float


@dataclass(frozen=True)
class IterationTrace:
    records: tuple = ()
    converged: bool = False
    iterations: int = 0

    @property
    def objectives(self):
        return tuple(r.objective for r in self.records)


def _u_step(problem, V, penalty, U0, lipschitz):
    return solve_u_step(problem.cxx, problem.B @ V, penalty, U0=U0, lipschitz=lipschitz)


def fit_iterative(d, variant, k, penalty=None, strategy=WStepStrategy.EIGEN, init=None,
                  max_iter=DEFAULT_MAX_ITER, tol=DEFAULT_TOL):
    """Alternate U- and W-steps from init until ‖ΔU‖_F/‖U‖_F < tol or max_iter."""
    problem = d if isinstance(d, MvaProblem) else prepare_problem(d, variant)
    k = check_k(k, problem)
    penalty = penalty or Penalty.none()
    strategy = WStepStrategy(strategy)
    init = init or InitScheme()
    if max_iter < 1 or not tol > 0:
        raise ValueError(f"need max_iter ≥ 1 and tol > 0, got {max_iter} and {tol}")

    lipschitz = lipschitz_constant(problem.cxx) if penalty.kind is PenaltyKind.L1 else None
    V = np.asarray(init.initial_v(problem, k), dtype=float)
    if V.shape != (problem.m, k):
        raise ShapeError(f"initial V must be {problem.m}×{k}, got {V.shape}")
    step = _u_step(problem, V, penalty, None, lipschitz)
    U = step.U
    inner_ok = step.converged

    records = []
    converged = False
    ws = None
    for it in range(1, max_iter + 1):
        ws = w_step(problem.B.T @ U, strategy, previous=V)
        step = _u_step(problem, ws.V, penalty, U, lipschitz)
        inner_ok &= step.converged
        u_change = float(np.linalg.norm(step.U - U)) / (float(np.linalg.norm(U)) + CHANGE_EPS)
        v_change = float(np.linalg.norm(ws.V - V))
        U, V = step.U, ws.V
        loss = problem.objective_v(U, V, penalty)
        if not np.isfinite(loss):
            trace = IterationTrace(tuple(records), False, it)
            raise DivergenceError(f"objective became non-finite at iteration {it}", trace)
        records.append(IterationRecord(loss, u_change, v_change, sparsity_rate(U)))
        if u_change < tol:
            converged = True
            break

    trace = IterationTrace(tuple(records), converged, len(records))
    flags = set()
    if not np.any(U):
        flags.add("degenerate")
        logger.warning("%s/%s k=%d: U collapsed to zero (γ=%g)", problem.variant, strategy.value, k, penalty.gamma)
    if ws.rank_deficient:
        flags.add("rank_deficient")
    if ws.repeated:
        flags.add("repeated_eigenvalues")
    if not inner_ok:
        flags.add("inner_not_converged")
    if not converged:
        logger.warning(
            "%s/%s k=%d: no convergence in %d iterations (last ‖ΔU‖/‖U‖ = %.3e)",
            problem.variant, strategy.value, k, max_iter, records[-1].u_change,
        )
    logger.debug("%s/%s k=%d init=%s: %d iterations, loss %.12g",
                 problem.variant, strategy.value, k, init, len(records), records[-1].objective)

    sigma = linalg.thin_svd(problem.B.T @ U).sigma
    return ProjectionModel(
        U=U, W=problem.omega_inv_half @ V, V=V, eigenvalues=sigma, k=k,
        gamma=penalty.effective_gamma, penalty=penalty, variant=problem.variant,
        method=Method(strategy.value), trace=trace, init=init, converged=converged,
        iterations=len(records), flags=frozenset(flags),
    )


def stall_check(d, variant, V0):
    """
    One unregularized Procrustes iteration from an orthogonal V0; returns
    ‖V⁽¹⁾ − V⁽⁰⁾‖_F after sign canonicalization. For square V0 the map leaves
    V0 in place whatever the data, i.e. the iteration never moves.
    """
    problem = d if isinstance(d, MvaProblem) else prepare_problem(d, variant)
    V0 = np.asarray(V0, dtype=float)
    if V0.ndim != 2 or V0.shape[0] != problem.m or V0.shape[1] > problem.m:
        raise ShapeError(f"V0 must be {problem.m}×k with k ≤ {problem.m}, got {V0.shape}")
    defect = float(np.abs(V0.T @ V0 - np.eye(V0.shape[1])).max())
    if defect > ORTHOGONALITY_TOL:
        raise NotOrthogonalError(f"V0ᵀV0 differs from I by {defect:.3e}")
    M, _ = problem.eigen_operator(0.0)
    # G = Ω^{1/2}C_XYᵀU with U = C_XX⁻¹C_XY Ω^{1/2}V0
    V1 = w_step_procrustes(M @ V0, previous=V0).V
    return float(np.linalg.norm(linalg.canonicalize(V1) - linalg.canonicalize(V0)))
