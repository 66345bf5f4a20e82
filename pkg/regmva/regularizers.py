"""
U-step: multi-output regularized least squares

    min_U ‖Y′ − UᵀX‖²_F + γR(U),   R ∈ {none, ridge, ℓ1, ℓ2,1}.

Solvers work in covariance form with C = XXᵀ and F = XY′ᵀ:
q(U) = Tr{UᵀCU} − 2Tr{UᵀF} + γR(U) (+ ‖Y′‖²_F).
"""

import enum
import logging
import math
from dataclasses import dataclass, replace

import numpy as np

from regmva import linalg

logger = logging.getLogger(__name__)

# Configuration
DEFAULT_MAX_INNER_ITER = 10000
# Stationarity: optimality residual ≤ inner_tol·(1 + ‖F‖_F)
DEFAULT_INNER_TOL = 1e-5
# No progress: relative objective change below STALL_RTOL for STALL_STEPS steps
STALL_RTOL = 1e-15
STALL_STEPS = 50
L21_DELTA = 1e-10
ZERO_ROW_TOL = 1e-10
ZERO_ENTRY_TOL = 1e-12
GAMMA_BRACKET = (1e-6, 1e6)
GAMMA_WIDE_BRACKET = (1e-8, 1e8)
MAX_BISECTION_STEPS = 60
MAX_BACKTRACKS = 60


class PenaltyKind(str, enum.Enum):
    NONE = "none"
    RIDGE = "ridge"
    L1 = "l1"
    L21 = "l21"


@dataclass(frozen=True)
class Penalty:
    kind: PenaltyKind = PenaltyKind.NONE
    gamma: float = 0.0
    max_inner_iter: int = DEFAULT_MAX_INNER_ITER
    inner_tol: float = DEFAULT_INNER_TOL

    def __post_init__(self):
        object.__setattr__(self, 'kind', PenaltyKind(self.kind))
        if not self.gamma >= 0:
            raise ValueError(f"gamma must be non-negative, got {self.gamma}")
        if self.max_inner_iter < 1:
            raise ValueError("max_inner_iter must be positive")

    @classmethod
    def none(cls):
        return cls(PenaltyKind.NONE, 0.0)

    @classmethod
    def ridge(cls, gamma):
        return cls(PenaltyKind.RIDGE, float(gamma))

    @classmethod
    def l1(cls, gamma):
        return cls(PenaltyKind.L1, float(gamma))

    @classmethod
    def l21(cls, gamma):
        return cls(PenaltyKind.L21, float(gamma))

    @property
    def effective_gamma(self):
        return 0.0 if self.kind is PenaltyKind.NONE else self.gamma

    def with_gamma(self, gamma):
        return replace(self, gamma=float(gamma))

    def value(self, U):
        """R(U); zero for kind=none."""
        U = np.asarray(U, dtype=float)
        if self.kind is PenaltyKind.RIDGE:
            return float(np.sum(U * U))
        if self.kind is PenaltyKind.L1:
            return float(np.sum(np.abs(U)))
        if self.kind is PenaltyKind.L21:
            return float(np.sum(np.linalg.norm(U, axis=1)))
        return 0.0


@dataclass(frozen=True, eq=False)
class UStepResult:
    U: np.ndarray
    converged: bool
    iterations: int
    objective: float
    residual: float = 0.0
    # objective per inner iteration (l1, l21) and row support per sweep (l21)
    history: tuple = ()
    support: tuple = ()


def soft_threshold(z, tau):
    """sign(z)·max(|z| − τ, 0), elementwise."""
    return np.sign(z) * np.maximum(np.abs(z) - tau, 0.0)


def sparsity_rate(U):
    U = np.asarray(U, dtype=float)
    if U.size == 0:
        return 0.0
    return float(np.mean(np.abs(U) <= ZERO_ENTRY_TOL))


def u_step_objective(C, F, U, penalty, const=0.0):
    return (
        const
        + float(np.sum(U * (C @ U)))
        - 2.0 * float(np.sum(U * F))
        + penalty.effective_gamma * penalty.value(U)
    )


def optimality_residual(C, F, U, penalty):
    """
    Norm of the smallest subgradient of q at U (zero at the minimizer).
    """
    gamma = penalty.effective_gamma
    grad = 2.0 * (C @ U - F)
    if penalty.kind is PenaltyKind.RIDGE:
        return float(np.linalg.norm(grad + 2.0 * gamma * U))
    if penalty.kind is PenaltyKind.L1:
        nonzero = np.abs(U) > ZERO_ENTRY_TOL
        r = np.where(nonzero, grad + gamma * np.sign(U), np.maximum(np.abs(grad) - gamma, 0.0))
        return float(np.linalg.norm(r))
    if penalty.kind is PenaltyKind.L21:
        norms = np.linalg.norm(U, axis=1)
        r = np.empty_like(U)
        for i, norm in enumerate(norms):
            if norm > ZERO_ROW_TOL:
                r[i] = grad[i] + gamma * U[i] / norm
            else:
                g = np.linalg.norm(grad[i])
                r[i] = grad[i] * (max(g - gamma, 0.0) / g if g > 0 else 0.0)
        return float(np.linalg.norm(r))
    return float(np.linalg.norm(grad))


def lipschitz_constant(C):
    """Lipschitz constant of ∇ Tr{UᵀCU}, i.e. 2·λ_max(C)."""
    lam_max = float(linalg.sym_eig(C).eigenvalues[0]) if C.size else 0.0
    return 2.0 * lam_max if lam_max > 0 else 1.0


# =============================================================================
# SOLVERS
# =============================================================================
def _stalled(count, before, after):
    """Consecutive steps whose objective change is below round-off."""
    if before - after <= STALL_RTOL * max(abs(before), abs(after), np.finfo(float).tiny):
        return count + 1
    return 0


def _l1_column(C, f, penalty, L, x0, bound):
    """
    Monotone FISTA with backtracking and restart for uᵀCu − 2fᵀu + γ‖u‖₁.
    Stops once the column's optimality residual is within bound.
    """
    gamma = penalty.gamma

    def smooth(u):
        return float(u @ (C @ u)) - 2.0 * float(f @ u)

    def total(u):
        return smooth(u) + gamma * float(np.sum(np.abs(u)))

    def residual(u):
        return optimality_residual(C, f[:, None], u[:, None], penalty)

    x = x0.copy()
    y = x.copy()
    fx = total(x)
    history = [fx]
    if residual(x) <= bound:
        return x, True, 0, history
    t = 1.0
    stalled = 0
    for it in range(1, penalty.max_inner_iter + 1):
        grad = 2.0 * (C @ y - f)
        fy = smooth(y)
        for _ in range(MAX_BACKTRACKS):
            z = soft_threshold(y - grad / L, gamma / L)
            step = z - y
            bound_z = fy + float(grad @ step) + 0.5 * L * float(step @ step)
            if smooth(z) <= bound_z + 1e-12 * abs(fy) or not np.isfinite(bound_z):
                break
            L *= 2.0
        fz = total(z)
        fx_prev = fx
        if fz <= fx:
            t_next = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * t * t))
            x_prev, x, fx = x, z, fz
            y = x + ((t - 1.0) / t_next) * (x - x_prev)
            t = t_next
        else:
            # restart momentum from the last accepted point
            y, t = x, 1.0
        history.append(fx)
        if residual(x) <= bound:
            return x, True, it, history
        stalled = _stalled(stalled, fx_prev, fx)
        if stalled >= STALL_STEPS:
            break
    return x, False, it, history


def _solve_l1(C, F, penalty, U0, lipschitz, bound):
    L = lipschitz if lipschitz is not None else lipschitz_constant(C)
    U0 = np.zeros_like(F) if U0 is None else np.asarray(U0, dtype=float)
    # Columns decouple; each gets an equal share of the squared residual budget.
    column_bound = bound / math.sqrt(max(F.shape[1], 1))
    columns = []
    traces = []
    iterations = 0
    for j in range(F.shape[1]):
        u, _, it, trace = _l1_column(C, F[:, j], penalty, L, U0[:, j], column_bound)
        columns.append(u)
        traces.append(trace)
        iterations = max(iterations, it)
    U = np.column_stack(columns) if columns else np.zeros_like(F)
    U[np.abs(U) <= ZERO_ENTRY_TOL] = 0.0
    history = tuple(
        sum(trace[min(i, len(trace) - 1)] for trace in traces) for i in range(iterations + 1)
    ) if traces else ()
    return U, iterations, history


def _screen_rows(C, F, U, gamma):
    """
    One pass of exact row updates where the row optimum given the others is
    zero (2‖h_i‖ ≤ γ) or the row is zero but should not be.
    """
    for i in range(U.shape[0]):
        h = F[i] - C[i] @ U + C[i, i] * U[i]
        norm = float(np.linalg.norm(h))
        if 2.0 * norm <= gamma:
            U[i] = 0.0
        elif not np.any(U[i]) and C[i, i] > 0:
            U[i] = (1.0 - gamma / (2.0 * norm)) * h / C[i, i]
    return U


def _row_support(U):
    return int(np.count_nonzero(np.any(U != 0.0, axis=1)))


def _solve_l21(C, F, penalty, U0, bound):
    """
    Iteratively reweighted ridge: U ← (C + γD)⁻¹F, D = diag(1/(2‖u_i‖ + δ)),
    over the nonzero rows. Rows are screened after every sweep.
    """
    gamma = penalty.gamma
    if U0 is None:
        U = linalg.regularized_inverse(C, gamma) @ F
    else:
        U = np.asarray(U0, dtype=float).copy()
    U = _screen_rows(C, F, U, gamma)
    history = [u_step_objective(C, F, U, penalty)]
    support = [_row_support(U)]
    if optimality_residual(C, F, U, penalty) <= bound:
        return U, 0, history, support
    stalled = 0
    it = 0
    for it in range(1, penalty.max_inner_iter + 1):
        live = np.flatnonzero(np.any(U != 0.0, axis=1))
        if not live.size:
            U = _screen_rows(C, F, U, gamma)
            live = np.flatnonzero(np.any(U != 0.0, axis=1))
            if not live.size:
                break
        # (C + γD)⁻¹ = S (SCS + γI)⁻¹ S with S = D^{-1/2}
        s = np.sqrt(2.0 * np.linalg.norm(U[live], axis=1) + L21_DELTA)
        inner = linalg.regularized_inverse(s[:, None] * C[np.ix_(live, live)] * s[None, :], gamma)
        U = np.zeros_like(F)
        U[live] = s[:, None] * (inner @ (s[:, None] * F[live]))
        U = _screen_rows(C, F, U, gamma)
        history.append(u_step_objective(C, F, U, penalty))
        support.append(_row_support(U))
        if optimality_residual(C, F, U, penalty) <= bound:
            break
        stalled = _stalled(stalled, history[-2], history[-1])
        if stalled >= STALL_STEPS:
            break
    return U, it, history, support


def solve_u_step(C, F, penalty=None, U0=None, lipschitz=None, const=0.0):
    """
    U-step in covariance form. U0 warm-starts the iterative penalties;
    lipschitz may carry a precomputed 2·λ_max(C).

    The iterative penalties report converged only when the optimality
    residual is at most penalty.inner_tol·(1 + ‖F‖_F).
    """
    penalty = penalty or Penalty.none()
    C = np.asarray(C, dtype=float)
    F = np.asarray(F, dtype=float)
    if F.ndim == 1:
        F = F[:, None]
    bound = penalty.inner_tol * (1.0 + float(np.linalg.norm(F)))
    history, support = (), ()
    closed_form = penalty.kind in (PenaltyKind.NONE, PenaltyKind.RIDGE) or penalty.gamma == 0
    if closed_form:
        U = linalg.regularized_inverse(C, penalty.effective_gamma) @ F
        iterations = 0
    elif penalty.kind is PenaltyKind.L1:
        U, iterations, history = _solve_l1(C, F, penalty, U0, lipschitz, bound)
    else:
        U, iterations, history, support = _solve_l21(C, F, penalty, U0, bound)
        support = tuple(support)
    history = tuple(v + const for v in history)

    residual = optimality_residual(C, F, U, penalty)
    converged = closed_form or residual <= bound
    logger.debug(
        "%s U-step: %d iterations, residual %.3e (bound %.3e)",
        penalty.kind.value, iterations, residual, bound,
    )
    if not converged:
        logger.warning(
            "%s U-step not stationary after %d iterations (γ=%g, residual %.3e > %.3e)",
            penalty.kind.value, iterations, penalty.gamma, residual, bound,
        )
    return UStepResult(
        U=U, converged=converged, iterations=iterations,
        objective=u_step_objective(C, F, U, penalty, const),
        residual=residual, history=history, support=support,
    )


def u_step(d, Yprime, penalty=None, U0=None):
    """U-step on data: Y′ = WᵀΩY (k×N) is supplied by the caller."""
    Yprime = np.atleast_2d(np.asarray(Yprime, dtype=float))
    if Yprime.shape[1] != d.N:
        raise ValueError(f"Y′ must have {d.N} columns, got {Yprime.shape}")
    C = d.X @ d.X.T
    F = d.X @ Yprime.T
    return solve_u_step(0.5 * (C + C.T), F, penalty, U0=U0, const=float(np.sum(Yprime * Yprime)))


# =============================================================================
# γ CALIBRATION
# =============================================================================
@dataclass(frozen=True, eq=False)
class SparsityFit:
    gamma: float
    sparsity: float
    model: object
    within_tolerance: bool
    flags: frozenset


def gamma_for_sparsity(d, variant, k, kind, target, tolerance=0.01, fit=None):
    """
    Bisection on log γ for a fitted sparsity rate within ±tolerance of target.

    fit(penalty) -> ProjectionModel defaults to an Eigen-strategy iterative fit
    from a random uniform start (seed 0).
    """
    from regmva.iterate import InitScheme, fit_iterative
    from regmva.core import prepare_problem
    from regmva.wstep import WStepStrategy

    if not 0.0 <= target <= 1.0:
        raise ValueError(f"target sparsity must lie in [0, 1], got {target}")
    kind = PenaltyKind(kind)
    if fit is None:
        problem = prepare_problem(d, variant)

        def fit(penalty):
            return fit_iterative(problem, variant, k, penalty, WStepStrategy.EIGEN, InitScheme())

    cache = {}

    def evaluate(gamma):
        if gamma not in cache:
            model = fit(Penalty(kind, gamma))
            cache[gamma] = (sparsity_rate(model.U), model)
        return cache[gamma]

    def closest():
        gamma = min(cache, key=lambda g: (abs(cache[g][0] - target), g))
        return gamma, cache[gamma]

    def search(lo, hi):
        sr_lo, _ = evaluate(lo)
        sr_hi, _ = evaluate(hi)
        if sr_lo > sr_hi + tolerance:
            return None
        if sr_lo >= target - tolerance:
            return lo
        if sr_hi <= target + tolerance:
            return hi
        for _ in range(MAX_BISECTION_STEPS):
            mid = math.sqrt(lo * hi)
            sr_mid, _ = evaluate(mid)
            if abs(sr_mid - target) <= tolerance:
                return mid
            if sr_mid < target:
                lo = mid
            else:
                hi = mid
            if hi / lo < 1.0 + 1e-12:
                break
        return closest()[0]

    flags = set()
    if target <= tolerance:
        gamma = GAMMA_BRACKET[0]
    else:
        gamma = search(*GAMMA_BRACKET)
    if gamma is None:
        logger.warning("SR(γ) not monotone on %s; widening to %s", GAMMA_BRACKET, GAMMA_WIDE_BRACKET)
        gamma = search(*GAMMA_WIDE_BRACKET)
        if gamma is None:
            flags.add("non_monotone")
            gamma = closest()[0]

    sparsity, model = evaluate(gamma)
    within = abs(sparsity - target) <= tolerance
    if not within:
        flags.add("target_not_reached")
        logger.warning(
            "sparsity target %.3f not reached: γ=%.3e gives SR=%.3f", target, gamma, sparsity
        )
    return SparsityFit(
        gamma=gamma, sparsity=sparsity, model=model, within_tolerance=within,
        flags=frozenset(flags),
    )
