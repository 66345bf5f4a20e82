"""
Feature diagnostics: Total Explained Variance, Correlation of Extracted
Features and sparsity rate, plus the per-fit MetricRow the harness reports.
"""

import math
from dataclasses import dataclass

import numpy as np

from regmva import linalg
from regmva.errors import ShapeError
from regmva.regularizers import sparsity_rate

CSV_HEADER = (
    'method', 'variant', 'k', 'seed', 'gamma', 'sr', 'loss', 'tev', 'cef',
    'iterations', 'converged',
)
EXTRA_COLUMNS = ('init', 'standardize', 'error')


def feature_gram(U, C_XX):
    U = np.asarray(U, dtype=float)
    A = U.T @ np.asarray(C_XX, dtype=float) @ U
    return 0.5 * (A + A.T)


def tev(U, C_XX, k=None):
    """
    Cumulative TEV(j) = Σ_{i≤j} |R_ii| from one unpivoted QR of the k-feature
    Gram matrix UᵀC_XX U.
    """
    U = np.asarray(U, dtype=float)
    k = U.shape[1] if k is None else int(k)
    if not 0 <= k <= U.shape[1]:
        raise ShapeError(f"U has {U.shape[1]} columns, cannot report TEV for k={k}")
    if k == 0:
        return np.zeros(0)
    return np.cumsum(linalg.qr_diagonal_abs(feature_gram(U[:, :k], C_XX)))


def cef(U, C_XX):
    """‖UᵀC_XX U − diag(UᵀC_XX U)‖_F."""
    return linalg.offdiag_norm(feature_gram(U, C_XX))


@dataclass(frozen=True)
class MetricRow:
    method: str
    variant: str
    k: int
    seed: int = 0
    gamma: float = 0.0
    sr: float = 0.0
    loss: float = math.nan
    tev: tuple = ()
    cef: float = math.nan
    iterations: int = 0
    converged: bool = False
    init: str = ""
    standardize: bool = False
    error: str = ""

    @property
    def tev_final(self):
        return self.tev[-1] if self.tev else math.nan

    @property
    def failed(self):
        return bool(self.error)

    def sort_key(self):
        return (self.method, self.variant, self.k, self.sr, self.seed, self.init)

    def as_record(self):
        """Flat dict in CSV column order; tev is the final cumulative value."""
        return {
            'method': self.method, 'variant': self.variant, 'k': self.k,
            'seed': self.seed, 'gamma': self.gamma, 'sr': self.sr,
            'loss': self.loss, 'tev': self.tev_final, 'cef': self.cef,
            'iterations': self.iterations, 'converged': self.converged,
            'init': self.init, 'standardize': self.standardize, 'error': self.error,
        }


def metric_row(model, cxx, loss, seed=0, sr_target=None, standardize=False):
    """MetricRow of a fitted ProjectionModel; sr is the target grid value when given."""
    sr = sparsity_rate(model.U) if sr_target is None else float(sr_target)
    return MetricRow(
        method=model.method.value,
        variant=str(model.variant),
        k=model.k,
        seed=int(seed),
        gamma=float(model.gamma),
        sr=sr,
        loss=float(loss),
        tev=tuple(float(v) for v in tev(model.U, cxx, model.k)),
        cef=cef(model.U, cxx),
        iterations=model.iterations,
        converged=bool(model.converged),
        init="" if model.init is None else str(model.init),
        standardize=bool(standardize),
    )


def failed_row(method, variant, k, error, seed=0, sr=0.0, init="", standardize=False):
    return MetricRow(
        method=str(method), variant=str(variant), k=int(k), seed=int(seed), sr=float(sr),
        init=str(init), standardize=bool(standardize), error=str(error),
    )
