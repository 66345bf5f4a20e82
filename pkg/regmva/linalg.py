"""
Dense linear algebra contracts used by every solver.

All decompositions return deterministic orderings (descending spectra) and a
fixed sign convention: the largest-magnitude entry of every eigenvector / left
singular vector is non-negative.
"""

from dataclasses import dataclass

import numpy as np
import scipy.linalg as la

from regmva.errors import NumericalError, ShapeError, SingularMatrixError

# Relative thresholds
RANK_RTOL = 1e-12
SINGULAR_RTOL = 1e-12
PSD_RTOL = 1e-9


@dataclass(frozen=True)
class SymEig:
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray


@dataclass(frozen=True)
class Svd:
    Q: np.ndarray
    sigma: np.ndarray
    P: np.ndarray
    rank: int

    def reconstruct(self):
        return (self.Q * self.sigma) @ self.P.T


def _check_finite(A, name="matrix"):
    A = np.asarray(A, dtype=float)
    if not np.all(np.isfinite(A)):
        raise NumericalError(f"{name} contains non-finite entries")
    return A


def canonical_signs(V):
    """
    Sign vector s (entries ±1) such that V * s has the largest-magnitude entry
    of every column non-negative. Ties resolve to the first such entry.
    """
    V = np.asarray(V, dtype=float)
    if V.size == 0:
        return np.ones(V.shape[1] if V.ndim == 2 else 0)
    idx = np.argmax(np.abs(V), axis=0)
    pivots = V[idx, np.arange(V.shape[1])]
    return np.where(pivots < 0, -1.0, 1.0)


def canonicalize(V):
    return V * canonical_signs(V)


def sym_eig(A):
    """Eigendecomposition of a symmetric matrix, eigenvalues descending."""
    A = _check_finite(A)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ShapeError(f"expected a square matrix, got shape {A.shape}")
    S = 0.5 * (A + A.T)
    w, V = la.eigh(S)
    w = w[::-1].copy()
    V = V[:, ::-1]
    V = V * canonical_signs(V)
    return SymEig(eigenvalues=w, eigenvectors=np.ascontiguousarray(V))


def thin_svd(A):
    """Thin SVD A = Q diag(sigma) Pᵀ with the sign convention applied to Q."""
    A = _check_finite(A)
    if A.ndim != 2:
        raise ShapeError(f"expected a 2-D matrix, got shape {A.shape}")
    if A.size == 0:
        p, q = A.shape
        r = min(p, q)
        return Svd(Q=np.zeros((p, r)), sigma=np.zeros(r), P=np.zeros((q, r)), rank=0)
    Q, s, Pt = la.svd(A, full_matrices=False, lapack_driver="gesvd")
    signs = canonical_signs(Q)
    Q = Q * signs
    P = Pt.T * signs
    rank = int(np.sum(s > RANK_RTOL * s[0])) if s[0] > 0 else 0
    return Svd(Q=Q, sigma=s, P=P, rank=rank)


def _psd_spectrum(A):
    eig = sym_eig(A)
    lam = eig.eigenvalues
    scale = max(abs(np.trace(A)), np.finfo(float).tiny)
    if lam.size and lam[-1] < -PSD_RTOL * scale:
        raise NumericalError(
            f"matrix is not positive semidefinite (smallest eigenvalue {lam[-1]:.3e})"
        )
    return np.clip(lam, 0.0, None), eig.eigenvectors


def _psd_power(A, jitter, power):
    if jitter < 0:
        raise ValueError(f"jitter must be non-negative, got {jitter}")
    lam, V = _psd_spectrum(A)
    if jitter == 0 and power < 0 and lam.size and lam[-1] <= SINGULAR_RTOL * lam[0]:
        raise SingularMatrixError("singular matrix, supply jitter")
    d = (lam + jitter) ** power
    R = (V * d) @ V.T
    return 0.5 * (R + R.T)


def inv_sqrt_psd(A, jitter=0.0):
    """Symmetric (A + jitter·I)^{-1/2} of a PSD matrix."""
    return _psd_power(A, jitter, -0.5)


def sqrt_psd(A, jitter=0.0):
    """Symmetric (A + jitter·I)^{1/2} of a PSD matrix."""
    return _psd_power(A, jitter, 0.5)


def regularized_inverse(C, gamma):
    """(C + gamma·I)^{-1} for a PSD matrix C."""
    if gamma < 0:
        raise ValueError(f"gamma must be non-negative, got {gamma}")
    eig = sym_eig(C)
    # C is PSD; negative eigenvalues are round-off
    lam = np.clip(eig.eigenvalues, 0.0, None) + gamma
    if gamma == 0 and lam.size and lam[-1] <= SINGULAR_RTOL * max(lam[0], np.finfo(float).tiny):
        raise SingularMatrixError(
            f"C is singular (eigenvalue range {lam[-1]:.3e}..{lam[0]:.3e}); use gamma > 0"
        )
    V = eig.eigenvectors
    R = (V / lam) @ V.T
    return 0.5 * (R + R.T)


def qr_diagonal_abs(A):
    """|R_jj| of an unpivoted QR factorization of a square matrix."""
    A = _check_finite(A)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ShapeError(f"expected a square matrix, got shape {A.shape}")
    if A.size == 0:
        return np.zeros(0)
    (R,) = la.qr(A, mode="r")
    return np.abs(np.diag(R))


def offdiag_norm(A):
    A = np.asarray(A, dtype=float)
    return float(np.linalg.norm(A - np.diag(np.diag(A)), "fro"))


def projector_distance(V1, V2):
    """‖V1V1ᵀ − V2V2ᵀ‖_F, a basis-independent subspace distance."""
    return float(np.linalg.norm(V1 @ V1.T - V2 @ V2.T, "fro"))
