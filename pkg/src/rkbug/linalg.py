"""Dense kernels shared by every integrator.

All routines accept real or complex ``numpy`` arrays and keep the input's
scalar field. Transposes are conjugate transposes throughout, which reduces to
the plain transpose for real data.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

DROP_TOL = 1e-12


@dataclass(frozen=True)
class SvdResult:
    """Thin SVD ``M = left @ diag(singular_values) @ right^H``."""

    left: np.ndarray
    singular_values: np.ndarray
    right: np.ndarray

    def reconstruct(self) -> np.ndarray:
        return (self.left * self.singular_values) @ self.right.conj().T


def ctranspose(M: np.ndarray) -> np.ndarray:
    return M.conj().T


def frobenius_norm(M: np.ndarray) -> float:
    return float(np.linalg.norm(M, "fro")) if np.size(M) else 0.0


def frobenius_inner(A: np.ndarray, B: np.ndarray) -> complex:
    """<A, B> = trace(A^H B)."""
    return complex(np.vdot(A, B))


def _as_matrix(M) -> np.ndarray:
    M = np.asarray(M)
    if M.ndim != 2:
        raise ValueError(f"expected a 2-d matrix, got shape {M.shape}")
    if M.shape[0] == 0 or M.shape[1] == 0:
        raise ValueError("empty matrix")
    return M


def ortho(M: np.ndarray, drop_tol: float = DROP_TOL) -> np.ndarray:
    """Orthonormal basis of ``range(M)`` from a column-pivoted QR.

    Columns are scaled to unit norm first, so blocks of very different
    magnitude (an orthonormal basis next to ``F V``) are judged on their own
    scale. Columns whose pivoted-QR diagonal falls below ``drop_tol`` times the
    leading diagonal are then discarded; the column count is the numerical
    rank of the equilibrated ``M``. An all-zero ``M`` yields the first
    canonical basis vector so that augmented bases are never empty.
    """
    M = _as_matrix(M)
    if drop_tol < 0:
        raise ValueError("drop_tol must be nonnegative")
    if not np.all(np.isfinite(M)):
        raise ValueError("non-finite input")
    norms = np.linalg.norm(M, axis=0)
    scale = np.divide(1.0, norms, out=np.zeros_like(norms), where=norms > 0)
    Q, R, _ = sla.qr(M * scale, mode="economic", pivoting=True,
                     check_finite=False)
    diag = np.abs(np.diag(R))
    if diag.size == 0 or diag[0] == 0.0:
        e1 = np.zeros((M.shape[0], 1), dtype=Q.dtype)
        e1[0, 0] = 1.0
        return e1
    keep = diag > drop_tol * diag[0]
    # geqp3 diagonals are nonincreasing; cut at the first small pivot
    k = int(np.argmin(keep)) if not keep.all() else keep.size
    return Q[:, :k]


def svd(M: np.ndarray) -> SvdResult:
    """Thin SVD with singular values in nonincreasing order.

    Uses LAPACK ``gesdd`` and falls back to ``gesvd`` if the divide-and-conquer
    driver fails to converge.
    """
    M = _as_matrix(M)
    if not np.all(np.isfinite(M)):
        raise ValueError("non-finite input")
    try:
        u, s, vh = sla.svd(M, full_matrices=False, check_finite=False,
                           lapack_driver="gesdd")
    except np.linalg.LinAlgError:
        u, s, vh = sla.svd(M, full_matrices=False, check_finite=False,
                           lapack_driver="gesvd")
    return SvdResult(u, s, vh.conj().T)


def is_orthonormal(Q: np.ndarray, tol: float = 1e-10) -> bool:
    k = Q.shape[1]
    return bool(np.max(np.abs(Q.conj().T @ Q - np.eye(k)), initial=0.0) <= tol)
