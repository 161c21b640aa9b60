"""Factored low-rank matrices ``Y = U S V^H`` and the operations on them."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .linalg import frobenius_norm, is_orthonormal, svd


@dataclass(frozen=True)
class LowRankMatrix:
    """Rank-``r`` matrix in factored form.

    ``U`` (n x r) and ``V`` (m x r) have orthonormal columns; the core ``S``
    (r x r) is not required to be diagonal or invertible.
    """

    U: np.ndarray
    S: np.ndarray
    V: np.ndarray

    def __post_init__(self):
        n, r = self.U.shape
        m, r2 = self.V.shape
        if self.S.shape != (r, r2):
            raise ValueError(
                f"core shape {self.S.shape} does not match bases ({r}, {r2})")
        if r > min(n, m):
            raise ValueError("rank exceeds dimensions")

    @property
    def shape(self) -> tuple[int, int]:
        return self.U.shape[0], self.V.shape[0]

    @property
    def rank(self) -> int:
        return self.S.shape[0]

    @property
    def dtype(self):
        return np.result_type(self.U, self.S, self.V)

    def todense(self) -> np.ndarray:
        return (self.U @ self.S) @ self.V.conj().T

    def is_valid(self, tol: float = 1e-10) -> bool:
        return is_orthonormal(self.U, tol) and is_orthonormal(self.V, tol)


def densify(Y: LowRankMatrix) -> np.ndarray:
    return Y.todense()


def _truncate_core(U_hat, S_hat, V_hat, r):
    """Rank-``r`` truncation of ``U_hat S_hat V_hat^H`` and its residual."""
    if S_hat.shape != (U_hat.shape[1], V_hat.shape[1]):
        raise ValueError(
            f"core shape {S_hat.shape} does not match bases "
            f"({U_hat.shape[1]}, {V_hat.shape[1]})")
    if r < 1:
        raise ValueError("rank must be positive")
    if r > min(S_hat.shape):
        raise ValueError("rank exceeds dimensions")
    dec = svd(S_hat)
    sigma = dec.singular_values
    residual = float(np.sqrt(np.sum(sigma[r:] ** 2)))
    U = U_hat @ dec.left[:, :r]
    V = V_hat @ dec.right[:, :r]
    S = np.diag(sigma[:r]).astype(np.result_type(U, V), copy=False)
    return LowRankMatrix(U, S, V), residual


def truncate_core(U_hat: np.ndarray, S_hat: np.ndarray, V_hat: np.ndarray,
                  r: int) -> LowRankMatrix:
    """Best rank-``r`` approximation of ``U_hat S_hat V_hat^H``.

    The SVD is taken on the small core only; the n x m product is never
    formed. ``U_hat`` and ``V_hat`` must have orthonormal columns. The core
    may be rectangular when the two augmented bases differ in size.
    """
    return _truncate_core(U_hat, S_hat, V_hat, r)[0]


def truncate_with_residual(X: np.ndarray, r: int) -> tuple[LowRankMatrix, float]:
    X = np.asarray(X)
    if r > min(X.shape):
        raise ValueError("rank exceeds dimensions")
    if r < 1:
        raise ValueError("rank must be positive")
    dec = svd(X)
    sigma = dec.singular_values
    S = np.diag(sigma[:r]).astype(X.dtype if np.iscomplexobj(X) else float)
    Y = LowRankMatrix(dec.left[:, :r], S, dec.right[:, :r])
    return Y, float(np.sqrt(np.sum(sigma[r:] ** 2)))


def truncate(X: np.ndarray, r: int) -> LowRankMatrix:
    """Best rank-``r`` approximation of a dense matrix (Eckart-Young).

    Ties at the cut keep the first ``r`` singular triplets in LAPACK order.
    """
    return truncate_with_residual(X, r)[0]


def tangent_project(Y: LowRankMatrix, Z: np.ndarray) -> np.ndarray:
    """Orthogonal projection of ``Z`` onto the tangent space at ``Y``.

    ``P(Y) Z = U U^H Z - U U^H Z V V^H + Z V V^H``
    """
    Z = np.asarray(Z)
    if Z.shape != Y.shape:
        raise ValueError(f"shape mismatch: {Z.shape} vs {Y.shape}")
    U, V = Y.U, Y.V
    UhZ = U.conj().T @ Z
    ZV = Z @ V
    return U @ UhZ - U @ (UhZ @ V) @ V.conj().T + ZV @ V.conj().T


def tangent_residual(Y: LowRankMatrix, Z: np.ndarray) -> float:
    """``||Z - P(Y) Z||_F``, the normal component of ``Z`` at ``Y``."""
    return frobenius_norm(Z - tangent_project(Y, Z))
