"""Benchmark matrix ODEs: Allen-Cahn, Lyapunov and a cubic Schrödinger model.

Stencil matrices are pure tridiagonals (no periodic corners). Grids place
``n`` equidistant points on ``[a, b)``: ``x_i = a + (i - 1)(b - a)/n``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .integrators import RhsOperator

KINDS = ("allen_cahn", "lyapunov", "schrodinger")

DEFAULT_THETA = {"allen_cahn": 1e-2, "lyapunov": 1e-5, "schrodinger": 0.1}
FULL_T_FINAL = {"allen_cahn": 10.0, "lyapunov": 1.0, "schrodinger": 5.0}
# CI-sized runs shorten Allen-Cahn
DESK_T_FINAL = {"allen_cahn": 2.0, "lyapunov": 1.0, "schrodinger": 5.0}


@dataclass(frozen=True)
class ProblemSpec:
    kind: str
    n: int
    theta: float
    t_final: float
    A0: np.ndarray
    rhs: RhsOperator
    L: np.ndarray | None = None
    D: np.ndarray | None = None
    C: np.ndarray | None = None

    @property
    def field(self) -> str:
        return self.rhs.field

    def params(self) -> dict:
        return {"kind": self.kind, "n": self.n, "theta": self.theta,
                "t_final": self.t_final}


def grid(a: float, b: float, n: int) -> np.ndarray:
    return a + np.arange(n) * ((b - a) / n)


def tridiag(n: int, diag: float, off: float) -> np.ndarray:
    M = np.diag(np.full(n, float(diag)))
    idx = np.arange(n - 1)
    M[idx, idx + 1] = off
    M[idx + 1, idx] = off
    return M


def laplacian(n: int) -> np.ndarray:
    """``n^2 / (4 pi^2) * tridiag(1, -2, 1)``."""
    return tridiag(n, -2.0, 1.0) * (n * n / (4.0 * np.pi ** 2))


def _sym_stencil(A, diag, off):
    """``T A + A T`` for the symmetric tridiagonal ``T = tridiag(off, diag, off)``."""
    out = (2.0 * diag) * A
    out[1:, :] += off * A[:-1, :]
    out[:-1, :] += off * A[1:, :]
    out[:, 1:] += off * A[:, :-1]
    out[:, :-1] += off * A[:, 1:]
    return out


def _check(n):
    if int(n) != n or n < 4:
        raise ValueError(f"grid size must be an integer >= 4, got {n}")
    return int(n)


def allen_cahn_initial(n: int) -> np.ndarray:
    x = grid(0.0, 2.0 * np.pi, n)
    X, Yg = np.meshgrid(x, x, indexing="ij")
    with np.errstate(all="ignore"):
        num = (np.exp(-np.tan(X) ** 2) + np.exp(-np.tan(Yg) ** 2)) \
            * np.sin(X) * np.sin(Yg)
        den = 1.0 + np.exp(np.abs(1.0 / np.sin(-X / 2))) \
            + np.exp(np.abs(1.0 / np.sin(-Yg / 2)))
        A0 = num / den
    # both factors vanish at their singular nodes
    A0[~np.isfinite(A0)] = 0.0
    return A0


def make_allen_cahn(n: int = 128, theta: float = 1e-2,
                    t_final: float = 10.0) -> ProblemSpec:
    """``dA/dt = theta (L A + A L) + A - A∘A∘A`` on ``[0, 2 pi)^2``."""
    n = _check(n)
    c = n * n / (4.0 * np.pi ** 2)

    def f(t, A):
        return theta * _sym_stencil(A, -2.0 * c, c) + A - A * A * A

    rhs = RhsOperator(f, (n, n), "real", f"allen_cahn(n={n}, theta={theta:g})")
    return ProblemSpec("allen_cahn", n, float(theta), float(t_final),
                       allen_cahn_initial(n), rhs, L=laplacian(n))


def lyapunov_forcing(n: int) -> np.ndarray:
    x = grid(-np.pi, np.pi, n)
    R2 = x[:, None] ** 2 + x[None, :] ** 2
    return sum(10.0 ** (-(l - 1)) * np.exp(-l * R2) for l in range(1, 12))


def make_lyapunov(n: int = 128, theta: float = 1e-5,
                  t_final: float = 1.0) -> ProblemSpec:
    """``dA/dt = L A + A L + theta C / ||C||_F`` on ``[-pi, pi)^2``."""
    n = _check(n)
    c = n * n / (4.0 * np.pi ** 2)
    x = grid(-np.pi, np.pi, n)
    A0 = np.outer(np.sin(x), np.sin(x))
    C = lyapunov_forcing(n)
    forcing = (theta / np.linalg.norm(C, "fro")) * C

    def f(t, A):
        out = _sym_stencil(A, -2.0 * c, c)
        out += forcing
        return out

    rhs = RhsOperator(f, (n, n), "real", f"lyapunov(n={n}, theta={theta:g})")
    return ProblemSpec("lyapunov", n, float(theta), float(t_final), A0, rhs,
                       L=laplacian(n), C=C)


def schrodinger_initial(n: int) -> np.ndarray:
    j = np.arange(1, n + 1, dtype=float)
    J, Lg = np.meshgrid(j, j, indexing="ij")
    A0 = np.exp(-(J - 60) ** 2 / 100 - (Lg - 50) ** 2 / 100) \
        + np.exp(-(J - 50) ** 2 / 100 - (Lg - 40) ** 2 / 100)
    return A0.astype(complex)


def make_schrodinger(n: int = 128, theta: float = 0.1,
                     t_final: float = 5.0) -> ProblemSpec:
    """``dA/dt = 0.5 i (D A + A D) + theta i |A|^2 ∘ A`` with 1-based indices."""
    n = _check(n)

    def f(t, A):
        return 0.5j * _sym_stencil(A, 0.0, 1.0) \
            + (1j * theta) * ((A.real ** 2 + A.imag ** 2) * A)

    rhs = RhsOperator(f, (n, n), "complex",
                      f"schrodinger(n={n}, theta={theta:g})")
    return ProblemSpec("schrodinger", n, float(theta), float(t_final),
                       schrodinger_initial(n), rhs, D=tridiag(n, 0.0, 1.0))


def spectral_bound(kind: str, n: int, theta: float, A0=None) -> float:
    """Rough upper bound on the Jacobian spectral radius near the initial state.

    Used only to pick a stable default step for the reference solver.
    """
    c = n * n / (4.0 * np.pi ** 2)
    if kind == "lyapunov":
        return 8.0 * c
    if kind == "allen_cahn":
        return theta * 8.0 * c + 1.0
    if kind == "schrodinger":
        amp = 1.0 if A0 is None else float(np.max(np.abs(A0)))
        return 2.0 + 3.0 * theta * amp ** 2
    raise KeyError(f"unknown problem {kind!r}; available: {', '.join(KINDS)}")


_FACTORIES = {
    "allen_cahn": make_allen_cahn,
    "lyapunov": make_lyapunov,
    "schrodinger": make_schrodinger,
}


def make_problem(kind: str, n: int = 64, theta: float | None = None,
                 t_final: float | None = None, full: bool = False) -> ProblemSpec:
    if kind not in _FACTORIES:
        raise KeyError(f"unknown problem {kind!r}; available: {', '.join(KINDS)}")
    if theta is None:
        theta = DEFAULT_THETA[kind]
    if t_final is None:
        t_final = (FULL_T_FINAL if full else DESK_T_FINAL)[kind]
    return _FACTORIES[kind](n, theta, t_final)


def zero_problem(n: int = 8, m: int | None = None, seed: int = 0,
                 t_final: float = 1.0) -> ProblemSpec:
    """``F = 0`` with a random initial state; used to test drivers."""
    m = n if m is None else m
    A0 = np.random.default_rng(seed).standard_normal((n, m))
    rhs = RhsOperator(lambda t, A: np.zeros_like(A), (n, m), "real", "zero")
    return ProblemSpec("zero", n, 0.0, float(t_final), A0, rhs)
