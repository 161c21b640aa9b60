"""Time steppers for matrix ODEs ``dY/dt = F(t, Y)``.

Dense explicit Runge-Kutta, the fixed-step Fehlberg reference, the first-order
BUG step, the Runge-Kutta BUG step and a projected Runge-Kutta comparator,
plus a uniform trajectory driver.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterator

import numpy as np

from .linalg import DROP_TOL, ortho, svd
from .lowrank import (
    LowRankMatrix,
    _truncate_core,
    tangent_project,
    truncate_with_residual,
)
from .tableaux import ButcherTableau, registry_get

METHODS = ("dense", "bug_euler", "rk_bug", "prk")


class BlowUpError(FloatingPointError):
    """A stage produced non-finite values."""

    def __init__(self, message: str, stage: int | None = None,
                 step: int | None = None):
        super().__init__(message)
        self.stage = stage
        self.step = step


class RankBoundError(AssertionError):
    """An augmented basis exceeded the ``2 r s`` column bound."""


@dataclass(frozen=True)
class RhsOperator:
    """Right-hand side ``F(t, Y)`` evaluated on dense matrices."""

    func: Callable[[float, np.ndarray], np.ndarray]
    shape: tuple[int, int]
    field: str = "real"
    name: str = "rhs"

    def __call__(self, t: float, Y: np.ndarray) -> np.ndarray:
        out = self.func(t, Y)
        if out.shape != self.shape:
            raise ValueError(
                f"{self.name}: output shape {out.shape} != {self.shape}")
        return out


@dataclass
class StepTrace:
    """Intermediate quantities of one low-rank step, kept for diagnostics.

    ``stage_bases[q]`` holds the augmented bases used to build stage
    ``q + 2`` (1-based); ``final_bases`` those of the step update.
    """

    stage_states: list = field(default_factory=list)
    stage_rhs: list = field(default_factory=list)
    stage_bases: list = field(default_factory=list)
    stage_residuals: list = field(default_factory=list)
    final_bases: tuple | None = None


@dataclass(frozen=True)
class StepRecord:
    t: float
    state: LowRankMatrix | np.ndarray
    augmented_rank_used: int = 0
    truncation_residual: float = 0.0
    trace: StepTrace | None = None


def _eval(F, t, Y, stage):
    out = F(t, Y)
    if not np.all(np.isfinite(out)):
        raise BlowUpError(f"blow-up at stage {stage}", stage=stage)
    return out


def dense_rk_step(F: RhsOperator, t: float, Z: np.ndarray, h: float,
                  tab: ButcherTableau) -> np.ndarray:
    """One explicit Runge-Kutta step on a dense state."""
    if h <= 0:
        raise ValueError("step size must be positive")
    A, b, c = tab.A, tab.b, tab.c
    K = []
    for i in range(tab.stages):
        Zi = Z
        for j in range(i):
            if A[i, j] != 0.0:
                Zi = Zi + (h * A[i, j]) * K[j]
        K.append(_eval(F, t + h * c[i], Zi, i + 1))
    out = Z
    for i in range(tab.stages):
        if b[i] != 0.0:
            out = out + (h * b[i]) * K[i]
    if not np.all(np.isfinite(out)):
        raise BlowUpError(f"blow-up at stage {tab.stages}", stage=tab.stages)
    return out


def step_count(t0: float, T: float, h: float) -> int:
    """Number of steps of size ``h`` covering ``[t0, T]``; must be integral."""
    if h <= 0:
        raise ValueError("step size must be positive")
    ratio = (T - t0) / h
    n = round(ratio)
    if n < 1 or abs(ratio - n) > 1e-9 * max(abs(ratio), 1.0):
        raise ValueError(
            f"non-integer step count: (T - t0)/h = {ratio!r}")
    return int(n)


def reference_solve(F: RhsOperator, t0: float, A0: np.ndarray, T: float,
                    h_ref: float, h_out: float | None = None) -> list[StepRecord]:
    """Dense trajectory by fixed-step Fehlberg (fifth-order weights).

    States are recorded on the output grid ``t0 + k h_out``; ``h_ref`` must
    divide ``h_out``.
    """
    return list(iter_reference(F, t0, A0, T, h_ref, h_out))


def iter_reference(F, t0, A0, T, h_ref, h_out=None) -> Iterator[StepRecord]:
    h_out = h_ref if h_out is None else h_out
    n_out = step_count(t0, T, h_out)
    sub = step_count(0.0, h_out, h_ref)
    tab = registry_get("rkf45-high")
    Z = np.asarray(A0)
    yield StepRecord(t0, Z)
    k = 0
    for q in range(1, n_out + 1):
        for _ in range(sub):
            try:
                Z = dense_rk_step(F, t0 + k * h_ref, Z, h_ref, tab)
            except BlowUpError as exc:
                exc.step = k
                raise
            k += 1
        yield StepRecord(t0 + q * h_out, Z)


def _check_bound(ncols, bound, where):
    if ncols > bound:
        raise RankBoundError(
            f"{where}: augmented basis has {ncols} columns > bound {bound}")


def bug_euler_step(F: RhsOperator, t: float, Y: LowRankMatrix,
                   h: float) -> tuple[LowRankMatrix, StepRecord]:
    """First-order BUG step (forward Euler)."""
    if h <= 0:
        raise ValueError("step size must be positive")
    r = Y.rank
    U, S, V = Y.U, Y.S, Y.V
    Fk = _eval(F, t, Y.todense(), 1)
    U_hat = ortho(np.hstack([U, Fk @ V]))
    V_hat = ortho(np.hstack([V, Fk.conj().T @ U]))
    _check_bound(max(U_hat.shape[1], V_hat.shape[1]), 2 * r, "bug_euler")
    Uh = U_hat.conj().T
    S_hat = (Uh @ U) @ S @ (V.conj().T @ V_hat) + h * (Uh @ Fk @ V_hat)
    Y1, residual = _truncate_core(U_hat, S_hat, V_hat, r)
    rec = StepRecord(t + h, Y1, max(U_hat.shape[1], V_hat.shape[1]), residual)
    return Y1, rec


def rk_bug_step(F: RhsOperator, t: float, Y: LowRankMatrix, h: float,
                tab: ButcherTableau,
                trace: bool = False) -> tuple[LowRankMatrix, StepRecord]:
    """One step of the Runge-Kutta BUG integrator.

    Every stage is a BUG step from ``Y`` with the stage's weighted sum of
    previous right-hand sides. The augmented bases gather ``U_k`` and, for
    each contributing earlier stage ``j``, the blocks ``U_(j)`` and
    ``F_(j) V_(j)`` (``V_(j)`` and ``F_(j)^H U_(j)`` on the right); blocks with
    a zero coefficient are left out, and stage 1 adds no basis of its own
    since it equals ``U_k``.
    """
    if h <= 0:
        raise ValueError("step size must be positive")
    s, r = tab.stages, Y.rank
    Uk, Sk, Vk = Y.U, Y.S, Y.V
    states = [Y]
    rhs, FV, FhU = [], [], []
    tr = StepTrace() if trace else None

    def add_rhs(i):
        Yi = states[i]
        Fi = _eval(F, t + h * tab.c[i], Yi.todense(), i + 1)
        rhs.append(Fi)
        FV.append(Fi @ Yi.V)
        FhU.append(Fi.conj().T @ Yi.U)

    def galerkin(weights, mask, bound, where):
        ublocks, vblocks = [Uk], [Vk]
        for j in np.flatnonzero(mask):
            if j > 0:
                ublocks.append(states[j].U)
                vblocks.append(states[j].V)
            ublocks.append(FV[j])
            vblocks.append(FhU[j])
        U_hat = ortho(np.hstack(ublocks))
        V_hat = ortho(np.hstack(vblocks))
        _check_bound(max(U_hat.shape[1], V_hat.shape[1]), bound, where)
        Uh = U_hat.conj().T
        S_hat = (Uh @ Uk) @ Sk @ (Vk.conj().T @ V_hat)
        for j in np.flatnonzero(mask):
            S_hat = S_hat + (h * weights[j]) * (Uh @ (rhs[j] @ V_hat))
        Ynew, residual = _truncate_core(U_hat, S_hat, V_hat, r)
        return Ynew, residual, U_hat, V_hat

    for i in range(s - 1):
        add_rhs(i)
        Ynext, res, U_hat, V_hat = galerkin(
            tab.A[i + 1, : i + 1], tab.alpha[i + 1, : i + 1],
            2 * r * (i + 1), f"stage {i + 2}")
        states.append(Ynext)
        if tr is not None:
            tr.stage_bases.append((U_hat, V_hat))
            tr.stage_residuals.append(res)
    add_rhs(s - 1)
    Y1, residual, U_hat, V_hat = galerkin(tab.b, tab.beta, 2 * r * s, "update")
    if tr is not None:
        tr.stage_states = states
        tr.stage_rhs = rhs
        tr.final_bases = (U_hat, V_hat)
        tr.stage_residuals.append(residual)
    rec = StepRecord(t + h, Y1, max(U_hat.shape[1], V_hat.shape[1]),
                     residual, tr)
    return Y1, rec


def _numerical_rank(sigma):
    if sigma.size == 0 or sigma[0] == 0.0:
        return 0
    return int(np.count_nonzero(sigma > DROP_TOL * sigma[0]))


def projected_rk_step(F: RhsOperator, t: float, Y: LowRankMatrix, h: float,
                      tab: ButcherTableau) -> tuple[LowRankMatrix, StepRecord]:
    """Projected Runge-Kutta comparator.

    Stage values are rank-``r`` truncations of the explicit RK combination of
    tangent-projected right-hand sides; each projection uses the tangent
    space at the truncated stage value.
    """
    if h <= 0:
        raise ValueError("step size must be positive")
    r, A, b, c = Y.rank, tab.A, tab.b, tab.c
    Yd = Y.todense()
    states, PF = [Y], []
    for i in range(tab.stages):
        if i > 0:
            X = Yd
            for j in range(i):
                if A[i, j] != 0.0:
                    X = X + (h * A[i, j]) * PF[j]
            states.append(truncate_with_residual(X, r)[0])
        Fi = _eval(F, t + h * c[i], states[i].todense(), i + 1)
        PF.append(tangent_project(states[i], Fi))
    X = Yd
    for i in range(tab.stages):
        if b[i] != 0.0:
            X = X + (h * b[i]) * PF[i]
    dec = svd(X)
    sigma = dec.singular_values
    S = np.diag(sigma[:r]).astype(np.result_type(dec.left, dec.right))
    Y1 = LowRankMatrix(dec.left[:, :r], S, dec.right[:, :r])
    residual = float(np.sqrt(np.sum(sigma[r:] ** 2)))
    return Y1, StepRecord(t + h, Y1, _numerical_rank(sigma), residual)


def iter_integrate(method: str, F: RhsOperator, Y0, t0: float, T: float,
                   h: float, tab: ButcherTableau | str | None = None,
                   r: int | None = None) -> Iterator[StepRecord]:
    """Yield a :class:`StepRecord` at every grid time, starting with ``k = 0``.

    For the low-rank methods a dense ``Y0`` is first truncated to rank ``r``.
    """
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}; expected one of {METHODS}")
    nsteps = step_count(t0, T, h)
    if isinstance(tab, str):
        tab = registry_get(tab)
    if method in ("dense", "rk_bug", "prk") and tab is None:
        raise ValueError(f"method {method!r} needs a tableau")

    if method == "dense":
        state = Y0.todense() if isinstance(Y0, LowRankMatrix) else np.asarray(Y0)

        def step(tk, Z):
            Z1 = dense_rk_step(F, tk, Z, h, tab)
            return Z1, StepRecord(tk + h, Z1)
    else:
        if isinstance(Y0, LowRankMatrix):
            state = Y0 if r is None or r == Y0.rank else truncate_with_residual(
                Y0.todense(), r)[0]
        else:
            if r is None:
                raise ValueError("a rank is required to start from a dense state")
            state = truncate_with_residual(np.asarray(Y0), r)[0]
        if method == "bug_euler":
            def step(tk, Y):
                return bug_euler_step(F, tk, Y, h)
        elif method == "rk_bug":
            def step(tk, Y):
                return rk_bug_step(F, tk, Y, h, tab)
        else:
            def step(tk, Y):
                return projected_rk_step(F, tk, Y, h, tab)

    yield StepRecord(t0, state)
    for k in range(nsteps):
        tk = t0 + k * h
        try:
            state, rec = step(tk, state)
        except BlowUpError as exc:
            exc.step = k
            raise BlowUpError(f"{exc} (step {k}, t = {tk:.6g})",
                              stage=exc.stage, step=k) from exc
        yield StepRecord(t0 + (k + 1) * h, state, rec.augmented_rank_used,
                         rec.truncation_residual)


def integrate(method: str, F: RhsOperator, Y0, t0: float, T: float, h: float,
              tab: ButcherTableau | str | None = None,
              r: int | None = None) -> list[StepRecord]:
    return list(iter_integrate(method, F, Y0, t0, T, h, tab, r))
