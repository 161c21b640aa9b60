"""Empirical checks on the Runge-Kutta BUG step.

* Galerkin vs tangent projection: the augmented bases of every stage must
  approximate each contributing right-hand side at least as well as the
  tangent-space projection at the stage where it was evaluated.
* Truncation residual vs step size: the residual of the final truncation
  shrinks proportionally to ``h``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .integrators import RhsOperator, rk_bug_step
from .linalg import frobenius_norm
from .lowrank import LowRankMatrix, tangent_residual, truncate
from .problems import ProblemSpec
from .tableaux import ButcherTableau

PROJECTION_TOL = 1e-9
RESIDUAL_RATIO = 0.75


@dataclass
class ProjectionCheck:
    stage: int       # 1-based stage whose bases are tested; s + 1 is the update
    source: int      # 1-based stage of the right-hand side F_(j)
    galerkin: float
    tangent: float

    @property
    def excess(self) -> float:
        return self.galerkin - self.tangent


def _galerkin_residual(U_hat, V_hat, F):
    P = U_hat @ ((U_hat.conj().T @ F @ V_hat) @ V_hat.conj().T)
    return frobenius_norm(F - P)


def projection_checks(F: RhsOperator, t: float, Y: LowRankMatrix, h: float,
                      tab: ButcherTableau) -> list[ProjectionCheck]:
    """Compare Galerkin and tangent projection errors inside one step."""
    _, rec = rk_bug_step(F, t, Y, h, tab, trace=True)
    tr = rec.trace
    s = tab.stages
    out = []
    for q, (U_hat, V_hat) in enumerate(tr.stage_bases):
        # bases building stage q + 2 from stages 1..q + 1
        for j in np.flatnonzero(tab.alpha[q + 1, : q + 1]):
            Fj = tr.stage_rhs[j]
            out.append(ProjectionCheck(
                q + 2, j + 1, _galerkin_residual(U_hat, V_hat, Fj),
                tangent_residual(tr.stage_states[j], Fj)))
    U_hat, V_hat = tr.final_bases
    for i in np.flatnonzero(tab.beta):
        Fi = tr.stage_rhs[i]
        out.append(ProjectionCheck(
            s + 1, i + 1, _galerkin_residual(U_hat, V_hat, Fi),
            tangent_residual(tr.stage_states[i], Fi)))
    return out


def random_state(problem: ProblemSpec, r: int, rng: np.random.Generator,
                 scale: float | None = None) -> LowRankMatrix:
    """Rank-``r`` truncation of the initial condition plus random noise."""
    A0 = problem.A0
    G = rng.standard_normal(A0.shape)
    if np.iscomplexobj(A0):
        G = G + 1j * rng.standard_normal(A0.shape)
    if scale is None:
        scale = 10.0 ** rng.uniform(-3, 0)
    size = max(frobenius_norm(A0), 1.0)
    return truncate(A0 + (scale * size / frobenius_norm(G)) * G, r)


@dataclass
class SweepResult:
    checks: int
    max_excess: float
    worst: dict | None

    @property
    def passed(self) -> bool:
        return self.max_excess <= PROJECTION_TOL


def projection_sweep(problem: ProblemSpec, tab: ButcherTableau, r: int,
                     steps: int = 50, seed: int = 0,
                     h_values=None) -> SweepResult:
    """Run :func:`projection_checks` on ``steps`` random states and step sizes."""
    rng = np.random.default_rng(seed)
    if h_values is None:
        h_values = [0.1 * 2.0 ** -q for q in range(7)]
    total, worst_excess, worst = 0, -np.inf, None
    for k in range(steps):
        Y = random_state(problem, r, rng)
        h = float(rng.choice(h_values))
        for chk in projection_checks(problem.rhs, 0.0, Y, h, tab):
            total += 1
            if chk.excess > worst_excess:
                worst_excess = chk.excess
                worst = {"instance": k, "h": h, "stage": chk.stage,
                         "source": chk.source, "galerkin": chk.galerkin,
                         "tangent": chk.tangent, "state": Y}
    return SweepResult(total, float(worst_excess), worst)


def residual_ladder(problem: ProblemSpec, tab: ButcherTableau, r: int,
                    h0: float = 0.1, rungs: int = 6,
                    Y: LowRankMatrix | None = None):
    """Final truncation residual of one step from ``Y`` for ``h0 / 2**q``.

    Returns ``(h_values, residuals, ratios)`` with ``rungs`` halvings.
    """
    if Y is None:
        Y = truncate(problem.A0, r)
    hs = h0 * 2.0 ** -np.arange(rungs + 1)
    res = np.array([rk_bug_step(problem.rhs, 0.0, Y, float(h), tab)[1].truncation_residual
                    for h in hs])
    with np.errstate(divide="ignore", invalid="ignore"):
        ratios = res[1:] / res[:-1]
    return hs, res, ratios


def ladder_passes(res, skip_first: bool = False,
                  ratio: float = RESIDUAL_RATIO, atol: float = 1e-12) -> bool:
    """``res[q+1] <= ratio * res[q] + atol`` on every rung considered."""
    start = 1 if skip_first else 0
    ok = [res[q + 1] <= ratio * res[q] + atol for q in range(start, len(res) - 1)]
    return all(ok)
