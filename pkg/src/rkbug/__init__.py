"""Runge-Kutta basis-update & Galerkin integrators for matrix ODEs."""

__version__ = "0.1.0"

from .linalg import SvdResult, frobenius_inner, frobenius_norm, ortho, svd  # noqa: E402
from .lowrank import (  # noqa: E402
    LowRankMatrix,
    densify,
    tangent_project,
    truncate,
    truncate_core,
)
from .tableaux import ButcherTableau, registry_get, validate  # noqa: E402
from .integrators import (  # noqa: E402
    BlowUpError,
    RhsOperator,
    StepRecord,
    bug_euler_step,
    dense_rk_step,
    integrate,
    projected_rk_step,
    reference_solve,
    rk_bug_step,
)
from .problems import (  # noqa: E402
    ProblemSpec,
    make_allen_cahn,
    make_lyapunov,
    make_problem,
    make_schrodinger,
)

__all__ = [
    "BlowUpError", "ButcherTableau", "LowRankMatrix", "ProblemSpec",
    "RhsOperator", "StepRecord", "SvdResult", "bug_euler_step", "dense_rk_step",
    "densify", "frobenius_inner", "frobenius_norm", "integrate",
    "make_allen_cahn", "make_lyapunov", "make_problem", "make_schrodinger",
    "ortho", "projected_rk_step", "reference_solve", "registry_get",
    "rk_bug_step", "svd", "tangent_project", "truncate", "truncate_core",
    "validate",
]
