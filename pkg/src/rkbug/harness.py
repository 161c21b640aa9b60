"""Convergence studies: error-vs-h sweeps, order estimation, plateau detection.

The error of a run is ``max_k ||Y_k - A_k||_F`` over every grid time including
``k = 0``, where ``A_k`` is the fixed-step Fehlberg reference sampled at the
same times. The reference is computed once per study, written to a temporary
``.npy`` file and memory-mapped read-only by every cell.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
import platform
import tempfile
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .integrators import (
    METHODS,
    BlowUpError,
    iter_integrate,
    iter_reference,
    step_count,
)
from .lowrank import LowRankMatrix
from .problems import (
    DEFAULT_THETA,
    DESK_T_FINAL,
    KINDS,
    FULL_T_FINAL,
    ProblemSpec,
    make_problem,
    spectral_bound,
)
from .tableaux import STUDY_METHODS, ButcherTableau, resolve
from .tableaux import validate as validate_tableau

CSV_COLUMNS = ("problem", "theta", "n", "method", "tableau", "h", "r", "error",
               "runtime_s", "max_trunc_residual", "plateau")

# Window/plateau heuristics; overridable from the config's ``analysis`` table.
WINDOW_TOL = 0.25
PLATEAU_RATIO = 1.3
PLATEAU_SLACK = 2.0
PRECISION_FLOOR = 1e-9


class InsufficientDataError(ValueError):
    pass


# Dyadic grids h_max * 2**-q, q = 0..levels-1, chosen so the dense method is
# stable at h_max. Desk grids use n = 64, full grids n = 128.
DESK_GRIDS = {
    "lyapunov": {"h_max": 2e-3, "levels": 5, "r_values": [5]},
    "allen_cahn": {"h_max": 0.2, "levels": 8, "r_values": [5, 10, 20]},
    "schrodinger": {"h_max": 0.1, "levels": 6, "r_values": [5, 10, 20]},
}
FULL_GRIDS = {
    "lyapunov": {"h_max": 5e-4, "levels": 5, "r_values": [5, 10, 12]},
    "allen_cahn": {"h_max": 0.05, "levels": 7, "r_values": [5, 10, 20]},
    "schrodinger": {"h_max": 0.1, "levels": 7, "r_values": [5, 10, 20]},
}
FULL_METHODS = ("rk2m", "rk2h", "rk3s", "rk3h", "rk4")


def stable_h_ref(h_ref: float, problem: dict) -> float:
    """Halve ``h_ref`` until ``h_ref * rho <= 1`` for the problem's spectral bound."""
    A0 = None
    if problem["kind"] == "schrodinger":
        A0 = make_problem("schrodinger", int(problem["n"]), float(problem["theta"]),
                          float(problem["t_final"])).A0
    rho = spectral_bound(problem["kind"], int(problem["n"]),
                         float(problem["theta"]), A0)
    while h_ref * rho > 1.0:
        h_ref /= 2
    return h_ref


def default_study(kind: str, full: bool = False, **problem) -> dict:
    """Default study configuration for ``kind`` as a plain dictionary."""
    if kind not in KINDS:
        raise ValueError(f"unknown problem {kind!r}; available: {', '.join(KINDS)}")
    grid = (FULL_GRIDS if full else DESK_GRIDS)[kind]
    params = {"kind": kind, "n": 128 if full else 64,
              "theta": DEFAULT_THETA[kind],
              "t_final": (FULL_T_FINAL if full else DESK_T_FINAL)[kind]}
    params.update({k: v for k, v in problem.items() if v is not None})
    h_values = [grid["h_max"] * 2.0 ** -q for q in range(grid["levels"])]
    methods = FULL_METHODS if full else STUDY_METHODS
    return {
        "problem": params,
        "methods": [{"method": "rk_bug", "tableau": t} for t in methods],
        "h_values": h_values,
        "r_values": list(grid["r_values"]),
        "h_ref": stable_h_ref(min(h_values) / 2, params),
        "output": "results",
        "seed": 0,
    }


@dataclass
class StudyConfig:
    problem: dict
    methods: list
    h_values: list
    r_values: list
    h_ref: float | None = None
    output: str = "results"
    seed: int = 0
    tableaux: dict = field(default_factory=dict)
    analysis: dict = field(default_factory=dict)

    def __post_init__(self):
        self.methods = [tuple(m) for m in self.methods]
        self.h_values = [float(h) for h in self.h_values]
        self.r_values = [int(r) for r in self.r_values]
        if self.h_ref is None and self.h_values:
            self.h_ref = min(self.h_values) / 2
        self.tableaux = {
            name: (t if isinstance(t, ButcherTableau)
                   else ButcherTableau.from_dict({"name": name, **t}))
            for name, t in self.tableaux.items()
        }

    @property
    def t_final(self) -> float:
        return float(self.problem["t_final"])

    def validate(self) -> None:
        kind = self.problem.get("kind")
        if kind not in KINDS:
            raise ValueError(f"unknown problem {kind!r}; available: {', '.join(KINDS)}")
        if not self.methods:
            raise ValueError("empty method list")
        for name, tab in self.tableaux.items():
            problems = validate_tableau(tab)
            if problems:
                raise ValueError(f"invalid tableau {name!r}: {'; '.join(problems)}")
        for method, tab in self.methods:
            if method not in METHODS:
                raise ValueError(f"unknown method {method!r}; expected one of {METHODS}")
            if method != "bug_euler":
                resolve(tab, self.tableaux)
        if not self.h_values or not self.r_values:
            raise ValueError("h_values and r_values must be nonempty")
        if any(h <= 0 for h in self.h_values) or any(r < 1 for r in self.r_values):
            raise ValueError("h_values must be positive and r_values >= 1")
        if any(r > int(self.problem["n"]) for r in self.r_values):
            raise ValueError("rank exceeds dimensions")
        for h in self.h_values:
            step_count(0.0, self.t_final, h)
            step_count(0.0, h, self.h_ref)
        if self.h_ref > min(self.h_values) / 2 * (1 + 1e-12):
            raise ValueError("h_ref must be at most min(h_values)/2")

    def to_dict(self) -> dict:
        return {
            "problem": dict(self.problem),
            "methods": [{"method": m, "tableau": t} for m, t in self.methods],
            "h_values": list(self.h_values),
            "r_values": list(self.r_values),
            "h_ref": self.h_ref,
            "output": self.output,
            "seed": self.seed,
            "tableaux": {k: {kk: vv for kk, vv in t.to_dict().items() if kk != "name"}
                         for k, t in self.tableaux.items()},
            "analysis": dict(self.analysis),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "StudyConfig":
        known = {"problem", "methods", "h_values", "r_values", "h_ref",
                 "output", "seed", "tableaux", "analysis"}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        methods = []
        for m in d.get("methods", []):
            if isinstance(m, dict):
                methods.append((m["method"], m.get("tableau", "euler")))
            else:
                methods.append(tuple(m))
        return cls(
            problem=dict(d["problem"]),
            methods=methods,
            h_values=d.get("h_values", []),
            r_values=d.get("r_values", []),
            h_ref=d.get("h_ref"),
            output=d.get("output", "results"),
            seed=int(d.get("seed", 0)),
            tableaux=d.get("tableaux") or {},
            analysis=d.get("analysis") or {},
        )


@dataclass
class ConvergenceRecord:
    problem: str
    theta: float
    n: int
    method: str
    tableau: str
    h: float
    r: int
    error: float
    runtime_seconds: float
    max_truncation_residual: float
    plateau: bool = False
    failure: str | None = None


@dataclass
class OrderEstimate:
    slope: float
    window: tuple | None
    plateau_level: float | None
    plateau_mask: np.ndarray
    floor_bound: float


def _halving_ratios(h, e):
    """Successive error ratios rescaled to a factor-2 refinement."""
    rates = np.log(e[:-1] / e[1:]) / np.log(h[:-1] / h[1:])
    return 2.0 ** rates


def estimate_order(h, errors, window_tol: float = WINDOW_TOL,
                   plateau_ratio: float = PLATEAU_RATIO) -> OrderEstimate:
    """Empirical order of convergence and error plateau.

    The plateau is the run of finest step sizes over which the error no
    longer drops by ``plateau_ratio`` per halving of ``h``; its level is the
    median error there. The slope is a least-squares fit of ``log(error)``
    against ``log(h)`` over the longest contiguous pre-plateau window whose
    successive ratios stay within ``window_tol`` of their median.
    """
    h = np.asarray(h, dtype=float)
    e = np.asarray(errors, dtype=float)
    usable = np.isfinite(e) & (e > 0)
    idx = np.flatnonzero(usable)
    idx = idx[np.argsort(-h[idx], kind="stable")]
    if idx.size < 3:
        raise InsufficientDataError("insufficient data: fewer than 3 usable points")
    hs, es = h[idx], e[idx]
    ratios = _halving_ratios(hs, es)

    start = hs.size
    while start > 1 and ratios[start - 2] < plateau_ratio:
        start -= 1
    mask_sorted = np.zeros(hs.size, dtype=bool)
    if start < hs.size:
        start -= 1  # coarser end of the first flat pair
        mask_sorted[start:] = True
    plateau_level = float(np.median(es[mask_sorted])) if mask_sorted.any() else None

    best = None
    npairs = start - 1
    for i in range(npairs):
        for j in range(i, npairs):
            seg = ratios[i:j + 1]
            med = np.median(seg)
            if np.all(np.abs(seg / med - 1.0) <= window_tol):
                # prefer longer windows, then finer step sizes
                key = (j - i, i)
                if best is None or key >= best[0]:
                    best = (key, i, j + 1)
    if best is None:
        slope, window = math.nan, None
    else:
        _, i, j = best
        slope = float(np.polyfit(np.log(hs[i:j + 1]), np.log(es[i:j + 1]), 1)[0])
        window = (float(hs[j]), float(hs[i]))

    plateau_mask = np.zeros(h.size, dtype=bool)
    plateau_mask[idx[mask_sorted]] = True
    floor_bound = plateau_level if plateau_level is not None else float(es.min())
    return OrderEstimate(slope, window, plateau_level, plateau_mask, floor_bound)


def plateau_vs_rank(records, floor_fallback: bool = False,
                    **kwargs) -> list[tuple[int, float | None]]:
    """Plateau level per rank for records of a single (method, tableau).

    Ranks without a detected plateau get ``None``, or with
    ``floor_fallback`` the smallest error reached, which bounds the plateau
    from above.
    """
    by_rank: dict[int, list] = {}
    for rec in records:
        by_rank.setdefault(rec.r, []).append(rec)
    out = []
    for r in sorted(by_rank):
        recs = by_rank[r]
        try:
            est = estimate_order([x.h for x in recs], [x.error for x in recs], **kwargs)
            out.append((r, est.floor_bound if floor_fallback else est.plateau_level))
        except InsufficientDataError:
            out.append((r, None))
    return out


def plateau_monotone(levels, slack: float = PLATEAU_SLACK,
                     floor: float = PRECISION_FLOOR) -> bool:
    """True if levels do not increase with rank beyond ``slack`` above ``floor``.

    ``levels`` is a sequence of ``(r, level)`` pairs; ``None`` levels are
    skipped.
    """
    pts = [(r, lv) for r, lv in sorted(levels) if lv is not None]
    for (_, a), (_, b) in zip(pts, pts[1:]):
        if b <= floor:
            continue
        if b > slack * a:
            return False
    return True


# -- study execution ---------------------------------------------------------

_PROBLEM_CACHE: dict = {}


def _problem_from_params(params: dict) -> ProblemSpec:
    key = tuple(sorted(params.items()))
    if key not in _PROBLEM_CACHE:
        _PROBLEM_CACHE[key] = make_problem(
            params["kind"], int(params["n"]), float(params["theta"]),
            float(params["t_final"]))
    return _PROBLEM_CACHE[key]


def _cell_error(problem, ref, stride, method, tab, h, r):
    err = 0.0
    max_res = 0.0
    t_final = problem.t_final
    for k, rec in enumerate(iter_integrate(method, problem.rhs, problem.A0,
                                           0.0, t_final, h, tab, r)):
        Y = rec.state
        Yd = Y.todense() if isinstance(Y, LowRankMatrix) else Y
        err = max(err, float(np.linalg.norm(Yd - ref[k * stride], "fro")))
        max_res = max(max_res, rec.truncation_residual)
    return err, max_res


def _run_cell(task):
    (problem, ref_path, h_out, method, tab, h, r) = task
    if isinstance(problem, dict):
        problem = _problem_from_params(problem)
    ref = np.load(ref_path, mmap_mode="r")
    stride = step_count(0.0, h, h_out)
    t = time.perf_counter()
    failure = None
    try:
        err, max_res = _cell_error(problem, ref, stride, method, tab, h, r)
    except BlowUpError as exc:
        err, max_res, failure = math.inf, math.nan, f"blow-up: {exc}"
    return err, max_res, time.perf_counter() - t, failure


def _output_spacing(h_values, h_ref):
    mult = [step_count(0.0, h, h_ref) for h in h_values]
    return math.gcd(*mult) * h_ref


def write_reference(problem: ProblemSpec, h_ref: float, h_out: float,
                    path: str | os.PathLike) -> None:
    """Write the reference trajectory on the grid ``k h_out`` to a ``.npy`` file."""
    nout = step_count(0.0, problem.t_final, h_out) + 1
    dtype = np.complex128 if problem.field == "complex" else np.float64
    arr = np.lib.format.open_memmap(path, mode="w+", dtype=dtype,
                                    shape=(nout, *problem.A0.shape))
    for k, rec in enumerate(iter_reference(problem.rhs, 0.0, problem.A0,
                                           problem.t_final, h_ref, h_out)):
        arr[k] = rec.state
    arr.flush()
    del arr


def run_study(cfg: StudyConfig, jobs: int = 1, timing: bool = True,
              problem: ProblemSpec | None = None) -> list[ConvergenceRecord]:
    """Run every (method, tableau, r, h) cell of a study.

    Records come back in configuration order regardless of ``jobs``. Passing
    an explicit ``problem`` (e.g. a custom right-hand side) forces serial
    execution since closures cannot be shipped to worker processes.
    """
    if problem is None:
        cfg.validate()
        params = {"kind": cfg.problem["kind"], "n": int(cfg.problem["n"]),
                  "theta": float(cfg.problem["theta"]), "t_final": cfg.t_final}
        problem = _problem_from_params(params)
        shipped = params
    else:
        jobs = 1
        shipped = problem
    h_out = _output_spacing(cfg.h_values, cfg.h_ref)

    cells, tasks, seen = [], [], {}
    for method, tab_name in cfg.methods:
        tab = None if method == "bug_euler" else resolve(tab_name, cfg.tableaux)
        for r in cfg.r_values:
            for h in cfg.h_values:
                # dense runs do not depend on the rank
                key = (method, tab_name, h, None if method == "dense" else r)
                if key not in seen:
                    seen[key] = len(tasks)
                    tasks.append((method, tab, h, r))
                cells.append((method, tab_name, h, r, seen[key]))

    with tempfile.TemporaryDirectory(prefix="rkbug-ref-") as tmp:
        ref_path = os.path.join(tmp, "reference.npy")
        write_reference(problem, cfg.h_ref, h_out, ref_path)
        payload = [(shipped, ref_path, h_out, *t) for t in tasks]
        if jobs > 1:
            with ProcessPoolExecutor(max_workers=jobs) as pool:
                results = list(pool.map(_run_cell, payload))
        else:
            results = [_run_cell(p) for p in payload]

    records = []
    for method, tab_name, h, r, ti in cells:
        err, max_res, secs, failure = results[ti]
        records.append(ConvergenceRecord(
            problem.kind, problem.theta, problem.n, method, tab_name, h, r,
            err, secs if timing else math.nan, max_res, False, failure))
    flag_plateaus(records, **_analysis_kwargs(cfg))
    return records


def _analysis_kwargs(cfg):
    a = cfg.analysis or {}
    return {"window_tol": float(a.get("window_tol", WINDOW_TOL)),
            "plateau_ratio": float(a.get("plateau_ratio", PLATEAU_RATIO))}


def group_records(records) -> dict:
    groups: dict = {}
    for rec in records:
        groups.setdefault((rec.method, rec.tableau, rec.r), []).append(rec)
    return groups


def flag_plateaus(records, **kwargs) -> dict:
    """Set ``plateau`` on every record and return the per-group estimates."""
    estimates = {}
    for key, recs in group_records(records).items():
        try:
            est = estimate_order([x.h for x in recs], [x.error for x in recs], **kwargs)
        except InsufficientDataError:
            continue
        estimates[key] = est
        for rec, flag in zip(recs, est.plateau_mask):
            rec.plateau = bool(flag)
    return estimates


# -- persistence -------------------------------------------------------------

def _fmt(x) -> str:
    if isinstance(x, bool):
        return "true" if x else "false"
    if isinstance(x, float):
        return format(x, ".17g")
    return str(x)


def atomic_write(path: str | os.PathLike, text: str) -> None:
    """Write ``text`` via a temporary file and rename, never leaving partial files."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def records_to_csv(records, timing: bool = True) -> str:
    """CSV text; with ``timing=False`` the runtime column is written as ``nan``
    so that repeated runs are byte-identical."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for rec in records:
        w.writerow([_fmt(v) for v in (
            rec.problem, float(rec.theta), rec.n, rec.method, rec.tableau,
            float(rec.h), rec.r, float(rec.error),
            float(rec.runtime_seconds) if timing else math.nan,
            float(rec.max_truncation_residual), rec.plateau)])
    return buf.getvalue()


def read_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def environment_info() -> dict:
    return {
        "rkbug": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "platform": platform.platform(),
    }


def write_results(records, cfg: StudyConfig, csv_path, estimates=None,
                  timing: bool = True) -> Path:
    """Write the records CSV and a JSON sidecar next to it.

    Wall-clock runtimes always go to the sidecar; ``timing`` controls whether
    they also appear in the CSV.
    """
    csv_path = Path(csv_path)
    atomic_write(csv_path, records_to_csv(records, timing))
    estimates = estimates if estimates is not None else flag_plateaus(
        records, **_analysis_kwargs(cfg))
    meta = {
        "config": cfg.to_dict(),
        "environment": environment_info(),
        "order_estimates": [
            {"method": m, "tableau": t, "r": r,
             "slope": None if math.isnan(est.slope) else est.slope,
             "window": est.window, "plateau_level": est.plateau_level}
            for (m, t, r), est in estimates.items()
        ],
        "runtimes_s": [rec.runtime_seconds for rec in records],
        "failures": [asdict(rec) for rec in records if rec.failure],
    }
    side = csv_path.with_suffix(".json")
    atomic_write(side, json.dumps(_sanitize(meta), indent=2,
                                  default=_json_default, allow_nan=False) + "\n")
    return side


def _sanitize(o):
    """Replace non-finite floats by ``None`` so the JSON stays standard."""
    if isinstance(o, dict):
        return {k: _sanitize(v) for k, v in o.items()}
    if isinstance(o, (list, tuple)):
        return [_sanitize(v) for v in o]
    if isinstance(o, (float, np.floating)) and not math.isfinite(o):
        return None
    return o


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(type(o).__name__)
