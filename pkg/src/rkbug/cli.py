"""Command-line interface.

Subcommands
-----------
``run``          one (method, tableau, h, r) trajectory against a reference
``convergence``  a full study grid, CSV + JSON sidecar + gnuplot script
``diagnostics``  projection-accuracy sweep and truncation-residual ladder
``tableaux``     list or show the built-in Butcher tableaux

Exit codes: 0 success, 1 failed check, 2 usage or configuration error,
3 numerical blow-up.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .diagnostics import (
    PROJECTION_TOL,
    RESIDUAL_RATIO,
    ladder_passes,
    projection_sweep,
    residual_ladder,
)
from .harness import (
    StudyConfig,
    _sanitize,
    atomic_write,
    default_study,
    environment_info,
    flag_plateaus,
    run_study,
    stable_h_ref,
    write_results,
    _analysis_kwargs,
)
from .integrators import (
    METHODS,
    BlowUpError,
    iter_integrate,
    iter_reference,
    step_count,
)
from .lowrank import LowRankMatrix
from .problems import DEFAULT_THETA, DESK_T_FINAL, KINDS, FULL_T_FINAL, make_problem
from .tableaux import available, registry_get, resolve, validate

EXIT_OK, EXIT_CHECK, EXIT_USAGE, EXIT_BLOWUP = 0, 1, 2, 3


class UsageError(ValueError):
    pass


# -- config ------------------------------------------------------------------

def load_config(path) -> dict:
    try:
        with open(path) as fh:
            data = yaml.safe_load(fh)
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc.strerror}") from None
    except yaml.YAMLError as exc:
        raise UsageError(f"malformed config {path}: {exc}") from None
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise UsageError(f"config {path} must be a mapping at top level")
    return data


def dump_config(cfg: StudyConfig) -> str:
    return yaml.safe_dump(cfg.to_dict(), sort_keys=False)


def _problem_overrides(args) -> dict:
    return {"n": args.n, "theta": args.theta, "t_final": args.t_final}


def _csv_list(text: str, conv) -> list:
    items = [x.strip() for x in text.split(",") if x.strip()]
    try:
        return [conv(x) for x in items]
    except ValueError:
        raise UsageError(f"cannot parse list {text!r}") from None


def study_config(args) -> StudyConfig:
    """Effective study configuration: defaults or file, then CLI overrides."""
    if args.config:
        d = load_config(args.config)
        if "problem" not in d or not isinstance(d["problem"], dict):
            raise UsageError("config needs a 'problem' mapping")
        kind = args.problem or d["problem"].get("kind")
        d["problem"] = {**d["problem"], "kind": kind}
        for key, val in _problem_overrides(args).items():
            if val is not None:
                d["problem"][key] = val
        prob = d["problem"]
        prob.setdefault("n", 128 if args.full else 64)
        if kind in KINDS:
            prob.setdefault("theta", DEFAULT_THETA[kind])
            prob.setdefault("t_final", (FULL_T_FINAL if args.full else DESK_T_FINAL)[kind])
    else:
        d = default_study(args.problem or "lyapunov", args.full,
                          **_problem_overrides(args))
    if args.tableau is not None:
        method = args.method or "rk_bug"
        d["methods"] = [{"method": method, "tableau": t}
                        for t in _csv_list(args.tableau, str)]
    elif args.method is not None:
        d["methods"] = [{**m, "method": args.method} if isinstance(m, dict)
                        else {"method": args.method, "tableau": m[1]}
                        for m in d.get("methods", [])]
    if args.h_values is not None:
        d["h_values"] = _csv_list(args.h_values, float)
        if args.h_ref is None and not args.config:
            d["h_ref"] = None
    if args.r_values is not None:
        d["r_values"] = _csv_list(args.r_values, int)
    if args.h_ref is not None:
        d["h_ref"] = args.h_ref
    if args.output is not None:
        d["output"] = args.output
    if args.seed is not None:
        d["seed"] = args.seed
    try:
        cfg = StudyConfig.from_dict(d)
        if d.get("h_ref") is None and cfg.h_values:
            cfg.h_ref = stable_h_ref(cfg.h_ref, cfg.problem)
        cfg.validate()
    except (KeyError, TypeError) as exc:
        raise UsageError(f"invalid config: {exc}") from None
    return cfg


# -- plot script -------------------------------------------------------------

def plot_script(records, csv_name: str, png_name: str, custom: dict | None = None) -> str:
    """Gnuplot script with one log-log panel per (method, tableau)."""
    panels = []
    for rec in records:
        key = (rec.method, rec.tableau)
        if key not in panels:
            panels.append(key)
    cols = min(3, len(panels)) or 1
    rows = math.ceil(len(panels) / cols) or 1
    out = io.StringIO()
    w = out.write
    w("# error vs step size, one panel per method; dashed line: slope p\n")
    w(f"set terminal pngcairo size {420 * cols},{360 * rows}\n")
    w(f"set output '{png_name}'\n")
    w("set datafile separator ','\n")
    w("set logscale xy\nset format y '10^{%L}'\nset key bottom right\n")
    w("set xlabel 'h'\nset ylabel 'error'\n")
    w(f"set multiplot layout {rows},{cols}\n")
    for method, tab in panels:
        recs = [x for x in records if (x.method, x.tableau) == (method, tab)]
        ranks = sorted({x.r for x in recs})
        p = 1 if method == "bug_euler" else resolve(tab, custom).order
        # anchor the guide below the coarsest finite error of the largest rank
        top = [x for x in recs if x.r == ranks[-1] and math.isfinite(x.error)]
        h0 = max(x.h for x in top) if top else 1.0
        e0 = max((x.error for x in top if x.h == h0), default=1.0) or 1.0
        coef = 0.5 * e0 / h0 ** p
        w(f"set title '{method} / {tab}' noenhanced\n")
        curves = [
            f"'{csv_name}' using (strcol(4) eq '{method}' && strcol(5) eq '{tab}'"
            f" && $7 == {r} ? $6 : 1/0):8 with linespoints title 'r = {r}' noenhanced"
            for r in ranks
        ]
        curves.append(f"{coef:.6g}*x**{p} with lines dt 2 lc 'black' title 'h^{p}'")
        w("plot " + ", \\\n     ".join(curves) + "\n")
    w("unset multiplot\n")
    return out.getvalue()


# -- subcommands -------------------------------------------------------------

def cmd_tableaux(args) -> int:
    if args.name:
        tab = registry_get(args.name)
        print(f"{tab.name}: {tab.stages} stages, order {tab.order}")
        with np.printoptions(precision=6, suppress=True):
            print("A =\n" + str(tab.A))
            print("b = " + str(tab.b))
            print("c = " + str(tab.c))
        problems = validate(tab)
        print("valid" if not problems else "invalid: " + "; ".join(problems))
        return EXIT_OK
    for name in available():
        tab = registry_get(name)
        status = "ok" if not validate(tab) else "invalid"
        print(f"{name:6s} stages={tab.stages} order={tab.order} {status}")
    return EXIT_OK


def cmd_run(args) -> int:
    kind = args.problem or "lyapunov"
    if kind not in KINDS:
        raise UsageError(f"unknown problem {kind!r}; available: {', '.join(KINDS)}")
    method = args.method or "rk_bug"
    if method not in METHODS:
        raise UsageError(f"unknown method {method!r}; available: {', '.join(METHODS)}")
    tab_name = args.tableau or "rk2m"
    tab = registry_get(tab_name)
    n = args.n or (128 if args.full else 64)
    t_final = args.t_final if args.t_final is not None else \
        (FULL_T_FINAL if args.full else DESK_T_FINAL)[kind]
    h = args.h if args.h is not None else 0.01
    r = args.r if args.r is not None else 5
    if not 1 <= r <= n:
        raise UsageError("rank exceeds dimensions" if r > n else "rank must be >= 1")
    nsteps = step_count(0.0, t_final, h)
    problem = make_problem(kind, n, args.theta, t_final)
    h_ref = args.h_ref if args.h_ref is not None else \
        stable_h_ref(h / 2, problem.params())
    step_count(0.0, h, h_ref)

    rows = []
    ref = iter_reference(problem.rhs, 0.0, problem.A0, t_final, h_ref, h)
    traj = iter_integrate(method, problem.rhs, problem.A0, 0.0, t_final, h, tab, r)
    for k, (rec, rrec) in enumerate(zip(traj, ref)):
        Y = rec.state
        Yd = Y.todense() if isinstance(Y, LowRankMatrix) else Y
        err = float(np.linalg.norm(Yd - rrec.state, "fro"))
        rows.append((k, k * h, err, rec.truncation_residual, rec.augmented_rank_used))
    assert len(rows) == nsteps + 1

    outdir = Path(args.output or "results")
    stem = f"run_{kind}_{method}_{tab_name}_h{h:g}_r{r}"
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(("k", "t", "error", "truncation_residual", "augmented_rank"))
    for k, t, e, res, rank in rows:
        wr.writerow((k, format(t, ".17g"), format(e, ".17g"), format(res, ".17g"), rank))
    atomic_write(outdir / f"{stem}.csv", buf.getvalue())
    meta = {
        "problem": problem.params(), "method": method, "tableau": tab_name,
        "h": h, "r": r, "h_ref": h_ref, "steps": nsteps,
        "error": max(x[2] for x in rows), "final_error": rows[-1][2],
        "max_truncation_residual": max(x[3] for x in rows),
        "environment": environment_info(),
    }
    atomic_write(outdir / f"{stem}.json", json.dumps(_sanitize(meta), indent=2) + "\n")
    print(f"error = {meta['error']:.6e}  final = {meta['final_error']:.6e}  "
          f"-> {outdir / stem}.csv")
    return EXIT_OK


def cmd_convergence(args) -> int:
    cfg = study_config(args)
    if args.dump_config:
        sys.stdout.write(dump_config(cfg))
        return EXIT_OK
    records = run_study(cfg, jobs=args.jobs)
    estimates = flag_plateaus(records, **_analysis_kwargs(cfg))
    outdir = Path(cfg.output)
    stem = f"convergence_{cfg.problem['kind']}"
    csv_path = outdir / f"{stem}.csv"
    write_results(records, cfg, csv_path, estimates, timing=args.timing)
    atomic_write(outdir / f"{stem}.yaml", dump_config(cfg))
    atomic_write(outdir / f"{stem}.gp",
                 plot_script(records, csv_path.name, f"{stem}.png", cfg.tableaux))
    for (method, tab, r), est in estimates.items():
        lvl = "none" if est.plateau_level is None else f"{est.plateau_level:.3e}"
        print(f"{method:7s} {tab:6s} r={r:<3d} slope={est.slope:6.3f} plateau={lvl}")
    failed = [x for x in records if x.failure]
    for x in failed:
        print(f"FAILED {x.method}/{x.tableau} h={x.h:g} r={x.r}: {x.failure}",
              file=sys.stderr)
    print(f"{len(records)} records -> {csv_path}")
    return EXIT_BLOWUP if failed else EXIT_OK


def _save_replay(path: Path, Y: LowRankMatrix, tab, problem, **extra) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(f".{path.name}.tmp.npz")
    np.savez(tmp, U=Y.U, S=Y.S, V=Y.V, A=tab.A, b=tab.b, c=tab.c,
             tableau=tab.name, problem=json.dumps(problem.params()),
             **{k: np.asarray(v) for k, v in extra.items()})
    tmp.replace(path)


def cmd_diagnostics(args) -> int:
    kind = args.problem or "lyapunov"
    if kind not in KINDS:
        raise UsageError(f"unknown problem {kind!r}; available: {', '.join(KINDS)}")
    tab = registry_get(args.tableau or "rk3s")
    n = args.n or 32
    r = args.r if args.r is not None else 10
    if not 1 <= r <= n:
        raise UsageError("rank exceeds dimensions" if r > n else "rank must be >= 1")
    problem = make_problem(kind, n, args.theta, args.t_final)
    outdir = Path(args.output or "results")
    seed = args.seed if args.seed is not None else 0
    ok = True

    ladder_h = [args.h0 * 2.0 ** -q for q in range(args.rungs + 1)]
    sweep = projection_sweep(problem, tab, r, args.steps, seed, ladder_h)
    print(f"projection sweep: {sweep.checks} checks over {args.steps} steps, "
          f"max(galerkin - tangent) = {sweep.max_excess:.3e} (tol {PROJECTION_TOL:g})")
    if not sweep.passed:
        ok = False
        w = sweep.worst
        path = outdir / f"diagnostics_{kind}_{tab.name}_sweep_fail.npz"
        _save_replay(path, w["state"], tab, problem, h=w["h"], stage=w["stage"],
                     source=w["source"], seed=seed, instance=w["instance"])
        print(f"  violation at instance {w['instance']} (stage {w['stage']}, "
              f"source {w['source']}); replay: {path}")

    hs, res, ratios = residual_ladder(problem, tab, r, args.h0, args.rungs)
    ladder_ok = ladder_passes(res)
    print("truncation residual ladder:")
    print(f"  {'h':>12s} {'residual':>12s} {'ratio':>8s}")
    for q, (h, x) in enumerate(zip(hs, res)):
        rat = "" if q == 0 else f"{ratios[q - 1]:8.3f}"
        print(f"  {h:12.5g} {x:12.4e} {rat}")
    print(f"  ratios <= {RESIDUAL_RATIO} per halving: {'yes' if ladder_ok else 'no'}")
    if not ladder_ok:
        ok = False
        from .lowrank import truncate
        path = outdir / f"diagnostics_{kind}_{tab.name}_ladder_fail.npz"
        _save_replay(path, truncate(problem.A0, r), tab, problem, h=hs, residuals=res)
        print(f"  replay: {path}")

    report = {"problem": problem.params(), "tableau": tab.name, "r": r,
              "seed": seed, "sweep": {"checks": sweep.checks,
                                      "max_excess": sweep.max_excess,
                                      "passed": sweep.passed},
              "ladder": {"h": hs.tolist(), "residuals": res.tolist(),
                         "ratios": ratios.tolist(), "passed": ladder_ok}}
    atomic_write(outdir / f"diagnostics_{kind}_{tab.name}.json",
                 json.dumps(_sanitize(report), indent=2) + "\n")
    return EXIT_OK if ok else EXIT_CHECK


# -- parser ------------------------------------------------------------------

def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="YAML configuration file")
    p.add_argument("--problem", help=f"one of {', '.join(KINDS)}")
    p.add_argument("--theta", type=float)
    p.add_argument("--n", type=int, help="grid size")
    p.add_argument("--t-final", type=float, dest="t_final")
    p.add_argument("--method", help=f"one of {', '.join(METHODS)}")
    p.add_argument("--output", help="output directory (default: results)")
    p.add_argument("--seed", type=int)
    p.add_argument("--full", action="store_true",
                   help="n = 128 and the long final times")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rkbug", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="single trajectory")
    _common(p)
    p.add_argument("--tableau")
    p.add_argument("--h", type=float)
    p.add_argument("--r", type=int)
    p.add_argument("--h-ref", type=float, dest="h_ref")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("convergence", help="error-vs-h study")
    _common(p)
    p.add_argument("--tableau", help="comma-separated tableau names")
    p.add_argument("--h-values", dest="h_values", help="comma-separated step sizes")
    p.add_argument("--r-values", dest="r_values", help="comma-separated ranks")
    p.add_argument("--h-ref", type=float, dest="h_ref")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--timing", action="store_true",
                   help="write wall-clock runtimes into the CSV (not reproducible)")
    p.add_argument("--dump-config", action="store_true",
                   help="print the effective configuration and exit")
    p.set_defaults(func=cmd_convergence)

    p = sub.add_parser("diagnostics", help="projection and residual checks")
    _common(p)
    p.add_argument("--tableau")
    p.add_argument("--r", type=int)
    p.add_argument("--steps", type=int, default=50)
    p.add_argument("--h0", type=float, default=0.1)
    p.add_argument("--rungs", type=int, default=6)
    p.set_defaults(func=cmd_diagnostics)

    p = sub.add_parser("tableaux", help="list built-in tableaux")
    p.add_argument("name", nargs="?")
    p.set_defaults(func=cmd_tableaux)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "jobs", 1) < 1:
        parser.error("--jobs must be >= 1")
    try:
        return args.func(args)
    except BlowUpError as exc:
        print(f"error: numerical blow-up: {exc}", file=sys.stderr)
        return EXIT_BLOWUP
    except KeyError as exc:
        print(f"error: {exc.args[0]}", file=sys.stderr)
        return EXIT_USAGE
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
