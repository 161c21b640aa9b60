import json
import math
import os

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rkbug.harness import (
    CSV_COLUMNS,
    ConvergenceRecord,
    InsufficientDataError,
    StudyConfig,
    atomic_write,
    default_study,
    estimate_order,
    plateau_monotone,
    plateau_vs_rank,
    read_csv,
    records_to_csv,
    run_study,
    stable_h_ref,
    write_results,
)
from rkbug.integrators import RhsOperator, integrate, reference_solve
from rkbug.linalg import frobenius_norm
from rkbug.problems import ProblemSpec, make_lyapunov, zero_problem
from rkbug.tableaux import registry_get


def h_ladder(h0, k):
    return [h0 * 2.0**-q for q in range(k)]


def test_estimate_order_exact_square():
    h = np.array(h_ladder(0.1, 6))
    est = estimate_order(h, h**2)
    assert est.slope == pytest.approx(2.0, abs=1e-6)
    assert est.plateau_level is None and not est.plateau_mask.any()
    assert est.window == (h[-1], h[0])


def test_estimate_order_with_plateau():
    h = np.array(h_ladder(0.1, 10))
    est = estimate_order(h, np.maximum(h**3, 1e-8))
    assert est.slope == pytest.approx(3.0, abs=0.05)
    assert est.plateau_level == pytest.approx(1e-8, rel=1e-6)
    assert est.plateau_mask[-3:].all() and not est.plateau_mask[:4].any()
    assert est.floor_bound == est.plateau_level


def test_estimate_order_unsorted_input():
    h = np.array(h_ladder(0.2, 5))
    perm = [3, 0, 4, 1, 2]
    est = estimate_order(h[perm], (h**2)[perm])
    assert est.slope == pytest.approx(2.0, abs=1e-9)


def test_estimate_order_insufficient():
    with pytest.raises(InsufficientDataError, match="insufficient data"):
        estimate_order([0.1, 0.05], [1e-2, 2.5e-3])
    with pytest.raises(InsufficientDataError):
        estimate_order([0.1, 0.05, 0.025], [1e-2, math.inf, 0.0])


@settings(max_examples=50, deadline=None)
@given(st.floats(0.5, 6.0), st.floats(1e-3, 1e3), st.integers(3, 8))
def test_estimate_order_recovers_power_law(p, C, k):
    h = np.array(h_ladder(0.05, k))
    est = estimate_order(h, C * h**p)
    assert est.slope == pytest.approx(p, abs=1e-6)


def test_plateau_monotone_examples():
    assert plateau_monotone([(5, 1e-3), (10, 1e-5)])
    assert plateau_monotone([(5, 1e-3), (10, 1.9e-3)])          # within 2x slack
    assert not plateau_monotone([(5, 1e-3), (10, 3e-3)])
    assert plateau_monotone([(5, 1e-10), (10, 5e-10)])          # below the floor
    assert plateau_monotone([(5, 1e-3), (10, None), (20, 1e-6)])


def _rec(r, h, e):
    return ConvergenceRecord("p", 0.0, 8, "rk_bug", "rk2m", h, r, e, 0.0, 0.0)


def test_plateau_vs_rank_synthetic():
    hs = h_ladder(0.1, 8)
    recs = [_rec(5, h, max(h**2, 1e-3)) for h in hs] + \
           [_rec(10, h, max(h**2, 1e-5)) for h in hs] + \
           [_rec(20, h, h**2) for h in hs]
    levels = plateau_vs_rank(recs)
    assert levels[0] == (5, pytest.approx(1e-3))
    assert levels[1] == (10, pytest.approx(1e-5))
    assert levels[2] == (20, None)
    assert plateau_vs_rank(recs, floor_fallback=True)[2][1] == pytest.approx(hs[-1] ** 2)
    assert plateau_monotone(levels)


# -- configuration ---------------------------------------------------------------

def small_cfg(**kw):
    d = {"problem": {"kind": "lyapunov", "n": 16, "theta": 1e-5, "t_final": 0.1},
         "methods": [{"method": "rk_bug", "tableau": "rk2m"}],
         "h_values": [0.01, 0.005, 0.0025], "r_values": [2, 4]}
    d.update(kw)
    return StudyConfig.from_dict(d)


def test_config_defaults_and_roundtrip():
    cfg = small_cfg()
    assert cfg.h_ref == 0.00125
    again = StudyConfig.from_dict(cfg.to_dict())
    assert again.to_dict() == cfg.to_dict()
    cfg.validate()


@pytest.mark.parametrize("kw, msg", [
    ({"methods": []}, "empty method list"),
    ({"methods": [{"method": "rk_bug", "tableau": "nosuch"}]}, "nosuch"),
    ({"methods": [{"method": "magic", "tableau": "rk4"}]}, "unknown method"),
    ({"h_values": [0.03]}, "non-integer step count"),
    ({"h_ref": 0.0025}, "h_ref"),
    ({"r_values": [17]}, "rank exceeds dimensions"),
    ({"problem": {"kind": "heat", "n": 8, "theta": 0, "t_final": 1}}, "unknown problem"),
])
def test_config_validation(kw, msg):
    with pytest.raises((ValueError, KeyError), match=msg):
        small_cfg(**kw).validate()


def test_config_rejects_unknown_keys():
    with pytest.raises(ValueError, match="unknown config keys"):
        StudyConfig.from_dict({"problem": {}, "bogus": 1})


def test_config_rejects_invalid_custom_tableau():
    cfg = small_cfg(tableaux={"bad": {"A": [[0, 0], [1, 0]], "b": [0.5, 0.4],
                                      "c": [0, 1], "order": 2}},
                    methods=[{"method": "rk_bug", "tableau": "bad"}])
    with pytest.raises(ValueError, match="consistency"):
        cfg.validate()


def test_config_custom_tableau():
    tab = registry_get("rk2h").to_dict()
    tab.pop("name")
    cfg = small_cfg(tableaux={"heun": tab},
                    methods=[{"method": "rk_bug", "tableau": "heun"}])
    cfg.validate()
    assert cfg.tableaux["heun"].order == 2


@pytest.mark.parametrize("kind", ["lyapunov", "allen_cahn", "schrodinger"])
@pytest.mark.parametrize("full", [False, True])
def test_default_studies_are_valid(kind, full):
    cfg = StudyConfig.from_dict(default_study(kind, full))
    cfg.validate()
    assert cfg.problem["n"] == (128 if full else 64)
    assert all(h1 == 2 * h2 for h1, h2 in zip(cfg.h_values, cfg.h_values[1:]))


def test_stable_h_ref_halves_until_stable():
    p = {"kind": "lyapunov", "n": 64, "theta": 1e-5, "t_final": 1.0}
    h = stable_h_ref(0.01, p)
    assert h * 8 * 64**2 / (4 * np.pi**2) <= 1.0 < 2 * h * 8 * 64**2 / (4 * np.pi**2)


# -- study runs --------------------------------------------------------------------

def test_zero_problem_errors_vanish():
    p = zero_problem(8, t_final=1.0)
    cfg = StudyConfig({"kind": "zero", "n": 8, "theta": 0.0, "t_final": 1.0},
                      [("rk_bug", "rk4"), ("prk", "rk2m"), ("bug_euler", "-")],
                      [0.5, 0.25, 0.125], [8])
    recs = run_study(cfg, problem=p)
    assert len(recs) == 9
    assert all(rec.error <= 1e-12 for rec in recs)


def test_full_rank_rk4_matches_dense():
    cfg = small_cfg(methods=[{"method": "rk_bug", "tableau": "rk4"},
                             {"method": "dense", "tableau": "rk4"}],
                    r_values=[16], h_values=[0.01, 0.005])
    recs = run_study(cfg)
    bug = {x.h: x.error for x in recs if x.method == "rk_bug"}
    dense = {x.h: x.error for x in recs if x.method == "dense"}
    for h in bug:
        assert abs(bug[h] - dense[h]) <= 1e-10


def test_error_metric_includes_initial_state():
    # with r = 1 the initial truncation error of a rank-2 state dominates
    p = zero_problem(6, t_final=1.0)
    object.__setattr__(p, "A0", np.diag([1.0, 0.5, 0, 0, 0, 0]))
    cfg = StudyConfig({"kind": "zero", "n": 6, "theta": 0.0, "t_final": 1.0},
                      [("rk_bug", "euler")], [0.5, 0.25, 0.125], [1])
    recs = run_study(cfg, problem=p)
    assert all(rec.error == pytest.approx(0.5) for rec in recs)


def test_error_matches_manual_computation():
    cfg = small_cfg(r_values=[2], h_values=[0.02, 0.01])
    recs = run_study(cfg)
    prob = make_lyapunov(16, 1e-5, 0.1)
    ref = reference_solve(prob.rhs, 0.0, prob.A0, 0.1, cfg.h_ref, 0.02)
    traj = integrate("rk_bug", prob.rhs, prob.A0, 0.0, 0.1, 0.02, "rk2m", 2)
    err = max(frobenius_norm(a.state.todense() - b.state) for a, b in zip(traj, ref))
    assert recs[0].h == 0.02
    assert recs[0].error == pytest.approx(err, rel=1e-12)


def test_run_study_deterministic_and_ordered():
    cfg = small_cfg()
    a = run_study(cfg)
    b = run_study(cfg, jobs=2)
    assert records_to_csv(a, timing=False) == records_to_csv(b, timing=False)
    assert [(x.r, x.h) for x in a] == [(r, h) for r in cfg.r_values for h in cfg.h_values]
    assert all(x.runtime_seconds >= 0 for x in a)


def test_blow_up_becomes_record():
    # cubic decay is stiff for large states: forward Euler with h = 0.5
    # overshoots and overflows, the finer steps converge
    A0 = np.full((6, 6), 3.0)
    rhs = RhsOperator(lambda t, A: -A**3, (6, 6))
    p = ProblemSpec("cubic", 6, 0.0, 4.0, A0, rhs)
    cfg = StudyConfig({"kind": "cubic", "n": 6, "theta": 0.0, "t_final": 4.0},
                      [("dense", "euler")], [0.5, 0.25, 1 / 64], [6])
    with np.errstate(over="ignore", invalid="ignore"):
        recs = run_study(cfg, problem=p)
    assert math.isinf(recs[0].error) and "blow-up" in recs[0].failure
    assert recs[2].failure is None and math.isfinite(recs[2].error)


# -- persistence ---------------------------------------------------------------------

def test_csv_format(tmp_path):
    recs = [ConvergenceRecord("lyapunov", 1e-5, 64, "rk_bug", "rk2m", 0.1, 5,
                              1 / 3, 0.5, 2e-9, True)]
    text = records_to_csv(recs)
    lines = text.splitlines()
    assert lines[0] == ",".join(CSV_COLUMNS)
    fields = lines[1].split(",")
    assert fields[7] == "0.33333333333333331"   # 17 significant digits
    assert fields[-1] == "true"
    assert records_to_csv(recs, timing=False).splitlines()[1].split(",")[8] == "nan"


def test_write_results_and_sidecar(tmp_path):
    cfg = small_cfg(r_values=[2])
    recs = run_study(cfg)
    path = tmp_path / "out" / "study.csv"
    side = write_results(recs, cfg, path)
    rows = read_csv(path)
    assert len(rows) == 3 and set(rows[0]) == set(CSV_COLUMNS)
    meta = json.loads(side.read_text())
    assert meta["config"] == cfg.to_dict()
    assert meta["environment"]["numpy"] == np.__version__
    assert meta["order_estimates"][0]["slope"] == pytest.approx(2.0, abs=0.3)
    assert not [f for f in os.listdir(path.parent) if f.endswith(".tmp")]


def test_atomic_write_leaves_no_partial_file(tmp_path):
    target = tmp_path / "x.csv"
    atomic_write(target, "old\n")

    with pytest.raises(TypeError):
        atomic_write(target, 123)
    assert target.read_text() == "old\n"
    assert os.listdir(tmp_path) == ["x.csv"]
