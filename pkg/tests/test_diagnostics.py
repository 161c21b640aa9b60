import numpy as np
import pytest

from rkbug.diagnostics import (
    ladder_passes,
    projection_checks,
    projection_sweep,
    random_state,
    residual_ladder,
)
from rkbug.lowrank import truncate
from rkbug.problems import make_problem
from rkbug.tableaux import STUDY_METHODS, registry_get


def test_projection_checks_cover_every_masked_block():
    p = make_problem("lyapunov", 16, theta=1.0)
    Y = truncate(p.A0, 3)
    for name in STUDY_METHODS:
        tab = registry_get(name)
        checks = projection_checks(p.rhs, 0.0, Y, 0.01, tab)
        expected = int(tab.alpha.sum() + tab.beta.sum())
        assert len(checks) == expected
        assert all(c.galerkin <= c.tangent + 1e-9 for c in checks)


@pytest.mark.parametrize("kind", ["lyapunov", "allen_cahn", "schrodinger"])
def test_sweep_no_violations(kind):
    p = make_problem(kind, 16)
    res = projection_sweep(p, registry_get("rk4"), 4, steps=10, seed=3)
    assert res.passed and res.checks == 10 * 7


def test_random_state_is_rank_r_and_seeded():
    p = make_problem("schrodinger", 12)
    a = random_state(p, 3, np.random.default_rng(1))
    b = random_state(p, 3, np.random.default_rng(1))
    assert a.rank == 3 and np.iscomplexobj(a.U)
    np.testing.assert_array_equal(a.todense(), b.todense())


def test_ladder_full_rank_is_exact():
    p = make_problem("lyapunov", 8, theta=1.0)
    _, res, _ = residual_ladder(p, registry_get("rk3s"), 8)
    assert np.all(res <= 1e-12)
    assert ladder_passes(res)


def test_ladder_euler_halves():
    p = make_problem("lyapunov", 32, theta=1.0)
    hs, res, ratios = residual_ladder(p, registry_get("euler"), 5)
    assert len(hs) == 7
    np.testing.assert_allclose(ratios, 0.5, atol=0.02)


@pytest.mark.parametrize("name", STUDY_METHODS)
def test_ladder_asymptotically_proportional(name):
    # on the finest rungs the residual halves with h for every method
    p = make_problem("lyapunov", 32, theta=1.0)
    _, res, ratios = residual_ladder(p, registry_get(name), 5, h0=0.1 / 2**4, rungs=4)
    assert ratios[-1] <= 0.75


def test_ladder_passes_logic():
    res = np.array([1.0, 0.5, 0.45, 0.2])
    assert not ladder_passes(res)
    assert not ladder_passes(res, skip_first=True)
    assert ladder_passes(np.array([1.0, 0.9, 0.4]), skip_first=True)
