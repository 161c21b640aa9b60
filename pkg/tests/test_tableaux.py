from fractions import Fraction

import numpy as np
import pytest

from rkbug.tableaux import (
    STUDY_METHODS,
    ButcherTableau,
    available,
    registry_get,
    resolve,
    validate,
)


def order_conditions(tab, p):
    """Residuals of the classical rooted-tree order conditions up to order p <= 4."""
    A, b, c = tab.A, tab.b, tab.c
    conds = [(b.sum(), 1.0)]
    if p >= 2:
        conds.append((b @ c, 1 / 2))
    if p >= 3:
        conds += [(b @ c**2, 1 / 3), (b @ A @ c, 1 / 6)]
    if p >= 4:
        conds += [(b @ c**3, 1 / 4), ((b * c) @ A @ c, 1 / 8),
                  (b @ A @ c**2, 1 / 12), (b @ A @ A @ c, 1 / 24)]
    return [abs(x - y) for x, y in conds]


def test_registry_lists_six_methods():
    assert available() == list(STUDY_METHODS)
    assert len(available()) == 6


@pytest.mark.parametrize("name", STUDY_METHODS)
def test_registry_valid_and_order(name):
    tab = registry_get(name)
    assert validate(tab) == []
    assert max(order_conditions(tab, tab.order)) <= 1e-14
    if tab.order < 4:
        # the declared order is not exceeded
        assert max(order_conditions(tab, tab.order + 1)) > 1e-3


def test_reference_tableau_fifth_order_weights():
    tab = registry_get("rkf45-high")
    assert tab.stages == 6 and tab.order == 5
    assert validate(tab) == []
    assert max(order_conditions(tab, 4)) <= 1e-14
    A, b, c = tab.A, tab.b, tab.c
    fifth = [(b @ c**4, 1 / 5), ((b * c**2) @ A @ c, 1 / 10),
             (b @ (A @ c) ** 2, 1 / 20), ((b * c) @ A @ c**2, 1 / 15),
             (b @ A @ c**3, 1 / 20), ((b * c) @ A @ A @ c, 1 / 30),
             (b @ A @ (c * (A @ c)), 1 / 40), (b @ A @ A @ c**2, 1 / 60),
             (b @ A @ A @ A @ c, 1 / 120)]
    assert max(abs(x - y) for x, y in fifth) <= 1e-14


def test_rk2m_entries():
    tab = registry_get("rk2m")
    assert tab.stages == 2
    np.testing.assert_array_equal(tab.A, [[0, 0], [0.5, 0]])
    np.testing.assert_array_equal(tab.b, [0, 1])
    np.testing.assert_array_equal(tab.c, [0, 0.5])
    np.testing.assert_array_equal(tab.beta, [False, True])
    np.testing.assert_array_equal(tab.alpha, [[False, False], [True, False]])


def test_rk4_and_euler_entries():
    tab = registry_get("rk4")
    assert tab.stages == 4
    np.testing.assert_array_equal(tab.b, [1 / 6, 1 / 3, 1 / 3, 1 / 6])
    np.testing.assert_array_equal(tab.c, [0, 0.5, 0.5, 1])
    e = registry_get("euler")
    assert e.stages == 1
    np.testing.assert_array_equal(e.A, [[0.0]])
    np.testing.assert_array_equal(e.b, [1.0])
    np.testing.assert_array_equal(e.c, [0.0])


def test_exact_rationals():
    tab = registry_get("rk3s")
    assert tab.b[2] == float(Fraction(2, 3))
    assert tab.A[2, 0] == 0.25


def test_unknown_name_lists_registry():
    with pytest.raises(KeyError) as exc:
        registry_get("nosuch")
    msg = exc.value.args[0]
    for name in STUDY_METHODS:
        assert name in msg


def test_validate_messages():
    bad_b = ButcherTableau("x", [[0, 0], [1, 0]], [0.5, 0.4], [0, 1], 1)
    assert validate(bad_b) == ["consistency: Σb = 0.9"]
    implicit = ButcherTableau("y", [[0, 0.3], [1, 0]], [0.5, 0.5], [0.3, 1], 1)
    assert validate(implicit) == ["not strictly lower triangular at (1,2)"]
    rows = ButcherTableau("z", [[0, 0], [1, 0]], [0.5, 0.5], [0, 0.7], 1)
    (msg,) = validate(rows)
    assert msg.startswith("row-sum")


def test_tableau_is_immutable_and_roundtrips():
    tab = registry_get("rk3h")
    with pytest.raises(ValueError):
        tab.A[0, 0] = 1.0
    again = ButcherTableau.from_dict(tab.to_dict())
    assert again == tab
    np.testing.assert_array_equal(again.alpha, tab.alpha)
    with pytest.raises(ValueError, match="missing"):
        ButcherTableau.from_dict({"name": "q"})
    with pytest.raises(ValueError, match="inconsistent"):
        ButcherTableau("w", [[0]], [0.5, 0.5], [0], 1)


def test_resolve_prefers_custom():
    custom = {"rk4": registry_get("rk2h")}
    assert resolve("rk4", custom).name == "rk2h"
    assert resolve("rk4").name == "rk4"
    tab = registry_get("euler")
    assert resolve(tab) is tab
