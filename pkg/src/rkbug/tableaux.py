"""Explicit Butcher tableaux and the built-in method registry."""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction as Fr

import numpy as np

TOL = 1e-14


@dataclass(frozen=True, eq=False)
class ButcherTableau:
    """Coefficients ``(A, b, c)`` of an explicit Runge-Kutta method.

    ``alpha[i, j]`` and ``beta[i]`` flag the nonzero entries of ``A`` and
    ``b``; they decide which basis blocks a Runge-Kutta BUG stage needs.
    """

    name: str
    A: np.ndarray
    b: np.ndarray
    c: np.ndarray
    order: int
    alpha: np.ndarray = field(init=False, repr=False, compare=False)
    beta: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        A = np.array(self.A, dtype=float, ndmin=2)
        b = np.array(self.b, dtype=float, ndmin=1)
        c = np.array(self.c, dtype=float, ndmin=1)
        s = b.size
        if A.shape != (s, s) or c.shape != (s,):
            raise ValueError(
                f"inconsistent tableau shapes: A {A.shape}, b {b.shape}, c {c.shape}")
        for arr in (A, b, c):
            arr.setflags(write=False)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "c", c)
        alpha = A != 0.0
        beta = b != 0.0
        alpha.setflags(write=False)
        beta.setflags(write=False)
        object.__setattr__(self, "alpha", alpha)
        object.__setattr__(self, "beta", beta)

    def __eq__(self, other):
        if not isinstance(other, ButcherTableau):
            return NotImplemented
        return (self.name == other.name and self.order == other.order
                and np.array_equal(self.A, other.A)
                and np.array_equal(self.b, other.b)
                and np.array_equal(self.c, other.c))

    def __hash__(self):
        return hash((self.name, self.order, self.A.tobytes(), self.b.tobytes()))

    @property
    def stages(self) -> int:
        return self.b.size

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "A": self.A.tolist(),
            "b": self.b.tolist(),
            "c": self.c.tolist(),
            "order": self.order,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ButcherTableau":
        missing = {"name", "A", "b", "c", "order"} - set(d)
        if missing:
            raise ValueError(f"tableau is missing keys: {sorted(missing)}")
        return cls(str(d["name"]), d["A"], d["b"], d["c"], int(d["order"]))


def validate(tab: ButcherTableau) -> list[str]:
    """Return the list of violated tableau invariants (empty if valid)."""
    problems = []
    s = tab.stages
    for i in range(s):
        for j in range(i, s):
            if tab.A[i, j] != 0.0:
                problems.append(
                    f"not strictly lower triangular at ({i + 1},{j + 1})")
    total = float(np.sum(tab.b))
    if abs(total - 1.0) > TOL:
        problems.append(f"consistency: Σb = {total:.15g}")
    rowsum = tab.A.sum(axis=1)
    for i in range(s):
        if abs(rowsum[i] - tab.c[i]) > TOL:
            problems.append(
                f"row-sum: c_{i + 1} - Σ_j a_{i + 1},j = {tab.c[i] - rowsum[i]:.3g}")
    if tab.order < 1:
        problems.append(f"order must be positive, got {tab.order}")
    return problems


def _make(name, A, b, c, order):
    def f(x):
        return float(Fr(x))
    return ButcherTableau(
        name,
        [[f(x) for x in row] for row in A],
        [f(x) for x in b],
        [f(x) for x in c],
        order,
    )


_REGISTRY = {
    "euler": _make("euler", [[0]], [1], [0], 1),
    "rk2m": _make("rk2m", [[0, 0], ["1/2", 0]], [0, 1], [0, "1/2"], 2),
    "rk2h": _make("rk2h", [[0, 0], [1, 0]], ["1/2", "1/2"], [0, 1], 2),
    "rk3s": _make(
        "rk3s",
        [[0, 0, 0], [1, 0, 0], ["1/4", "1/4", 0]],
        ["1/6", "1/6", "2/3"],
        [0, 1, "1/2"],
        3,
    ),
    "rk3h": _make(
        "rk3h",
        [[0, 0, 0], ["1/3", 0, 0], [0, "2/3", 0]],
        ["1/4", 0, "3/4"],
        [0, "1/3", "2/3"],
        3,
    ),
    "rk4": _make(
        "rk4",
        [[0, 0, 0, 0], ["1/2", 0, 0, 0], [0, "1/2", 0, 0], [0, 0, 1, 0]],
        ["1/6", "1/3", "1/3", "1/6"],
        [0, "1/2", "1/2", 1],
        4,
    ),
}

# Fehlberg's six-stage pair, fifth-order weights; used at fixed step for
# reference trajectories and kept out of the public listing.
_REFERENCE = {
    "rkf45-high": _make(
        "rkf45-high",
        [
            [0, 0, 0, 0, 0, 0],
            ["1/4", 0, 0, 0, 0, 0],
            ["3/32", "9/32", 0, 0, 0, 0],
            ["1932/2197", "-7200/2197", "7296/2197", 0, 0, 0],
            ["439/216", -8, "3680/513", "-845/4104", 0, 0],
            ["-8/27", 2, "-3544/2565", "1859/4104", "-11/40", 0],
        ],
        ["16/135", 0, "6656/12825", "28561/56430", "-9/50", "2/55"],
        [0, "1/4", "3/8", "12/13", 1, "1/2"],
        5,
    ),
}

#: Methods studied in the convergence experiments, in presentation order.
STUDY_METHODS = ("euler", "rk2m", "rk2h", "rk3s", "rk3h", "rk4")


def available() -> list[str]:
    return list(_REGISTRY)


def registry_get(name: str) -> ButcherTableau:
    try:
        return _REGISTRY[name] if name in _REGISTRY else _REFERENCE[name]
    except KeyError:
        raise KeyError(
            f"unknown tableau {name!r}; available: {', '.join(_REGISTRY)}"
        ) from None


def resolve(name_or_tab, custom: dict | None = None) -> ButcherTableau:
    """Look up a tableau by name, checking user-supplied ones first."""
    if isinstance(name_or_tab, ButcherTableau):
        return name_or_tab
    if custom and name_or_tab in custom:
        return custom[name_or_tab]
    return registry_get(name_or_tab)
