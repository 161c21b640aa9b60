import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


def random_matrix(rng, n, m, complex_=False):
    X = rng.standard_normal((n, m))
    if complex_:
        X = X + 1j * rng.standard_normal((n, m))
    return X


def random_orthonormal(rng, n, r, complex_=False):
    Q, _ = np.linalg.qr(random_matrix(rng, n, r, complex_))
    return Q


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(results):
        terminalreporter.write_line(results[num][1])
