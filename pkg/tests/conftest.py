import numpy as np
import pytest

from stpanel.dgp import DgpConfig, generate


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


@pytest.fixture(scope="session")
def null_panel():
    data, _ = generate(DgpConfig(20, 40, r2_target=0.95, seed=7))
    return data


def normal_equations(X, y):
    """Independent OLS oracle: explicit inverse of X'X."""
    return np.linalg.inv(X.T @ X) @ (X.T @ y)


def loo_cooks(X, y, i):
    """Cook's distance by actually dropping observation i and refitting."""
    n, k = X.shape
    beta = normal_equations(X, y)
    resid = y - X @ beta
    s2 = resid @ resid / (n - k)
    keep = np.arange(n) != i
    beta_i = normal_equations(X[keep], y[keep])
    diff = X @ beta - X @ beta_i
    return diff @ diff / (k * s2)


# one summary line per acceptance criterion, filled in by test_acceptance.py
ACCEPTANCE: dict[str, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(ACCEPTANCE, key=lambda k: int(k.split()[0].rstrip("ab"))):
        ok, detail = ACCEPTANCE[name]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
