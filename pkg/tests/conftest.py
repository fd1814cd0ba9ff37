"""Shared fixtures: an independent ODE oracle, common potentials and the acceptance summary."""

from __future__ import annotations

import numpy as np
import pytest
from scipy.integrate import solve_ivp

from hillbloch import make_fourier_potential, make_test_function

_ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def dop853_monodromy(q, lam: complex, rtol: float = 1e-13, atol: float = 1e-14) -> np.ndarray:
    """``[[theta, phi], [theta', phi']]`` at x = 1 from scipy's DOP853."""
    lam_int = complex(lam) - q.mean_shift

    def rhs(x, y):
        c = q(x) - lam_int
        return np.array([y[1], c * y[0], y[3], c * y[2]])

    y0 = np.array([1.0, 0.0, 0.0, 1.0], dtype=complex)
    sol = solve_ivp(rhs, (0.0, 1.0), y0, method="DOP853", rtol=rtol, atol=atol)
    th, dth, ph, dph = sol.y[:, -1]
    return np.array([[th, ph], [dth, dph]])


def dop853_discriminant(q, lam: complex) -> complex:
    m = dop853_monodromy(q, lam)
    return complex(m[0, 0] + m[1, 1])


@pytest.fixture
def free():
    return make_fourier_potential({})


@pytest.fixture
def gasymov():
    return make_fourier_potential({1: 1.0})


@pytest.fixture
def weak_gasymov():
    return make_fourier_potential({1: 0.3})


@pytest.fixture
def mathieu():
    return make_fourier_potential({1: 1.0, -1: 1.0})


@pytest.fixture
def two_sided():
    return make_fourier_potential({1: 0.5, -1: 0.2})


@pytest.fixture
def spline():
    return make_test_function("spline", (0.0, 3.0))


@pytest.fixture
def record_acceptance():
    """Store the outcome of criterion ``n`` for the end-of-run summary."""

    def record(n: int, passed: bool, detail: str) -> None:
        _ACCEPTANCE[n] = (bool(passed), detail)

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_ACCEPTANCE):
        ok, detail = _ACCEPTANCE[n]
        terminalreporter.write_line(f"ACCEPTANCE {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
