import cmath

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hillbloch import integrate_fundamental, integrate_with_lambda_derivative, make_fourier_potential
from hillbloch.errors import IntegrationError, InvalidInputError
from hillbloch.monodromy import monodromy_batch, sample_batch, sample_solutions

from conftest import dop853_monodromy


def free_monodromy(lam):
    k = cmath.sqrt(lam)
    if k == 0:
        return np.array([[1, 1], [0, 1]], dtype=complex)
    return np.array([[cmath.cos(k), cmath.sin(k) / k], [-k * cmath.sin(k), cmath.cos(k)]])


@pytest.mark.parametrize("lam", [0.0, 1e-6, 3.0, 50.0 + 20.0j, -40.0, 900.0])
def test_free_closed_form(free, lam):
    fp = integrate_fundamental(free, lam)
    assert np.allclose(fp.monodromy, free_monodromy(lam), rtol=1e-11, atol=1e-11)


@settings(max_examples=12, deadline=None)
@given(st.complex_numbers(max_magnitude=150.0, allow_nan=False, allow_infinity=False),
       st.complex_numbers(max_magnitude=1.5, allow_nan=False, allow_infinity=False),
       st.complex_numbers(max_magnitude=1.5, allow_nan=False, allow_infinity=False))
def test_matches_dop853(lam, a, b):
    q = make_fourier_potential({1: a, -2: b})
    ours = integrate_fundamental(q, lam).monodromy
    ref = dop853_monodromy(q, lam)
    scale = np.max(np.abs(ref)) + 1.0
    assert np.max(np.abs(ours - ref)) <= 1e-9 * scale


def test_mean_shift_translates_lambda():
    q0 = make_fourier_potential({1: 0.4})
    q1 = make_fourier_potential({0: 2.5, 1: 0.4})
    assert np.allclose(integrate_fundamental(q1, 12.5).monodromy, integrate_fundamental(q0, 10.0).monodromy,
                       rtol=1e-12, atol=1e-13)


@pytest.mark.parametrize("lam", [7.0, 120.0 - 5.0j, -30.0 + 60.0j])
def test_lambda_derivative_finite_difference(gasymov, lam):
    fp = integrate_with_lambda_derivative(gasymov, lam)
    eps = 1e-5 * (1 + abs(lam))
    fd = (integrate_fundamental(gasymov, lam + eps).F - integrate_fundamental(gasymov, lam - eps).F) / (2 * eps)
    assert abs(fp.dF - fd) <= 1e-6 * (1 + abs(fd))


def test_batch_matches_single(two_sided):
    lam = np.array([3.0, 40.0 + 2.0j, 250.0])
    b = monodromy_batch(two_sided, lam)
    for i, l in enumerate(lam):
        fp = integrate_with_lambda_derivative(two_sided, l)
        assert abs(b.F[i] - fp.F) <= 1e-10 * (1 + abs(fp.F))
        assert abs(b.dF[i] - fp.dF) <= 1e-9 * (1 + abs(fp.dF))


def test_samples_are_solutions(mathieu):
    x = np.linspace(0.0, 1.0, 11)
    th, ph = sample_solutions(mathieu, 17.0, x)
    assert th[0] == 1 and ph[0] == 0
    fp = integrate_fundamental(mathieu, 17.0)
    assert abs(th[-1] - fp.theta1) < 1e-10 and abs(ph[-1] - fp.phi1) < 1e-10
    b = sample_batch(mathieu, [17.0], 10)
    assert np.allclose(b.theta[0], th, atol=1e-12)


def test_extended_wronskian_defect_small(gasymov):
    fp = integrate_fundamental(gasymov, 150.0 + 150.0j)
    assert fp.wronskian_defect <= 1e-12


@pytest.mark.parametrize("lam", [float("nan"), 1e9])
def test_rejects_bad_lambda(free, lam):
    with pytest.raises(IntegrationError):
        integrate_fundamental(free, lam)


def test_rejects_bad_tolerance(free):
    with pytest.raises(InvalidInputError):
        integrate_fundamental(free, 1.0, tol=0.0)
