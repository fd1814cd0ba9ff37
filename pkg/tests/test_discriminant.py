import cmath
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hillbloch import find_multiple_points, hill_discriminant, locate_band_point, make_fourier_potential, trace_band
from hillbloch.discriminant import (
    characteristic_poly,
    discriminant_batch,
    locate_band_points,
    p_of_lambda,
    winding_number,
)
from hillbloch.errors import BranchAmbiguityError, InvalidInputError

from conftest import dop853_discriminant


def test_free_discriminant_closed_form(free):
    lam = np.array([0.0, 2.0, 77.0, -15.0 + 3.0j, 500.0])
    F, dF = discriminant_batch(free, lam)
    s = np.sqrt(lam + 0j)
    assert np.allclose(F, 2 * np.cos(s), atol=1e-11)
    nz = lam != 0
    assert np.allclose(dF[nz], -np.sin(s[nz]) / s[nz], atol=1e-11)
    assert abs(dF[0] + 1.0) < 1e-11


@settings(max_examples=15, deadline=None)
@given(st.complex_numbers(max_magnitude=100.0, allow_nan=False, allow_infinity=False),
       st.lists(st.complex_numbers(max_magnitude=1.0, allow_nan=False, allow_infinity=False),
                min_size=3, max_size=3))
def test_gasymov_discriminant_equals_free(lam, amps):
    # only positive frequencies: F is exactly the free discriminant
    q = make_fourier_potential({1: amps[0], 2: amps[1], 3: amps[2]})
    F = hill_discriminant(q, lam).F
    assert abs(F - 2 * cmath.cos(cmath.sqrt(lam))) <= 1e-9 * (1 + abs(F))


def test_discriminant_matches_dop853(two_sided):
    for lam in (5.0, 60.0 - 10.0j, 333.0):
        assert abs(hill_discriminant(two_sided, lam).F - dop853_discriminant(two_sided, lam)) < 1e-9


def test_p_branch_selection(free):
    v = hill_discriminant(free, 10.0)
    assert abs(v.p * v.p - (4 - v.F**2)) < 1e-12
    w = hill_discriminant(free, 10.0, p_ref=-v.p)
    assert abs(w.p + v.p) < 1e-15


def test_p_of_lambda_continuation_and_jump():
    Fs = [2 * math.cos(s) for s in np.linspace(0.3, 2.8, 40)]
    p = p_of_lambda(Fs)
    assert np.allclose(p, 2 * np.sin(np.linspace(0.3, 2.8, 40)))
    with pytest.raises(BranchAmbiguityError):
        p_of_lambda([0.0, 1.0])


def test_characteristic_poly_roots():
    t = 1.1
    assert abs(characteristic_poly(2 * math.cos(t), t)) < 1e-15


@pytest.mark.parametrize("k", [-3, -1, 0, 2, 5])
@pytest.mark.parametrize("t", [0.4, 2.0, 4.5])
def test_free_band_points(free, k, t):
    lam = locate_band_point(free, k, t)
    tf = t if t < math.pi else 2 * math.pi - t
    assert abs(lam - (2 * math.pi * k + tf) ** 2) <= 1e-8 * (1 + abs(lam))


def test_band_points_solve_equation(weak_gasymov):
    t = np.linspace(0.2, 2.9, 7)
    lam, dF = locate_band_points(weak_gasymov, 3, t)
    F, _ = discriminant_batch(weak_gasymov, lam)
    assert np.all(np.abs(F - 2 * np.cos(t)) <= 1e-8 * (1 + np.abs(lam)))


def test_guard_near_edges(free):
    with pytest.raises(InvalidInputError):
        locate_band_points(free, 1, [1e-9])
    with pytest.raises(InvalidInputError):
        locate_band_points(free, 1, [math.pi])


def test_trace_band_continuous(two_sided):
    t = np.linspace(0.05, 3.1, 40)
    band = trace_band(two_sided, 4, t)
    assert np.all(np.abs(np.diff(band.lambda_vals)) < 10.0)
    assert band.flags.count("simple") == t.size
    assert len(band.csv_rows()) == t.size


def test_winding_number_counts_zeros():
    fun = lambda z: (z - 1) * (z + 0.5j) * (z - 5)
    square = [-2 - 2j, 2 - 2j, 2 + 2j, -2 + 2j]
    assert winding_number(fun, square) == 2


def test_multiple_points_gasymov(gasymov):
    cps = find_multiple_points(gasymov, (-10.0, 100.0, -5.0, 5.0))
    lam = sorted(c.lambda0.real for c in cps)
    assert np.allclose(lam, [(n * math.pi) ** 2 for n in (1, 2, 3)], atol=1e-8)
    for c in cps:
        assert c.algebraic_multiplicity == 2
        n = round(math.sqrt(c.lambda0.real) / math.pi)
        assert c.t0 == pytest.approx(0.0 if n % 2 == 0 else math.pi)


def test_multiple_points_invalid_region(free):
    with pytest.raises(InvalidInputError):
        find_multiple_points(free, (1.0, 0.0, -1.0, 1.0))
