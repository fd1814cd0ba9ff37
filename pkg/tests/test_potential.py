import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hillbloch import GridSpec, Potential, make_fourier_potential, make_test_function
from hillbloch.errors import InvalidInputError

coeff = st.complex_numbers(max_magnitude=2.0, allow_nan=False, allow_infinity=False)


def test_zero_mode_becomes_shift():
    q = make_fourier_potential({0: 1.5, 1: 0.3, 2: 0.0})
    assert q.mean_shift == 1.5
    assert q.modes == ((1, 0.3 + 0j),)
    assert q.max_frequency == 1


@settings(max_examples=30, deadline=None)
@given(st.dictionaries(st.integers(-4, 4).filter(bool), coeff, max_size=4),
       st.floats(-3.0, 3.0))
def test_periodic_and_matches_direct_sum(coeffs, x):
    q = make_fourier_potential(coeffs)
    direct = sum(c * np.exp(2j * np.pi * m * x) for m, c in coeffs.items())
    assert abs(q(x) - direct) <= 1e-12 * (1 + sum(abs(c) for c in coeffs.values()))
    assert abs(q(x + 1.0) - q(x)) <= 1e-12 * (1 + q.sup_bound)


def test_json_roundtrip():
    q = make_fourier_potential({0: 0.5j, 1: 0.3, -2: 1 - 1j})
    assert Potential.from_json(q.to_json()) == q


def test_realness_flag():
    assert make_fourier_potential({1: 1.0, -1: 1.0}).is_real
    assert not make_fourier_potential({1: 1.0}).is_real


@pytest.mark.parametrize("bad", [{"coeffs": [[1.5, 1, 0]]}, {"coeffs": [[1, 1]]}, {}])
def test_malformed_json_rejected(bad):
    with pytest.raises(InvalidInputError):
        Potential.from_json(bad)


def test_nonfinite_amplitude_rejected():
    with pytest.raises(InvalidInputError):
        make_fourier_potential({1: float("nan")})


@pytest.mark.parametrize("kind", ["bump", "spline"])
def test_test_function_support_and_transform(kind):
    f = make_test_function(kind, (0.0, 3.0))
    x = np.linspace(-1.0, 4.0, 101)
    vals = f(x)
    assert np.all(vals[(x <= 0) | (x >= 3)] == 0)
    xs = np.linspace(0.0, 3.0, 200001)
    xi = np.array([0.0, 1.3, 7.0])
    brute = np.trapezoid(f(xs)[None, :] * np.exp(-1j * xi[:, None] * xs[None, :]), xs, axis=1)
    assert np.allclose(f.fourier_transform(xi), brute, atol=1e-7)


def test_spline_partition_of_unity_shape():
    f = make_test_function("spline", (0.0, 4.0))
    # the cardinal cubic B-spline peaks at 2/3 in the middle knot
    assert abs(f(2.0) - 2.0 / 3.0) < 1e-14


def test_sampled_function_validation():
    with pytest.raises(InvalidInputError):
        make_test_function("user-sampled", (0, 1), {"x": [0, 0.5, 1], "re": [1, 2, 0]})
    g = make_test_function("user-sampled", (0, 1), {"x": [0, 0.5, 1], "re": [0, 2, 0]})
    assert abs(g(0.25) - 1.0) < 1e-14


def test_degenerate_support():
    with pytest.raises(InvalidInputError):
        make_test_function("bump", (1.0, 1.0))


def test_t_nodes_avoid_edges():
    t = GridSpec(t_points=8).t_nodes()
    assert t.size == 8 and np.all(t > 0) and np.all(t < 2 * np.pi)
    assert not np.any(np.isclose(t, np.pi))
