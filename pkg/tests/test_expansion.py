import math

import numpy as np
import pytest

from hillbloch import (
    GridSpec,
    coefficient,
    gelfand_transform,
    lambda_domain_term,
    make_fourier_potential,
    make_plan,
    make_test_function,
    normalized_pair,
    synthesize,
    t_domain_term,
)
from hillbloch.discriminant import locate_band_points
from hillbloch.errors import InvalidInputError
from hillbloch.expansion import CONVERGENCE_HEADER, RECONSTRUCTION_HEADER, default_ladder, eval_grid
from hillbloch.monodromy import sample_batch

SMALL = GridSpec(128, 128, 8)


def test_gelfand_transform_quasiperiodic(spline):
    x = np.linspace(0.0, 1.0, 17)
    t = 0.8
    a = gelfand_transform(spline, t, x + 1.0)
    b = gelfand_transform(spline, t, x)
    assert np.allclose(a, np.exp(1j * t) * b, atol=1e-15)


def test_gelfand_inversion(spline):
    # averaging f_t over t recovers f
    x = np.linspace(-0.5, 3.5, 9)
    t = 2 * np.pi * (np.arange(64) + 0.5) / 64
    avg = np.mean([gelfand_transform(spline, s, x) for s in t], axis=0)
    assert np.allclose(avg, spline(x), atol=1e-14)


@pytest.mark.parametrize("k,t", [(0, 0.6), (3, 2.0), (-2, 1.1)])
def test_free_coefficient_is_fourier_transform(free, spline, k, t):
    pair = normalized_pair(free, k, t, x_points=256)
    a = coefficient(free, spline, k, t, x_points=256)
    xi = 2 * math.pi * k + t
    expected = spline.fourier_transform(xi) * np.exp(1j * xi * pair.x_grid)
    assert np.allclose(a * pair.psi, expected, atol=1e-12)


def test_coefficient_against_brute_force(two_sided, spline):
    """a_k Psi_k = [int_R f U_{-t}] U_t / int_0^1 U_t U_{-t}, integrated on a fine grid."""
    k, t, n = 2, 1.3, 256
    lam, _ = locate_band_points(two_sided, k, [t])
    b = sample_batch(two_sided, lam, n)
    th, ph = b.theta[0, :n], b.phi[0, :n]

    def floquet(s):
        return b.phi1[0] * th + (np.exp(1j * s) - b.theta1[0]) * ph

    up, um = floquet(t), floquet(-t)
    x = np.arange(n) / n
    total = 0j
    for m in range(0, 3):
        total += np.mean(spline(x + m) * um * np.exp(-1j * m * t))
    expected = total * up / np.mean(up * um)
    pair = normalized_pair(two_sided, k, t, x_points=n)
    a = coefficient(two_sided, spline, k, t, x_points=n)
    assert np.allclose(a * pair.psi, expected, rtol=1e-9, atol=1e-12)


def test_default_ladder_halves():
    d = default_ladder(0.02)
    assert d.size == 8 and d[0] == 0.01 and np.allclose(d[1:] / d[:-1], 0.5)


def test_eval_grid_mask():
    x, mask, periods = eval_grid((-1.0, 2.0), 8)
    assert list(periods) == [-1, 0, 1] and x.shape == (3, 8) and mask.all()


def test_free_reconstruction_improves_with_k(free, spline):
    plan = make_plan(free, spline, 8, grid=SMALL)
    assert not plan.excised
    report = synthesize(free, spline, plan)
    errs = report.error_by_level()
    assert errs[8] < errs[4] < errs[2]
    assert errs[8] < 1e-5
    assert not report.nonconvergent
    assert len(report.reconstruction_rows()[0]) == len(RECONSTRUCTION_HEADER)
    assert len(report.convergence_rows()[0]) == len(CONVERGENCE_HEADER)


def test_gauge_invariance(free, spline):
    plan = make_plan(free, spline, 4, grid=SMALL)
    a = synthesize(free, spline, plan).f_rec
    b = synthesize(free, spline, plan, gauge_seed=11).f_rec
    assert np.max(np.abs(a - b)) < 1e-12


def test_translation_covariance(weak_gasymov, spline):
    shifted = make_test_function("spline", (1.0, 4.0))
    p0 = make_plan(weak_gasymov, spline, 4, grid=SMALL, interval=(-1.0, 4.0))
    p1 = make_plan(weak_gasymov, shifted, 4, grid=SMALL, interval=(0.0, 5.0))
    assert p0.excised
    r0 = synthesize(weak_gasymov, spline, p0)
    r1 = synthesize(weak_gasymov, shifted, p1)
    assert np.max(np.abs(r0.f_rec - r1.f_rec)) < 1e-12


def test_lambda_and_t_integrals_agree(weak_gasymov, spline):
    a = t_domain_term(weak_gasymov, spline, (1, -1), (1e-3, 0.02), 0.0, x_points=128)
    b = lambda_domain_term(weak_gasymov, spline, (1, -1), (1e-3, 0.02), 0.0, x_points=128)
    assert np.linalg.norm(a - b) <= 1e-8 * np.linalg.norm(a)


def test_plan_validation(free, spline):
    with pytest.raises(InvalidInputError):
        make_plan(free, spline, 0)
    gas = make_fourier_potential({1: 0.3})
    with pytest.raises(InvalidInputError):
        make_plan(gas, spline, 4, grid=SMALL, ladder=[0.01, 0.02, 0.005])
