import math

import numpy as np
import pytest

from hillbloch import alpha_via_identity, floquet_function, normalized_pair
from hillbloch.bloch import extend_quasiperiodic, floquet_from_batch, inner
from hillbloch.discriminant import locate_band_points
from hillbloch.errors import InvalidInputError
from hillbloch.monodromy import sample_batch


@pytest.mark.parametrize("k,t", [(0, 0.7), (2, 2.2), (-3, 4.0)])
def test_free_pair_is_plane_wave(free, k, t):
    pair = normalized_pair(free, k, t, x_points=128)
    tf = t if t < math.pi else 2 * math.pi - t
    xi = 2 * math.pi * k + tf
    if t > math.pi:
        xi = -xi  # reflected band: same lambda, opposite multiplier
    wave = np.exp(1j * xi * pair.x_grid)
    overlap = abs(inner(pair.psi, wave))
    assert overlap == pytest.approx(1.0, abs=1e-10)
    assert abs(pair.alpha) == pytest.approx(1.0, abs=1e-10)


def test_floquet_multiplier(gasymov):
    t = 1.3
    lam, _ = locate_band_points(gasymov, 1, [t])
    b = sample_batch(gasymov, lam, 64)
    Phi, _ = floquet_from_batch(b, t, 65)
    assert abs(Phi[0, -1] - np.exp(1j * t) * Phi[0, 0]) < 1e-10 * np.max(np.abs(Phi))


def test_floquet_function_tags(free):
    v, tag = floquet_function(free, 4.0, 2.0, x_points=32)
    assert tag in ("Phi", "G") and v.shape == (32,)
    # lambda = (2 pi)^2 with t = 0: every solution is periodic
    rows, tag = floquet_function(free, (2 * math.pi) ** 2, 0.0, x_points=32)
    assert tag == "eigenspace" and rows.shape == (2, 32)


def test_biorthogonality_across_bands(two_sided):
    t = 0.9
    pairs = [normalized_pair(two_sided, k, t, x_points=256) for k in (-1, 0, 1, 2)]
    for a in pairs:
        for b in pairs:
            val = abs(inner(a.psi, b.psi_star))
            if a.k == b.k:
                assert val > 0.1
            else:
                assert val < 1e-10


@pytest.mark.parametrize("k,t", [(1, 0.8), (-2, 2.5), (0, 5.0)])
def test_alpha_identity_matches_quadrature(weak_gasymov, k, t):
    pair = normalized_pair(weak_gasymov, k, t, x_points=256)
    alt = alpha_via_identity(weak_gasymov, k, t, x_points=256)
    assert abs(pair.alpha - alt) <= 1e-8 * abs(pair.alpha)


def test_dual_is_biorthogonal(weak_gasymov):
    pair = normalized_pair(weak_gasymov, 2, 1.7, x_points=128)
    assert abs(inner(pair.psi, pair.x_dual) - 1.0) < 1e-12


def test_extend_quasiperiodic():
    s = np.arange(4.0) + 1j
    out = extend_quasiperiodic(s, 0.5, 3)
    assert np.allclose(out[4:8], np.exp(0.5j) * s)


@pytest.mark.parametrize("t", [0.0, math.pi, 7.0])
def test_rejects_edge_quasimomentum(free, t):
    with pytest.raises(InvalidInputError):
        normalized_pair(free, 0, t)
