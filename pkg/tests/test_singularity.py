import json
import math

import numpy as np
import pytest

from hillbloch import build_index_sets, classify_point, find_multiple_points
from hillbloch.discriminant import CriticalPoint
from hillbloch.errors import InvalidInputError
from hillbloch.singularity import (
    ESSENTIAL,
    REGULAR,
    fit_alpha_exponent,
    geometric_multiplicity,
    projection_norm,
    report_json,
)


def test_free_double_points_are_diagonal(free):
    for n in (1, 2, 3):
        t0 = 0.0 if n % 2 == 0 else math.pi
        assert geometric_multiplicity(free, (n * math.pi) ** 2, t0) == 2


def test_gasymov_double_points_are_jordan(gasymov):
    assert geometric_multiplicity(gasymov, math.pi**2, math.pi) == 1


def test_multiplicity_requires_edge_and_root(free):
    with pytest.raises(InvalidInputError):
        geometric_multiplicity(free, 1.0, 1.0)
    with pytest.raises(InvalidInputError):
        geometric_multiplicity(free, 5.0, 0.0)


def test_gasymov_records(gasymov):
    cps = find_multiple_points(gasymov, (-10.0, 100.0, -5.0, 5.0))
    recs = [classify_point(gasymov, c) for c in cps]
    assert [r.classification for r in recs] == [ESSENTIAL] * 3
    assert all(r.alpha_exponent >= 0.9 and r.geometric_multiplicity == 1 for r in recs)
    assert all(r.low_index_unproven for r in recs)
    # n = 2 (t0 = 0) is reached by bands 1 and -1
    assert recs[1].involved_bands == (-1, 1)
    obj = json.loads(report_json(recs))
    assert len(obj["records"]) == 3 and obj["records"][0]["class"] == ESSENTIAL
    assert report_json(recs) == report_json(recs)


def test_mathieu_double_points_are_regular(mathieu):
    cp = [c for c in find_multiple_points(mathieu, (100.0, 200.0, -5.0, 5.0)) if c.t0 is not None][0]
    rec = classify_point(mathieu, cp)
    assert rec.classification == REGULAR and rec.geometric_multiplicity == 2
    assert not rec.is_spectral_singularity
    assert abs(rec.alpha_exponent) < 0.1


def test_off_spectrum_point_rejected(mathieu):
    cp = CriticalPoint(9.83 + 0j, -2.0 + 0j, 0j, 2, None, None)
    with pytest.raises(InvalidInputError):
        classify_point(mathieu, cp)


def test_exponent_fit_regular_branch(free):
    fit = fit_alpha_exponent(free, 2, 1.0, window=0.2, J=4, x_points=64)
    assert abs(fit.beta) < 1e-6 and not fit.inconclusive


def test_projection_norm_bounded_for_selfadjoint(mathieu):
    assert projection_norm(mathieu, 1, (0.3, 2.8), n=8, x_points=128, refine=1) == pytest.approx(1.0, abs=1e-8)


def test_index_sets_gasymov(gasymov):
    sets = build_index_sets(gasymov, 0.02, 6)
    assert sets.N0 == (0,) and sets.Npi == ()
    assert sets.S0h == () and sets.Spih == ()
    assert sets.pair_map_0[0] == (1, -1)
    assert sets.pair_map_pi[:2] == ((0, -1), (1, -2))
    assert sets.ess_pairs_0 == ((1, -1),) and sets.ess_pairs_pi == ((0, -1), (1, -2))
    assert sets.has_ess
    json.dumps(sets.to_json())


def test_index_sets_free_has_no_ess(free):
    sets = build_index_sets(free, 0.02, 4)
    assert not sets.has_ess


@pytest.mark.parametrize("h,k", [(0.05, 4), (0.02, 0)])
def test_index_set_arguments(free, h, k):
    with pytest.raises(InvalidInputError):
        build_index_sets(free, h, k)
