"""Bloch spectrum, spectral singularities and eigenfunction expansion for the Hill operator
``-y'' + q(x) y`` with a complex 1-periodic trigonometric-polynomial potential."""

from .bloch import BlochPair, alpha_via_identity, floquet_function, normalized_pair
from .discriminant import (
    Band,
    CriticalPoint,
    find_multiple_points,
    hill_discriminant,
    locate_band_point,
    locate_band_points,
    trace_band,
)
from .errors import HillError
from .expansion import (
    ExpansionPlan,
    ReconstructionReport,
    coefficient,
    gelfand_transform,
    lambda_domain_term,
    make_plan,
    synthesize,
    t_domain_term,
)
from .monodromy import FundamentalPair, integrate_fundamental, integrate_with_lambda_derivative
from .potential import GridSpec, Potential, TestFunction, make_fourier_potential, make_test_function
from .singularity import IndexSets, SingularityRecord, build_index_sets, classify_point

__all__ = [
    "Band",
    "BlochPair",
    "CriticalPoint",
    "ExpansionPlan",
    "FundamentalPair",
    "GridSpec",
    "HillError",
    "IndexSets",
    "Potential",
    "ReconstructionReport",
    "SingularityRecord",
    "TestFunction",
    "alpha_via_identity",
    "build_index_sets",
    "classify_point",
    "coefficient",
    "find_multiple_points",
    "floquet_function",
    "gelfand_transform",
    "hill_discriminant",
    "integrate_fundamental",
    "integrate_with_lambda_derivative",
    "lambda_domain_term",
    "locate_band_point",
    "locate_band_points",
    "make_fourier_potential",
    "make_plan",
    "make_test_function",
    "normalized_pair",
    "synthesize",
    "t_domain_term",
    "trace_band",
]
