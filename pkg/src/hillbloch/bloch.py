"""Floquet eigenfunctions, biorthogonal pairs and the pairing ``alpha_k(t)``.

Inner products are ``(f, g) = int_0^1 f conj(g) dx``, evaluated by the
trapezoid rule on ``x_j = j / N``. Every integrand used here is a product of
two Floquet functions with reciprocal multipliers, hence 1-periodic and
smooth, and the rule converges spectrally.
"""

from __future__ import annotations

import cmath
from dataclasses import dataclass

import numpy as np

from .discriminant import crit_tol, locate_band_points
from .errors import DegeneratePairError, FormulaInapplicableError, InvalidInputError
from .monodromy import DEFAULT_TOL, MonodromyBatch, sample_batch
from .potential import Potential

__all__ = [
    "BlochPair",
    "floquet_function",
    "floquet_from_batch",
    "normalized_pair",
    "alpha_via_identity",
    "pair_from_samples",
    "inner",
    "norm",
    "apply_gauge",
    "extend_quasiperiodic",
    "DEFAULT_X_POINTS",
    "NULL_TOL",
]

DEFAULT_X_POINTS = 512
NULL_TOL = 1e-10
SINGULAR_ALPHA = 1e-14


def inner(f: np.ndarray, g: np.ndarray) -> complex | np.ndarray:
    """Periodic trapezoid value of ``int_0^1 f conj(g)`` along the last axis."""
    return np.mean(f * np.conj(g), axis=-1)


def norm(f: np.ndarray) -> float | np.ndarray:
    return np.sqrt(np.mean(np.abs(f) ** 2, axis=-1))


def apply_gauge(v: np.ndarray) -> tuple[np.ndarray, complex]:
    """Rotate ``v`` so its largest-magnitude sample is real positive; return the factor used."""
    j = int(np.argmax(np.abs(v)))
    if v[j] == 0:
        return v, 1.0 + 0j
    phase = np.conj(v[j]) / abs(v[j])
    return v * phase, phase


def floquet_from_batch(b: MonodromyBatch, t, n_points: int, sign: int = 1) -> tuple[np.ndarray, np.ndarray]:
    """Samples of ``Phi(lambda, sign*t, x)`` and ``G(lambda, sign*t, x)`` for every lane.

    ``Phi = phi(1) theta(x) + (e^{it} - theta(1)) phi(x)`` and
    ``G = theta'(1) phi(x) + (e^{it} - phi'(1)) theta(x)``.
    """
    z = np.exp(1j * sign * np.asarray(t, dtype=float))
    th = b.theta[:, :n_points]
    ph = b.phi[:, :n_points]
    Phi = b.phi1[:, None] * th + (z - b.theta1)[:, None] * ph
    G = b.dtheta1[:, None] * ph + (z - b.dphi1)[:, None] * th
    return Phi, G


def _x_grid(n_points: int) -> np.ndarray:
    return np.arange(n_points) / n_points


def _pick(Phi: np.ndarray, G: np.ndarray, b: MonodromyBatch, t: float, sign: int, i: int = 0):
    z = cmath.exp(1j * sign * t)
    scale_phi = abs(b.phi1[i]) + abs(z - b.theta1[i]) + 1.0
    if norm(Phi[i]) >= NULL_TOL * scale_phi:
        return Phi[i], "Phi"
    scale_g = abs(b.dtheta1[i]) + abs(z - b.dphi1[i]) + 1.0
    if norm(G[i]) >= NULL_TOL * scale_g:
        return G[i], "G"
    return None, "eigenspace"


def floquet_function(
    q: Potential, lam: complex, t: float, x_points: int = DEFAULT_X_POINTS, tol: float = DEFAULT_TOL
) -> tuple[np.ndarray, str]:
    """Floquet solution with multiplier ``e^{it}`` sampled on ``j / x_points``.

    Returns ``(samples, tag)``. When both closed forms vanish (geometric
    multiplicity two) the tag is ``"eigenspace"`` and the samples are the rows
    ``theta`` and ``phi``.
    """
    b = sample_batch(q, [lam], x_points, tol)
    Phi, G = floquet_from_batch(b, t, x_points)
    v, tag = _pick(Phi, G, b, t, 1)
    if v is None:
        return np.vstack([b.theta[0, :x_points], b.phi[0, :x_points]]), tag
    return v, tag


@dataclass(frozen=True)
class BlochPair:
    """Normalized eigenfunctions of ``H_t`` and ``H_t^*`` with their pairing."""

    k: int
    t: float
    lam: complex
    x_grid: np.ndarray
    psi: np.ndarray
    psi_star: np.ndarray
    alpha: complex
    x_dual: np.ndarray
    which_formula: str
    dF: complex
    singular: bool = False

    def extend(self, n_periods: int) -> np.ndarray:
        """``psi`` on ``[0, n_periods)`` via ``Psi(x + 1) = e^{it} Psi(x)``."""
        return extend_quasiperiodic(self.psi, self.t, n_periods)


def extend_quasiperiodic(samples: np.ndarray, t: float, n_periods: int, start: int = 0) -> np.ndarray:
    """Continue one-period samples to ``n_periods`` periods starting at period ``start``."""
    factors = np.exp(1j * t * (start + np.arange(n_periods)))
    return (factors[:, None] * samples[None, :]).ravel()


def pair_from_samples(
    b: MonodromyBatch, k: int, t: float, dF: complex, x_points: int, i: int = 0
) -> BlochPair:
    """Assemble a :class:`BlochPair` from sampled fundamental solutions (lane ``i``)."""
    Phi_p, G_p = floquet_from_batch(b, t, x_points, 1)
    Phi_m, G_m = floquet_from_batch(b, t, x_points, -1)
    u, tag_u = _pick(Phi_p, G_p, b, t, 1, i)
    v, tag_v = _pick(Phi_m, G_m, b, t, -1, i)
    if u is None or v is None:
        raise DegeneratePairError(f"both Floquet formulas vanish at lambda = {b.lam[i]:.10g}")
    psi, _ = apply_gauge(u / norm(u))
    psi_star, _ = apply_gauge(np.conj(v) / norm(v))
    alpha = complex(inner(psi_star, psi))
    tag = tag_u if tag_u == tag_v else f"{tag_u}/{tag_v}"
    singular = abs(alpha) < SINGULAR_ALPHA
    x_dual = psi_star / alpha if not singular else np.full_like(psi_star, np.nan)
    return BlochPair(k, float(t), complex(b.lam[i]), _x_grid(x_points), psi, psi_star, alpha, x_dual, tag,
                     complex(dF), singular)


def _check_t(t: float) -> None:
    if not (0.0 < t < 2.0 * np.pi) or t == np.pi:
        raise InvalidInputError("t must lie in (0, 2 pi) without pi")


def normalized_pair(
    q: Potential,
    k: int,
    t: float,
    x_points: int = DEFAULT_X_POINTS,
    tol: float = DEFAULT_TOL,
    allow_near_multiple: bool = False,
) -> BlochPair:
    """Biorthogonal pair for band ``k`` at quasimomentum ``t``.

    ``psi`` is the normalized Floquet solution with multiplier ``e^{it}``;
    ``psi_star`` is the conjugate of the one with multiplier ``e^{-it}`` at the
    same eigenvalue (an eigenfunction of the adjoint fiber operator).
    """
    _check_t(t)
    lam, dF = locate_band_points(q, k, [t], near_multiple=allow_near_multiple, tol=tol)
    if not allow_near_multiple and abs(dF[0]) <= crit_tol(lam[0]):
        raise DegeneratePairError(f"lambda_{k}({t}) is numerically multiple")
    b = sample_batch(q, lam, x_points, tol)
    return pair_from_samples(b, k, t, dF[0], x_points)


def alpha_via_identity(
    q: Potential, k: int, t: float, x_points: int = DEFAULT_X_POINTS, tol: float = DEFAULT_TOL
) -> complex:
    """``alpha`` from ``int Phi_t Phi_{-t} = -phi(1) F'`` with the gauge of :func:`normalized_pair`."""
    _check_t(t)
    lam, dF = locate_band_points(q, k, [t], tol=tol)
    if abs(dF[0]) <= crit_tol(lam[0]):
        raise DegeneratePairError(f"lambda_{k}({t}) is numerically multiple")
    b = sample_batch(q, lam, x_points, tol)
    phi1 = b.phi1[0]
    Phi_p, G_p = floquet_from_batch(b, t, x_points, 1)
    Phi_m, G_m = floquet_from_batch(b, t, x_points, -1)
    scale = abs(phi1) + abs(cmath.exp(1j * t) - b.theta1[0]) + 1.0
    if abs(phi1) <= NULL_TOL * scale or norm(Phi_p[0]) < NULL_TOL * scale or norm(Phi_m[0]) < NULL_TOL * scale:
        raise FormulaInapplicableError(f"phi(1, lambda) = {phi1:.3g} vanishes; use the quadrature pair")
    n_p, n_m = norm(Phi_p[0]), norm(Phi_m[0])
    _, c1 = apply_gauge(Phi_p[0] / n_p)
    _, c2 = apply_gauge(np.conj(Phi_m[0]) / n_m)
    bilinear = -phi1 * dF[0]
    return complex(c2 * np.conj(c1) * np.conj(bilinear) / (n_p * n_m))
