"""Hill discriminant, Bloch band branches and multiple eigenvalues.

Band numbering: for ``t`` in ``(0, pi)`` the branch ``lambda_k(t)`` is the root of
``F(lambda) = 2 cos t`` reached by Newton's method from ``(2 pi k + t)^2``. For
``t`` in ``(pi, 2 pi)`` the branch is continued by the reflection
``lambda_k(t) = lambda_k(2 pi - t)`` (the eigenvalue of ``H_t`` and ``H_{-t}``
coincide), so every band is symmetric about ``t = pi``.

Residuals of ``F(lambda) - 2 cos t`` are evaluated in the factored forms

    F - 2 cos t = phi theta' - (theta - 1)(phi' - 1) + 4 sin^2(t/2)
                = (theta + 1)(phi' + 1) - phi theta' - 4 cos^2(t/2),

which use ``det M = 1`` exactly. Near a double eigenvalue the monodromy is
close to ``+-I`` and these products keep far more relative accuracy than the
trace ``theta + phi'`` does.
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import (
    BranchAmbiguityError,
    BranchCrossingError,
    IncompleteSearchError,
    InvalidInputError,
    NearMultipleError,
    RootNotFoundError,
)
from .monodromy import DEFAULT_TOL, MonodromyBatch, integrate_with_lambda_derivative, monodromy_batch
from .potential import Potential

__all__ = [
    "DiscriminantValue",
    "Band",
    "CriticalPoint",
    "hill_discriminant",
    "discriminant_batch",
    "p_of_lambda",
    "characteristic_poly",
    "band_seed",
    "locate_band_point",
    "locate_band_points",
    "trace_band",
    "find_multiple_points",
    "winding_number",
    "crit_tol",
    "band_residual_tol",
    "DELTA_GUARD",
]

DELTA_GUARD = 1e-6
SPECTRUM_TOL = 1e-12
# Relative factor of the multiple-root threshold on |F'|.
CRIT_REL = 1e-8


def crit_tol(lam) -> np.ndarray | float:
    """Threshold on ``|F'(lambda)|`` below which a root counts as multiple."""
    return CRIT_REL * (1.0 + np.abs(lam))


def band_residual_tol(lam) -> np.ndarray | float:
    """Accepted ``|F(lambda) - 2 cos t|`` at a band node."""
    return 1e-8 * (1.0 + np.abs(lam))


@dataclass(frozen=True)
class DiscriminantValue:
    lam: complex
    F: complex
    dF: complex
    p: complex


def discriminant_batch(q: Potential, lam, tol: float = DEFAULT_TOL) -> tuple[np.ndarray, np.ndarray]:
    """``F`` and ``F'`` for an array of lambda values."""
    b = monodromy_batch(q, lam, tol, derivative=True)
    return b.F, b.dF


def _sqrt_near(value: complex, ref: complex | None) -> complex:
    root = cmath.sqrt(value)
    if ref is not None and abs(-root - ref) < abs(root - ref):
        root = -root
    return root


def hill_discriminant(
    q: Potential, lam: complex, tol: float = DEFAULT_TOL, p_ref: complex | None = None
) -> DiscriminantValue:
    """``F = theta(1) + phi'(1)``, ``F'`` and ``p = sqrt(4 - F^2)``.

    ``p`` takes the principal root unless ``p_ref`` is given, in which case the
    root closer to ``p_ref`` is returned.
    """
    fp = integrate_with_lambda_derivative(q, lam, tol)
    F = fp.F
    return DiscriminantValue(complex(lam), F, fp.dF, _sqrt_near(4.0 - F * F, p_ref))


def p_of_lambda(F_path: Iterable[DiscriminantValue | complex]) -> np.ndarray:
    """Continue ``p = sqrt(4 - F^2)`` along an ordered path of discriminant values."""
    Fs = [v.F if isinstance(v, DiscriminantValue) else complex(v) for v in F_path]
    out = np.empty(len(Fs), dtype=complex)
    prev = None
    for i, F in enumerate(Fs):
        if i > 0 and abs(F - Fs[i - 1]) >= 0.5:
            raise BranchAmbiguityError(
                f"discriminant jumps by {abs(F - Fs[i - 1]):.3g} between path points {i - 1} and {i}"
            )
        p = _sqrt_near(4.0 - F * F, prev)
        out[i] = p
        prev = p
    return out


def characteristic_poly(F: complex, t: float) -> complex:
    """``e^{2it} - F e^{it} + 1``; vanishes exactly when ``F = 2 cos t``."""
    z = cmath.exp(1j * t)
    return z * z - F * z + 1.0


def _fold(t) -> np.ndarray:
    """Map t in (pi, 2 pi) to 2 pi - t (band reflection symmetry)."""
    t = np.asarray(t, dtype=float)
    return np.where(t > np.pi, 2.0 * np.pi - t, t)


def band_seed(q: Potential, k: int, t) -> np.ndarray | complex:
    """Free-operator value ``(2 pi k + t)^2`` (after folding) plus the potential mean."""
    s = (2.0 * np.pi * k + _fold(t)) ** 2 + q.mean_shift
    return complex(s) if np.ndim(s) == 0 else s.astype(complex)


def _residual(b: MonodromyBatch, t: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """``F - 2 cos t`` and its lambda-derivative in the factored forms."""
    th, ph, dth, dph = b.theta1, b.phi1, b.dtheta1, b.dphi1
    d_th, d_ph, d_dth, d_dph = b.dlambda
    near_zero = np.cos(t) >= 0.0
    g0 = ph * dth - (th - 1.0) * (dph - 1.0) + 4.0 * np.sin(t / 2.0) ** 2
    gp = (th + 1.0) * (dph + 1.0) - ph * dth - 4.0 * np.cos(t / 2.0) ** 2
    dg0 = d_ph * dth + ph * d_dth - d_th * (dph - 1.0) - (th - 1.0) * d_dph
    dgp = d_th * (dph + 1.0) + (th + 1.0) * d_dph - d_ph * dth - ph * d_dth
    return np.where(near_zero, g0, gp), np.where(near_zero, dg0, dgp)


def _seed_spacing(k: int, t: np.ndarray) -> np.ndarray:
    """Distance from the seed of band k to the nearest seed of another band."""
    tf = _fold(t)
    own = (2.0 * np.pi * k + tf) ** 2
    others = [(2.0 * np.pi * j + tf) ** 2 for j in {k - 1, k + 1, -k, -k - 1, -k + 1} if j != k]
    return np.min(np.abs(np.array(others) - own), axis=0)


def _newton(
    q: Potential,
    t: np.ndarray,
    lam0: np.ndarray,
    tol: float,
    near_multiple: bool,
    max_iter: int = 60,
    step_cap: np.ndarray | None = None,
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Vectorized Newton on the band residual.

    Returns ``(lam, residual, dF, converged)``; raises :class:`NearMultipleError`
    when ``|F'|`` collapses and ``near_multiple`` is false.
    """
    lam = lam0.astype(complex).copy()
    active = np.ones(lam.shape, dtype=bool)
    converged = np.zeros(lam.shape, dtype=bool)
    res = np.full(lam.shape, np.inf, dtype=complex)
    dF = np.zeros(lam.shape, dtype=complex)
    last_step = np.full(lam.shape, np.inf)
    for _ in range(max_iter):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        b = monodromy_batch(q, lam[idx], tol, derivative=True)
        g, dg = _residual(b, t[idx])
        res[idx] = g
        dF[idx] = dg
        if not near_multiple:
            bad = np.abs(dg) < crit_tol(lam[idx])
            if np.any(bad):
                j = idx[np.flatnonzero(bad)[0]]
                raise NearMultipleError(
                    f"|F'| = {abs(dF[j]):.3g} below crit_tol near lambda = {lam[j]:.10g} (t = {t[j]:.6g})"
                )
        with np.errstate(all="ignore"):
            step = g / dg
        step = np.where(np.isfinite(step), step, 0.0)
        if step_cap is not None:
            cap = step_cap[idx]
            mag = np.abs(step)
            big = mag > cap
            step[big] = step[big] / mag[big] * cap[big]
        lam[idx] -= step
        a = np.abs(step)
        within = np.abs(g) <= band_residual_tol(lam[idx])
        tiny = a <= 4e-16 * (1.0 + np.abs(lam[idx]))
        stalled = within & (a >= 0.5 * last_step[idx])
        # Quadratic convergence: after a step this small the next one is below rounding.
        small = within & (a <= 1e-10 * (1.0 + np.abs(lam[idx])))
        done = tiny | stalled | small | (g == 0)
        last_step[idx] = a
        converged[idx[done & within]] = True
        active[idx[done]] = False
    # Final residual at the returned points.
    b = monodromy_batch(q, lam, tol, derivative=True)
    res, dF = _residual(b, t)
    ok = np.abs(res) <= band_residual_tol(lam)
    return lam, res, b.dF, ok & np.isfinite(lam)


def winding_number(fun: Callable[[np.ndarray], np.ndarray], vertices: Sequence[complex], n0: int = 64,
                   max_rounds: int = 24) -> int:
    """Winding number of ``fun`` around 0 along a closed polygon.

    Each edge is sampled adaptively until neighbouring samples differ by less
    than ``pi / 4`` in argument and by less than a factor ``e`` in modulus. The
    count is accepted only after one extra uniform bisection leaves it
    unchanged, which guards against aliased full turns.
    """
    verts = list(vertices) + [vertices[0]]
    pts = np.concatenate(
        [np.linspace(verts[i], verts[i + 1], n0, endpoint=False) for i in range(len(verts) - 1)]
        + [np.array([verts[0]])]
    )
    vals = fun(pts)
    previous = None
    for _ in range(max_rounds):
        if np.any(vals == 0) or not np.all(np.isfinite(vals)):
            raise IncompleteSearchError("function vanishes or overflows on the contour")
        ratio = vals[1:] / vals[:-1]
        darg = np.angle(ratio)
        bad = np.flatnonzero((np.abs(darg) > np.pi / 4) | (np.abs(np.log(np.abs(ratio))) > 1.0))
        if bad.size == 0:
            count = int(round(np.sum(darg) / (2.0 * np.pi)))
            if previous is not None and count == previous:
                return count
            previous = count
            bad = np.arange(pts.size - 1)
        mids = 0.5 * (pts[bad] + pts[bad + 1])
        mvals = fun(mids)
        pts = np.insert(pts, bad + 1, mids)
        vals = np.insert(vals, bad + 1, mvals)
    raise IncompleteSearchError("argument resolution did not converge on the contour")


def _disk_fallback(q: Potential, k: int, t: float, seed: complex, tol: float) -> complex:
    """Locate a band root near ``seed`` by argument-principle subdivision.

    Counts zeros of ``F - 2 cos t`` in the disk of radius ``4 pi (|k| + 1)``
    around the seed, then bisects squares toward the zero closest to the seed.
    """
    radius = 4.0 * np.pi * (abs(k) + 1)
    target = 2.0 * math.cos(t)

    def g(z):
        return monodromy_batch(q, z, tol, derivative=False).F - target

    circle = seed + radius * np.exp(2j * np.pi * np.arange(64) / 64)
    if winding_number(g, list(circle)) <= 0:
        raise RootNotFoundError(f"no band root within {radius:.3g} of the seed for k={k}, t={t:.6g}")
    centre, half = complex(seed), radius
    for _ in range(40):
        best = None
        for dx in (-0.5, 0.5):
            for dy in (-0.5, 0.5):
                c = centre + half * complex(dx, dy)
                sq = [c + half * 0.5 * complex(sx, sy) for sx, sy in ((-1, -1), (1, -1), (1, 1), (-1, 1))]
                try:
                    n = winding_number(g, sq, n0=16)
                except Exception:
                    n = 0
                if n > 0 and (best is None or abs(c - seed) < abs(best - seed)):
                    best = c
        if best is None:
            break
        centre, half = best, half / 2.0
        lam, res, _, ok = _newton(q, np.array([t]), np.array([centre]), tol, True, max_iter=30)
        if ok[0] and abs(lam[0] - centre) < 2.0 * half:
            return complex(lam[0])
    raise RootNotFoundError(f"disk subdivision failed to isolate a root for k={k}, t={t:.6g}")


def locate_band_points(
    q: Potential,
    k: int,
    t,
    seeds=None,
    near_multiple: bool = False,
    tol: float = DEFAULT_TOL,
) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized :func:`locate_band_point`; returns ``(lambda, dF)`` arrays."""
    t = np.atleast_1d(np.asarray(t, dtype=float))
    if np.any((t <= 0) | (t >= 2 * np.pi)) or np.any(np.abs(t - np.pi) == 0):
        raise InvalidInputError("t must lie in (0, 2 pi) without pi")
    if not near_multiple:
        dist = np.minimum(np.abs(_fold(t)), np.abs(np.pi - _fold(t)))
        if np.any(dist < DELTA_GUARD):
            raise InvalidInputError("t too close to 0 or pi; request near-multiple handling")
    seed = band_seed(q, k, t) if seeds is None else np.atleast_1d(np.asarray(seeds, dtype=complex))
    seed = np.broadcast_to(seed, t.shape).astype(complex)
    cap = 0.5 * np.maximum(_seed_spacing(k, t), 1.0) + 0.0
    lam, res, dF, ok = _newton(q, _fold(t), seed, tol, near_multiple, step_cap=cap)
    for i in np.flatnonzero(~ok):
        lam[i] = _disk_fallback(q, k, float(_fold(t[i])), seed[i], tol)
        fp = integrate_with_lambda_derivative(q, lam[i], tol)
        dF[i] = fp.dF
    return lam, dF


def locate_band_point(
    q: Potential, k: int, t: float, near_multiple: bool = False, seed: complex | None = None,
    tol: float = DEFAULT_TOL,
) -> complex:
    """Band eigenvalue ``lambda_k(t)`` found by Newton's method from its seed."""
    lam, _ = locate_band_points(q, k, [t], None if seed is None else [seed], near_multiple, tol)
    return complex(lam[0])


@dataclass
class Band:
    """A traced branch ``lambda_k(t)`` with per-node pairing values and flags."""

    k: int
    t_nodes: np.ndarray
    lambda_vals: np.ndarray
    dF_vals: np.ndarray
    flags: list[str]
    alpha_vals: np.ndarray | None = None

    def csv_rows(self) -> list[list]:
        alpha = self.alpha_vals if self.alpha_vals is not None else np.full(self.t_nodes.shape, np.nan + 0j)
        return [
            [self.k, repr(float(t)), repr(float(l.real)), repr(float(l.imag)), repr(float(a.real)),
             repr(float(a.imag)), f]
            for t, l, a, f in zip(self.t_nodes, self.lambda_vals, alpha, self.flags)
        ]


BAND_CSV_HEADER = ["k", "t", "re_lambda", "im_lambda", "re_alpha", "im_alpha", "flag"]


def trace_band(
    q: Potential, k: int, t_grid, near_multiple: bool = False, tol: float = DEFAULT_TOL
) -> Band:
    """Follow branch ``k`` along an ascending quasimomentum grid.

    All nodes are first solved from their own seeds in one vectorized Newton
    sweep; any node whose value breaks continuity is re-solved from the
    previous node's value (warm seed) before the continuity check is applied.
    """
    t = np.asarray(t_grid, dtype=float)
    if t.ndim != 1 or t.size == 0 or np.any(np.diff(t) <= 0):
        raise InvalidInputError("t_grid must be a non-empty ascending array")
    lam, dF = locate_band_points(q, k, t, near_multiple=near_multiple, tol=tol)
    seeds = band_seed(q, k, t)
    spacing = _seed_spacing(k, t)

    def allowed(i: int) -> float:
        return abs(seeds[i + 1] - seeds[i]) + 0.5 * min(spacing[i], spacing[i + 1]) + 1e-6 * (1 + abs(lam[i]))

    for i in range(t.size - 1):
        if abs(lam[i + 1] - lam[i]) > allowed(i):
            warm = lam[i] + (seeds[i + 1] - seeds[i])
            l2, d2 = locate_band_points(q, k, [t[i + 1]], [warm], near_multiple, tol)
            lam[i + 1], dF[i + 1] = l2[0], d2[0]
            if abs(lam[i + 1] - lam[i]) > allowed(i):
                raise BranchCrossingError(
                    f"band {k} jumps by {abs(lam[i + 1] - lam[i]):.3g} at node {i + 1}", i + 1
                )
    flags = ["near-multiple" if abs(d) < 10.0 * crit_tol(l) else "simple" for d, l in zip(dF, lam)]
    return Band(k, t, lam, dF, flags)


@dataclass(frozen=True)
class CriticalPoint:
    """A zero of ``F'`` with the quasimomentum it sits at (if on the spectrum)."""

    lambda0: complex
    F0: complex
    dF0: complex
    algebraic_multiplicity: int
    t0: float | None
    t0_mirror: float | None


def _accurate_F(fp) -> complex:
    """F from the factored form around the nearer of +2 and -2."""
    th, ph, dth, dph = fp.theta1, fp.phi1, fp.dtheta1, fp.dphi1
    if (th + dph).real >= 0:
        return 2.0 + (ph * dth - (th - 1.0) * (dph - 1.0))
    return -2.0 + ((th + 1.0) * (dph + 1.0) - ph * dth)


def _taylor(fun_batch: Callable[[np.ndarray], np.ndarray], z0: complex, r: float, m: int = 32) -> np.ndarray:
    """Taylor coefficients of an entire function at ``z0`` from a Cauchy circle of radius ``r``."""
    w = np.exp(2j * np.pi * np.arange(m) / m)
    vals = fun_batch(z0 + r * w)
    coeffs = np.fft.fft(vals) / m
    return coeffs / r ** np.arange(m)


def _scale_radius(lam: complex) -> float:
    # F behaves like 2 cos sqrt(lambda): its lambda-scale is ~ sqrt|lambda|.
    return 0.05 * max(1.0, math.sqrt(abs(lam)))


def find_multiple_points(
    q: Potential,
    region: tuple[float, float, float, float],
    tol: float = DEFAULT_TOL,
    min_box: float = 1e-6,
) -> list[CriticalPoint]:
    """All zeros of ``F'`` in the rectangle ``(re_min, re_max, im_min, im_max)``.

    Zeros are counted by the winding number of ``F'`` along box boundaries,
    isolated by quadtree subdivision (splitting off-centre so symmetric zero
    sets do not land on edges) and polished by Newton's method with ``F''``
    from a Cauchy circle.
    """
    x0, x1, y0, y1 = (float(v) for v in region)
    if not (x0 < x1 and y0 < y1):
        raise InvalidInputError("region must be a nondegenerate rectangle")

    def dF(z):
        return monodromy_batch(q, z, tol, derivative=True).dF

    def corners(b):
        a0, a1, b0, b1 = b
        return [complex(a0, b0), complex(a1, b0), complex(a1, b1), complex(a0, b1)]

    def count(b):
        return winding_number(dF, corners(b))

    def nudge(b, frac):
        a0, a1, b0, b1 = b
        da, db = (a1 - a0) * frac, (b1 - b0) * frac
        return (a0 - da, a1 + da, b0 - db, b1 + db)

    box = (x0, x1, y0, y1)
    for frac in (0.0, 1e-4, 3e-4, 1e-3):
        try:
            total = count(nudge(box, frac))
            box = nudge(box, frac)
            break
        except IncompleteSearchError:
            continue
    else:
        raise IncompleteSearchError("could not find a zero-free boundary for the region")

    found: list[complex] = []

    def newton(z):
        """Newton on F' with F'' from a Cauchy circle; returns (z, converged)."""
        for _ in range(60):
            r = 0.2 * _scale_radius(z)
            c = _taylor(dF, z, r, 16)
            if c[1] == 0:
                return z, False
            step = c[0] / c[1]
            cap = 10.0 * _scale_radius(z)
            if abs(step) > cap:
                step = step / abs(step) * cap
            z = z - step
            if abs(step) <= 1e-13 * (1 + abs(z)):
                return z, True
        return z, False

    def inside(z, b, pad=0.0):
        a0, a1, b0, b1 = b
        return a0 - pad <= z.real <= a1 + pad and b0 - pad <= z.imag <= b1 + pad

    def search(b, n, depth=0):
        if n == 0:
            return
        a0, a1, b0, b1 = b
        size = max(a1 - a0, b1 - b0)
        if n == 1 or size < min_box:
            z, ok = newton(complex(0.5 * (a0 + a1), 0.5 * (b0 + b1)))
            if ok and inside(z, b, 1e-9 * (1 + abs(z))) and all(abs(z - w) > 1e-8 * (1 + abs(z)) for w in found):
                found.append(z)
                if n == 1 or size < min_box:
                    return
        if size < min_box:
            return
        sx = a0 + 0.4637 * (a1 - a0)
        sy = b0 + 0.5371 * (b1 - b0)
        if (a1 - a0) >= (b1 - b0):
            parts = [(a0, sx, b0, b1), (sx, a1, b0, b1)]
        else:
            parts = [(a0, a1, b0, sy), (a0, a1, sy, b1)]
        for p in parts:
            m = None
            for frac in (0.0, 1e-3, 3e-3):
                try:
                    m = count(nudge(p, frac) if frac else p)
                    break
                except IncompleteSearchError:
                    continue
            if m is None:
                raise IncompleteSearchError(f"zero on the boundary of sub-box {p}")
            search(p, m, depth + 1)

    search(box, total)
    found.sort(key=lambda z: (round(z.real, 9), round(z.imag, 9)))
    if len(found) != total:
        raise IncompleteSearchError(f"winding number {total} but {len(found)} zeros located")

    points = []
    for z in found:
        r = _scale_radius(z)
        c = _taylor(lambda w: monodromy_batch(q, w, tol, derivative=False).F, z, r, 32)
        scaled = np.abs(c) * r ** np.arange(c.size)
        ref = np.max(scaled[1:8])
        mult = 2
        while mult < 8 and scaled[mult] <= 1e-6 * ref:
            mult += 1
        fp = integrate_with_lambda_derivative(q, z, tol)
        F0 = _accurate_F(fp)
        t0 = mirror = None
        if abs(F0.imag) <= SPECTRUM_TOL and abs(F0.real) <= 2.0 + SPECTRUM_TOL:
            t0 = math.acos(max(-1.0, min(1.0, F0.real / 2.0)))
            mirror = 2.0 * math.pi - t0
        points.append(CriticalPoint(z, F0, fp.dF, mult, t0, mirror))
    return points
