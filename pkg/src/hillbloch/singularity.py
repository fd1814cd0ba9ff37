"""Classification of multiple eigenvalues and the index sets used by the expansion.

A multiple eigenvalue ``lambda0`` with ``F(lambda0) = 2 cos t0`` is

* a spectral singularity (never essential) when ``t0`` is not 0 or pi;
* an essential spectral singularity when ``t0`` is 0 or pi and the
  eigenspace is one-dimensional, i.e. the monodromy is a Jordan block;
* a regular multiple point when ``t0`` is 0 or pi and the monodromy is ``+-I``.

The pairing ``alpha_k(t)`` vanishes like ``|t - t0|^beta`` at essential points
with ``beta = 1``, so ``1/|alpha|`` is not integrable; the fitted exponent is
recorded for every record as a numerical cross-check.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .bloch import DEFAULT_X_POINTS, pair_from_samples
from .discriminant import CriticalPoint, band_seed, locate_band_points
from .errors import HillError, InconsistentNumberingError, InvalidInputError, KMaxTooSmallError
from .monodromy import DEFAULT_TOL, integrate_fundamental, sample_batch
from .potential import Potential

__all__ = [
    "SingularityRecord",
    "IndexSets",
    "ExponentFit",
    "geometric_multiplicity",
    "classify_point",
    "alpha_exponent",
    "fit_alpha_exponent",
    "projection_norm",
    "build_index_sets",
    "report_json",
    "FIT_SLACK",
    "DEFAULT_H",
    "DEFAULT_K_MAX",
]

FIT_SLACK = 0.1
DEFAULT_H = 0.02
DEFAULT_K_MAX = 32
LADDER_J = 10
FIT_RESIDUAL_MAX = 0.2
# Relative size of the rounding perturbation of the monodromy used to place
# the bottom of the exponent-fit window.
_ROUNDING = 1e-16
_FLOOR_FACTOR = 30.0
OVERFLOW_SENTINEL = math.inf

REGULAR = "regular_multiple"
SPECTRAL = "spectral_singularity"
ESSENTIAL = "essential_spectral_singularity"


GM_REL = 1e-7


def gm_tol(lam0: complex) -> float:
    """Bound on ``|phi(1)|`` and ``|theta'(1)|`` for a two-dimensional eigenspace."""
    return GM_REL * (1.0 + abs(lam0))


def _on_edge(t0: float) -> bool:
    return abs(t0) < 1e-9 or abs(t0 - math.pi) < 1e-9 or abs(t0 - 2 * math.pi) < 1e-9


def _edge_sign(t0: float) -> float:
    return 1.0 if math.cos(t0) > 0 else -1.0


def geometric_multiplicity(q: Potential, lam0: complex, t0: float, tol: float = DEFAULT_TOL) -> int:
    """Dimension of the eigenspace of ``H_{t0}`` at ``lam0`` for ``t0`` in ``{0, pi}``.

    It is 2 exactly when the monodromy equals ``+-I``, tested through
    ``phi(1)`` and ``theta'(1)``.
    """
    if not _on_edge(t0):
        raise InvalidInputError("geometric multiplicity test applies to t0 = 0 or pi")
    fp = integrate_fundamental(q, lam0, tol)
    s = _edge_sign(t0)
    if abs(fp.F - 2.0 * s) > 1e-6 * (1.0 + abs(lam0)):
        raise InvalidInputError(f"F(lambda0) = {fp.F:.8g} is not {2 * s:+.0f}")
    g = gm_tol(lam0)
    return 2 if abs(fp.phi1) <= g and abs(fp.dtheta1) <= g else 1


@dataclass(frozen=True)
class ExponentFit:
    beta: float
    residual: float
    window: float
    offsets: np.ndarray
    alpha_abs: np.ndarray

    @property
    def inconclusive(self) -> bool:
        return not np.isfinite(self.residual) or self.residual > FIT_RESIDUAL_MAX

    def nonintegrable(self, slack: float = FIT_SLACK) -> bool:
        return self.beta >= 1.0 - slack


def _jordan_size(q: Potential, lam0: complex, t0: float, tol: float) -> float:
    """Scaled distance of the monodromy at ``lam0`` from ``+-I``."""
    fp = integrate_fundamental(q, lam0, tol)
    s = _edge_sign(t0) if _on_edge(t0) else 0.0
    w = max(1.0, math.sqrt(abs(lam0)))
    if s == 0.0:
        return 1.0
    return max(abs(fp.theta1 - s), abs(fp.dphi1 - s), w * abs(fp.phi1), abs(fp.dtheta1) / w)


def default_window(q: Potential, k: int, t0: float, lam0: complex | None = None, J: int = LADDER_J,
                   tol: float = DEFAULT_TOL, h: float = DEFAULT_H) -> float:
    """Top of the geometric ladder used by :func:`fit_alpha_exponent`.

    At ``t0`` in ``{0, pi}`` the ladder is placed directly above the rounding
    floor ``30 sqrt(1e-16 nu)``, where ``nu`` measures how far the monodromy is
    from ``+-I``. A small ``nu`` means a weakly coupled Jordan block whose
    asymptotic regime ``|alpha| ~ |t - t0|`` only starts near ``|t - t0| ~ nu``.
    Interior points use ``h``.
    """
    if not _on_edge(t0):
        return h
    if lam0 is None:
        lam0 = band_seed(q, k, 1e-9 if t0 < 1 else math.pi - 1e-9)
        lam0 = complex(locate_band_points(q, k, [t0 + 1e-9 if t0 < 1 else t0 - 1e-9], [lam0],
                                          near_multiple=True, tol=tol)[0][0])
    nu = _jordan_size(q, lam0, t0, tol)
    floor = max(_FLOOR_FACTOR * math.sqrt(_ROUNDING * nu), 1e-11)
    return min(h, floor * 2.0**J)


def _ladder_points(t0: float, offsets: np.ndarray) -> np.ndarray:
    if abs(t0) < 1e-9:
        return offsets
    return t0 - offsets


def alpha_on_points(q: Potential, k: int, t: np.ndarray, x_points: int = DEFAULT_X_POINTS,
                    tol: float = DEFAULT_TOL) -> np.ndarray:
    """``alpha_k`` at the given quasimomenta (near-multiple handling enabled).

    Points are solved from the outermost inward with warm seeds so the branch
    is followed continuously into ``t0``.
    """
    t = np.asarray(t, dtype=float)
    order = np.arange(t.size)  # callers list points from the outermost inward
    lam = np.empty(t.size, dtype=complex)
    dF = np.empty(t.size, dtype=complex)
    seed = None
    for i in order:
        s = [seed] if seed is not None else None
        l, d = locate_band_points(q, k, [t[i]], s, near_multiple=True, tol=tol)
        lam[i], dF[i] = l[0], d[0]
        seed = l[0]
    b = sample_batch(q, lam, x_points, tol)
    return np.array([pair_from_samples(b, k, float(t[i]), dF[i], x_points, i).alpha for i in range(t.size)])


def fit_alpha_exponent(
    q: Potential,
    k: int,
    t0: float,
    window: float | None = None,
    J: int = LADDER_J,
    x_points: int = DEFAULT_X_POINTS,
    lam0: complex | None = None,
    tol: float = DEFAULT_TOL,
) -> ExponentFit:
    """Least-squares slope of ``log|alpha_k|`` against ``log|t - t0|`` on ``w 2^{-j}``, ``j = 0..J``."""
    if window is None:
        window = default_window(q, k, t0, lam0, J, tol)
    if window <= 0:
        raise InvalidInputError("window must be positive")
    offsets = window * 2.0 ** -np.arange(J + 1)
    t = _ladder_points(t0, offsets)
    alpha = np.abs(alpha_on_points(q, k, t, x_points, tol))
    x, y = np.log(offsets), np.log(np.maximum(alpha, 1e-300))
    beta, c = np.polyfit(x, y, 1)
    resid = float(np.sqrt(np.mean((y - (beta * x + c)) ** 2)))
    return ExponentFit(float(beta), resid, float(window), offsets, alpha)


def alpha_exponent(q: Potential, k: int, t0: float, window: float | None = None, J: int = LADDER_J) -> float:
    """Fitted exponent ``beta`` with ``|alpha_k(t)| ~ c |t - t0|^beta``."""
    return fit_alpha_exponent(q, k, t0, window, J).beta


@dataclass(frozen=True)
class SingularityRecord:
    lambda0: complex
    t0: float
    algebraic_multiplicity: int
    geometric_multiplicity: int
    classification: str
    alpha_exponent: float
    fit_residual: float
    involved_bands: tuple[int, ...]
    low_index_unproven: bool = False
    exponent_inconclusive: bool = False

    @property
    def is_spectral_singularity(self) -> bool:
        return self.classification in (SPECTRAL, ESSENTIAL)

    def to_json(self) -> dict:
        return {
            "re_lambda0": float(self.lambda0.real),
            "im_lambda0": float(self.lambda0.imag),
            "t0": float(self.t0),
            "alg_mult": int(self.algebraic_multiplicity),
            "geo_mult": int(self.geometric_multiplicity),
            "class": self.classification,
            "beta": float(self.alpha_exponent),
            "fit_residual": float(self.fit_residual),
            "bands": [int(b) for b in self.involved_bands],
            "low_index_unproven": bool(self.low_index_unproven),
            "exponent_inconclusive": bool(self.exponent_inconclusive),
        }


def _candidate_bands(lam0: complex, t0: float, spread: int = 2) -> list[int]:
    """Band indices whose free seeds at ``t0`` lie near ``lam0``."""
    r = math.sqrt(abs(lam0))
    tf = t0 if t0 <= math.pi else 2 * math.pi - t0
    centre_pos = (r - tf) / (2 * math.pi)
    centre_neg = (-r - tf) / (2 * math.pi)
    out = set()
    for c in (centre_pos, centre_neg):
        for j in range(int(math.floor(c)) - spread, int(math.ceil(c)) + spread + 1):
            out.add(j)
    return sorted(out, key=lambda j: (abs(j), j))


def involved_bands(q: Potential, lam0: complex, t0: float, tol: float = DEFAULT_TOL,
                   offset: float = 1e-6) -> tuple[int, ...]:
    """Bands whose values approach ``lam0`` as ``t -> t0`` (matched within ``1e-4 (1 + |lam0|)``)."""
    tf = t0 if t0 <= math.pi else 2 * math.pi - t0
    t_near = tf + offset if tf < math.pi / 2 else tf - offset
    match = 1e-4 * (1.0 + abs(lam0))
    hits = []
    for k in _candidate_bands(lam0, tf):
        try:
            lam, _ = locate_band_points(q, k, [t_near], near_multiple=True, tol=tol)
        except Exception:
            continue
        if abs(lam[0] - lam0) <= match:
            hits.append(k)
    return tuple(sorted(hits))


def classify_point(
    q: Potential,
    cp: CriticalPoint,
    tol: float = DEFAULT_TOL,
    x_points: int = DEFAULT_X_POINTS,
    fit_slack: float = FIT_SLACK,
) -> SingularityRecord:
    """Classify a multiple eigenvalue lying on the spectrum."""
    if cp.t0 is None:
        raise InvalidInputError("critical point is not on the spectrum (no real t0)")
    t0 = float(cp.t0)
    bands = involved_bands(q, cp.lambda0, t0, tol)
    if not bands:
        raise InconsistentNumberingError(f"no traced band converges to lambda0 = {cp.lambda0:.10g}")
    if _on_edge(t0):
        gm = geometric_multiplicity(q, cp.lambda0, t0, tol)
        cls = ESSENTIAL if gm == 1 else REGULAR
    else:
        gm = 1
        cls = SPECTRAL
    # A Jordan block sets the fit window from its coupling size; a diagonal
    # monodromy (gm = 2) has no such scale and uses the cut parameter.
    window = None if gm == 1 else DEFAULT_H
    try:
        fit = fit_alpha_exponent(q, bands[0], t0, window, LADDER_J, x_points, cp.lambda0, tol)
        beta, resid, inconclusive = fit.beta, fit.residual, fit.inconclusive
    except HillError:
        beta, resid, inconclusive = math.nan, math.nan, True
    return SingularityRecord(
        complex(cp.lambda0), t0, int(cp.algebraic_multiplicity), gm, cls, beta, resid, bands,
        low_index_unproven=_on_edge(t0), exponent_inconclusive=inconclusive,
    )


def projection_norm(q: Potential, k: int, t_interval: tuple[float, float], n: int = 32,
                    x_points: int = DEFAULT_X_POINTS, refine: int = 3) -> float:
    """``sup 1/|alpha_k(t)|`` over an interval: uniform grid plus local refinement at the maximum."""
    a, b = (float(v) for v in t_interval)
    t = np.linspace(a, b, n)
    inv = 1.0 / np.maximum(np.abs(alpha_on_points(q, k, t, x_points)), 1e-300)
    best = float(np.max(inv))
    for _ in range(refine):
        j = int(np.argmax(inv))
        lo, hi = t[max(j - 1, 0)], t[min(j + 1, t.size - 1)]
        t = np.linspace(lo, hi, 9)
        inv = 1.0 / np.maximum(np.abs(alpha_on_points(q, k, t, x_points)), 1e-300)
        best = max(best, float(np.max(inv)))
    return OVERFLOW_SENTINEL if best > 1e14 else best


@dataclass(frozen=True)
class IndexSets:
    """Band index bookkeeping near t = 0 and t = pi for a cut parameter ``h``."""

    h: float
    k_max: int
    N_h0: int
    N_hpi: int
    N0: tuple[int, ...]
    Npi: tuple[int, ...]
    S0h: tuple[int, ...]
    Spih: tuple[int, ...]
    K_groups_0: tuple[tuple[int, ...], ...]
    K_groups_pi: tuple[tuple[int, ...], ...]
    pair_map_0: tuple[tuple[int, int], ...]
    pair_map_pi: tuple[tuple[int, int], ...]
    ess_pairs_0: tuple[tuple[int, int], ...] = ()
    ess_pairs_pi: tuple[tuple[int, int], ...] = ()
    betas: dict = field(default_factory=dict)

    @property
    def has_ess(self) -> bool:
        """True when any low-index or paired branch meets an essential singularity."""
        return bool(self.S0h or self.Spih or self.ess_pairs_0 or self.ess_pairs_pi)

    def to_json(self) -> dict:
        d = asdict(self)
        d["betas"] = {str(k): v for k, v in self.betas.items()}
        return d


def _trace_near(q: Potential, ks: list[int], t: np.ndarray, tol: float) -> dict[int, np.ndarray]:
    return {k: locate_band_points(q, k, t, near_multiple=True, tol=tol)[0] for k in ks}


def _isolated(vals: dict[int, np.ndarray], group: tuple[int, ...], gap: float) -> bool:
    own = np.concatenate([vals[k] for k in group])
    others = [vals[j] for j in vals if j not in group]
    if not others:
        return True
    n = vals[group[0]].size
    for j_vals in others:
        for i in range(n):
            if np.min(np.abs(np.array([vals[k][i] for k in group]) - j_vals[i])) <= gap:
                return False
    return True


def build_index_sets(
    q: Potential,
    h: float = DEFAULT_H,
    k_max: int = DEFAULT_K_MAX,
    tol: float = DEFAULT_TOL,
    x_points: int = DEFAULT_X_POINTS,
    fit_slack: float = FIT_SLACK,
    n_probe: int = 6,
) -> IndexSets:
    """Determine ``N_h(0)``, ``N_h(pi)``, the nonintegrable sets and the pair maps.

    Isolation of a pair means that on ``0 < |t| <= h`` (respectively near pi) the
    two paired branches stay farther than ``gap_tol = pi max(1, k)`` from every
    other traced branch.
    """
    if not (0.0 < h < 1.0 / 32.0):
        raise InvalidInputError("h must satisfy 0 < h < 1/32")
    if k_max < 1:
        raise InvalidInputError("k_max must be at least 1")
    probe = h * np.linspace(1.0 / n_probe, 1.0, n_probe)
    ks = list(range(-k_max - 1, k_max + 1))
    near0 = _trace_near(q, ks, probe, tol)
    nearpi = _trace_near(q, ks, math.pi - probe, tol)

    def gap(k: int) -> float:
        return math.pi * max(1, abs(k))

    iso0 = {k: _isolated(near0, (k, -k), gap(k)) for k in range(1, k_max + 1)}
    isopi = {k: _isolated(nearpi, (k, -(k + 1)), gap(k)) for k in range(0, k_max)}
    if not iso0[k_max] or not isopi[k_max - 1]:
        raise KMaxTooSmallError(f"pairs at k_max = {k_max} are not isolated; increase k_max")
    N_h0 = max([k for k, ok in iso0.items() if not ok], default=0)
    N_hpi = max([k + 1 for k, ok in isopi.items() if not ok], default=0)
    N0 = tuple(range(-N_h0, N_h0 + 1))
    Npi = tuple(range(-N_hpi, N_hpi))

    def nonintegrable(members: tuple[int, ...], t0: float) -> tuple[tuple[int, ...], dict]:
        betas, out = {}, []
        for k in members:
            fit = fit_alpha_exponent(q, k, t0, None, LADDER_J, x_points, None, tol)
            betas[k] = fit.beta
            if fit.nonintegrable(fit_slack):
                out.append(k)
        return tuple(out), betas

    S0h, b0 = nonintegrable(N0, 0.0)
    Spih, bpi = nonintegrable(Npi, math.pi)

    def groups(members: tuple[int, ...], t_probe: float) -> tuple[tuple[int, ...], ...]:
        if not members:
            return ()
        vals = _trace_near(q, list(members), np.array([t_probe]), tol)
        out: list[list[int]] = []
        for k in members:
            for g in out:
                if abs(vals[g[0]][0] - vals[k][0]) <= 1e-2 * (1.0 + abs(vals[k][0])):
                    g.append(k)
                    break
            else:
                out.append([k])
        return tuple(tuple(g) for g in out)

    pair_map_0 = tuple((k, -k) for k in range(N_h0 + 1, k_max + 1))
    pair_map_pi = tuple((k, -(k + 1)) for k in range(N_hpi, k_max))

    def essential_pairs(pairs, t_edge: float, t_probe: float):
        out = []
        for k, j in pairs:
            lk = locate_band_points(q, k, [t_probe], near_multiple=True, tol=tol)[0][0]
            lj = locate_band_points(q, j, [t_probe], near_multiple=True, tol=tol)[0][0]
            if abs(lk - lj) > 1e-4 * (1.0 + abs(lk)):
                continue
            lam0 = 0.5 * (lk + lj)
            try:
                if geometric_multiplicity(q, lam0, t_edge, tol) == 1:
                    out.append((k, j))
            except InvalidInputError:
                continue
        return tuple(out)

    return IndexSets(
        h, k_max, N_h0, N_hpi, N0, Npi, S0h, Spih,
        groups(S0h, 1e-9), groups(Spih, math.pi - 1e-9), pair_map_0, pair_map_pi,
        essential_pairs(pair_map_0, 0.0, 1e-9), essential_pairs(pair_map_pi, math.pi, math.pi - 1e-9),
        {"0": {str(k): v for k, v in b0.items()}, "pi": {str(k): v for k, v in bpi.items()}},
    )


def report_json(records: list[SingularityRecord], index_sets: IndexSets | None = None) -> str:
    """Deterministic JSON text for a singularity report."""
    obj = {"records": [r.to_json() for r in records]}
    if index_sets is not None:
        obj["index_sets"] = index_sets.to_json()
    return json.dumps(obj, indent=2, sort_keys=True)
