"""Spectral synthesis of compactly supported functions from Bloch eigenpairs.

For band ``k`` at quasimomentum ``t`` the product ``a_k(t) Psi_{k,t}(x)`` is
evaluated in the gauge-free form

    [int_R f(y) U_{-t}(y) dy] U_t(x) / int_0^1 U_t(x) U_{-t}(x) dx,

where ``U_{+t}`` and ``U_{-t}`` are Floquet solutions at ``lambda_k(t)`` with
multipliers ``e^{it}`` and ``e^{-it}``. Band values satisfy
``lambda_k(2 pi - t) = lambda_k(t)``, so one integration at a node ``t`` in
``(0, pi)`` serves both quasimomenta ``t`` and ``-t``.

Near ``t = 0`` and ``t = pi`` the terms that need a limit over excision
radii are integrated shell by shell on a geometric ladder; the limit is the
Richardson extrapolation of the last two partial sums.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .bloch import DEFAULT_X_POINTS, NULL_TOL, inner, normalized_pair
from .discriminant import locate_band_points, trace_band
from .errors import (
    BranchAmbiguityError,
    DegeneratePairError,
    InconsistentNumberingError,
    InvalidInputError,
)
from .monodromy import DEFAULT_TOL, MonodromyBatch, sample_batch
from .potential import GridSpec, Potential, TestFunction
from .singularity import DEFAULT_H, IndexSets, build_index_sets

__all__ = [
    "ExpansionPlan",
    "ReconstructionReport",
    "ConvergenceCell",
    "ZoneTerm",
    "TermDiagnostic",
    "gelfand_transform",
    "coefficient",
    "make_plan",
    "synthesize",
    "lambda_domain_term",
    "t_domain_term",
    "eval_grid",
    "default_ladder",
    "STABLE_TOL",
    "NONCONVERGENT_TOL",
    "GROWTH_LIMIT",
    "CROSS_TOL",
]

log = logging.getLogger(__name__)

LADDER_DEPTH = 8
STABLE_TOL = 1e-4
NONCONVERGENT_TOL = 0.1
GROWTH_LIMIT = 0.8
CROSS_TOL = 1e-5
INTERIOR_ALPHA_WARN = 1e-8
_CHUNK = 512
_TWO_PI = 2.0 * math.pi


# ---------------------------------------------------------------------------
# Gelfand transform and single coefficients
# ---------------------------------------------------------------------------


def _shift_range(f: TestFunction, x_lo: float, x_hi: float) -> range:
    """Integers ``n`` with ``(x + n)`` meeting the support for some ``x`` in ``[x_lo, x_hi]``."""
    a, b = f.support
    return range(math.floor(a - x_hi), math.ceil(b - x_lo) + 1)


def gelfand_transform(f: TestFunction, t: float, x_grid) -> np.ndarray:
    """``f_t(x) = sum_n f(x + n) e^{-i n t}``; only finitely many shifts meet the support."""
    x = np.asarray(x_grid, dtype=float)
    out = np.zeros(x.shape, dtype=complex)
    if x.size == 0:
        return out
    for n in _shift_range(f, float(x.min()), float(x.max())):
        out += f(x + n) * np.exp(-1j * n * t)
    return out


def coefficient(
    q: Potential,
    f: TestFunction,
    k: int,
    t: float,
    x_points: int = DEFAULT_X_POINTS,
    tol: float = DEFAULT_TOL,
) -> complex:
    """``a_k(t) = (f_t, Psi*_{k,t}) / conj(alpha_k(t))`` in the gauge of :func:`normalized_pair`."""
    pair = normalized_pair(q, k, t, x_points, tol)
    if pair.singular:
        raise DegeneratePairError(f"alpha_{k}({t}) vanishes numerically")
    ft = gelfand_transform(f, t, pair.x_grid)
    return complex(inner(ft, pair.psi_star) / np.conj(pair.alpha))


# ---------------------------------------------------------------------------
# Grids
# ---------------------------------------------------------------------------


def default_ladder(h: float, depth: int = LADDER_DEPTH) -> np.ndarray:
    """Excision radii ``h 2^{-j}`` for ``j = 1..depth``."""
    return h * 2.0 ** -np.arange(1, depth + 1, dtype=float)


def _gauss(lo: float, hi: float, order: int) -> tuple[np.ndarray, np.ndarray]:
    x, w = np.polynomial.legendre.leggauss(order)
    half = 0.5 * (hi - lo)
    return lo + half * (x + 1.0), half * w


def _panel_rule(edges: np.ndarray, order: int) -> tuple[np.ndarray, np.ndarray]:
    nodes, weights = zip(*(_gauss(lo, hi, order) for lo, hi in zip(edges[:-1], edges[1:])))
    return np.concatenate(nodes), np.concatenate(weights)


def _graded_edges(lo: float, hi: float, n_panels: int, grade_lo: bool, grade_hi: bool) -> np.ndarray:
    """Uniform panel edges with geometric refinement toward graded ends.

    A graded end at distance ``d`` from its singular centre gets extra edges at
    ``2d, 4d, ...`` up to the first uniform edge.
    """
    edges = set(np.linspace(lo, hi, n_panels + 1).tolist())
    width = (hi - lo) / n_panels
    if grade_lo and lo > 0:
        d = lo
        while 2.0 * d - lo < width:
            edges.add(lo + d)
            d *= 2.0
    if grade_hi and hi < math.pi:
        d = math.pi - hi
        while 2.0 * d - (math.pi - hi) < width:
            edges.add(hi - d)
            d *= 2.0
    return np.array(sorted(edges))


def eval_grid(interval: tuple[float, float], x_points: int) -> tuple[np.ndarray, np.ndarray, range]:
    """Evaluation points ``n + j / x_points`` covering ``interval``.

    Returns ``(x, mask, periods)``: ``x`` has shape ``(len(periods), x_points)``,
    ``mask`` selects the points with ``a <= x < b``.
    """
    a, b = interval
    if not (math.isfinite(a) and math.isfinite(b)) or a >= b:
        raise InvalidInputError(f"invalid evaluation interval [{a}, {b}]")
    periods = range(math.floor(a), math.ceil(b))
    x = np.array(list(periods), dtype=float)[:, None] + np.arange(x_points)[None, :] / x_points
    return x, (x >= a) & (x < b), periods


# ---------------------------------------------------------------------------
# Plan and report types
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ZoneTerm:
    """Bands integrated together on ``0 < |t - center| <= h``.

    ``limit`` terms are evaluated on the excision ladder and extrapolated;
    other terms are integrable and integrated up to the centre.
    """

    center: float
    bands: tuple[int, ...]
    limit: bool
    level: int

    @property
    def zone(self) -> str:
        return "0" if self.center == 0.0 else "pi"


@dataclass(frozen=True)
class ExpansionPlan:
    """Everything :func:`synthesize` needs besides ``q`` and ``f``.

    ``t_grid`` and ``t_weights`` cover the outer region in ``(0, pi)``; the
    mirror ``2 pi - t`` is implied.
    """

    k_set: tuple[int, ...]
    t_grid: np.ndarray
    t_weights: np.ndarray
    index_sets: IndexSets | None
    delta_ladder: np.ndarray
    x_eval: np.ndarray
    eval_mask: np.ndarray
    periods: range
    interval: tuple[float, float]
    h: float
    quad_order: int
    pairing: bool
    zones: tuple[ZoneTerm, ...]
    k_levels: tuple[int, ...]

    def __post_init__(self):
        d = np.asarray(self.delta_ladder, dtype=float)
        if self.zones:
            if d.size < 3 or np.any(np.diff(d) >= 0) or d[-1] <= 0 or d[0] >= self.h:
                raise InvalidInputError("delta ladder must decrease strictly inside (0, h) with >= 3 radii")
        if not self.k_set or max(abs(k) for k in self.k_set) < max(self.k_levels):
            raise InvalidInputError("k_levels exceed the band set")

    @property
    def k_max(self) -> int:
        return max(abs(k) for k in self.k_set)

    @property
    def x_points(self) -> int:
        return self.x_eval.shape[1]

    @property
    def excised(self) -> bool:
        return bool(self.zones)


@dataclass(frozen=True)
class ConvergenceCell:
    k_max: int
    delta: float
    f_rec: np.ndarray
    l2_error: float
    stabilized: bool


@dataclass(frozen=True)
class TermDiagnostic:
    zone: str
    bands: tuple[int, ...]
    relative_change: float
    raw_relative_change: float
    growth_exponent: float
    status: str

    def to_json(self) -> dict:
        return {
            "zone": self.zone,
            "bands": list(self.bands),
            "relative_change": self.relative_change,
            "raw_relative_change": self.raw_relative_change,
            "growth_exponent": self.growth_exponent,
            "status": self.status,
        }


@dataclass
class ReconstructionReport:
    x: np.ndarray
    f_true: np.ndarray
    cells: list[ConvergenceCell]
    pairing_enabled: bool
    diagnostics: list[TermDiagnostic] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)

    @property
    def nonconvergent(self) -> bool:
        return any(d.status == "nonconvergent" for d in self.diagnostics)

    @property
    def final(self) -> ConvergenceCell:
        """Largest truncation level at the extrapolated limit."""
        top = max(c.k_max for c in self.cells)
        return [c for c in self.cells if c.k_max == top and c.delta == 0.0][0]

    @property
    def f_rec(self) -> np.ndarray:
        return self.final.f_rec

    @property
    def l2_error(self) -> float:
        return self.final.l2_error

    def error_by_level(self) -> dict[int, float]:
        return {c.k_max: c.l2_error for c in self.cells if c.delta == 0.0}

    def reconstruction_rows(self) -> list[list[str]]:
        rec = self.f_rec
        err = np.abs(rec - self.f_true)
        return [
            [repr(float(x)), repr(float(f.real)), repr(float(f.imag)), repr(float(r.real)), repr(float(r.imag)),
             repr(float(e))]
            for x, f, r, e in zip(self.x, self.f_true, rec, err)
        ]

    def convergence_rows(self) -> list[list[str]]:
        return [[str(c.k_max), repr(float(c.delta)), repr(float(c.l2_error)), str(int(c.stabilized))]
                for c in self.cells]


RECONSTRUCTION_HEADER = ["x", "re_f", "im_f", "re_frec", "im_frec", "abs_err"]
CONVERGENCE_HEADER = ["k_max", "delta", "l2_error", "stabilized"]


# ---------------------------------------------------------------------------
# Plan construction
# ---------------------------------------------------------------------------


def _band_order(k_max: int) -> tuple[int, ...]:
    """``0, -1, 1, -2, 2, ...``: ascending ``|k|``, then sign."""
    out = [0]
    for k in range(1, k_max + 1):
        out += [-k, k]
    return tuple(out)


def _zones(sets: IndexSets, pairing: bool) -> list[ZoneTerm]:
    zones: list[ZoneTerm] = []
    for center, low, groups, pairs in (
        (0.0, sets.N0, sets.K_groups_0, sets.pair_map_0),
        (math.pi, sets.Npi, sets.K_groups_pi, sets.pair_map_pi),
    ):
        singular = {k for g in groups for k in g}
        for k in low:
            if k not in singular:
                zones.append(ZoneTerm(center, (k,), False, abs(k)))
        for g in list(groups) + list(pairs):
            level = max(abs(k) for k in g)
            if pairing:
                zones.append(ZoneTerm(center, tuple(g), True, level))
            else:
                zones.extend(ZoneTerm(center, (k,), True, level) for k in g)
    return zones


def make_plan(
    q: Potential,
    f: TestFunction,
    k_max: int,
    h: float = DEFAULT_H,
    grid: GridSpec | None = None,
    index_sets: IndexSets | None = None,
    ladder=None,
    interval: tuple[float, float] | None = None,
    pairing: bool = True,
    k_levels=None,
    tol: float = DEFAULT_TOL,
) -> ExpansionPlan:
    """Assemble an :class:`ExpansionPlan`, computing index sets when not supplied.

    Without any essential singularity the plan integrates every band over the
    whole circle; otherwise the outer region excludes ``|t| < h`` and
    ``|t - pi| < h`` and the excluded zones are covered by :class:`ZoneTerm`.
    """
    grid = grid or GridSpec()
    if k_max < 1:
        raise InvalidInputError("k_max must be at least 1")
    if index_sets is None:
        index_sets = build_index_sets(q, h, k_max, tol, grid.x_points)
    elif index_sets.k_max < k_max or index_sets.h != h:
        raise InvalidInputError("index sets were built for a different k_max or h")
    if interval is None:
        a, b = f.support
        interval = (math.floor(a) - 1.0, math.ceil(b) + 1.0)
    x_eval, mask, periods = eval_grid(interval, grid.x_points)
    n_panels = max(1, grid.t_points // (2 * grid.quad_order))
    if index_sets.has_ess:
        edges = _graded_edges(h, math.pi - h, n_panels, True, True)
        zones = tuple(z for z in _zones(index_sets, pairing) if z.level <= k_max)
    else:
        edges = np.linspace(0.0, math.pi, n_panels + 1)
        zones = ()
    t_grid, t_w = _panel_rule(edges, grid.quad_order)
    ladder = default_ladder(h) if ladder is None else np.asarray(ladder, dtype=float)
    if k_levels is None:
        k_levels = sorted({lv for lv in (k_max // 4, k_max // 2, k_max) if lv >= 1})
    return ExpansionPlan(
        _band_order(k_max), t_grid, t_w, index_sets, ladder, x_eval, mask, periods, tuple(interval), h,
        grid.quad_order, pairing, zones, tuple(int(v) for v in k_levels),
    )


def _zone_shells(plan: ExpansionPlan) -> list[tuple[float, float]]:
    """``[delta_1, h]``, then ``[delta_{j+1}, delta_j]``; the core ``(0, delta_J]`` is last."""
    d = plan.delta_ladder
    shells = [(float(d[0]), plan.h)]
    shells += [(float(d[j + 1]), float(d[j])) for j in range(d.size - 1)]
    shells.append((0.0, float(d[-1])))
    return shells


# ---------------------------------------------------------------------------
# Core evaluator
# ---------------------------------------------------------------------------


class _FData:
    """Samples ``f(n + j / N)`` for every shift ``n`` meeting the support."""

    def __init__(self, f: TestFunction, n_points: int):
        a, b = f.support
        self.shifts = np.arange(math.floor(a), math.ceil(b), dtype=float)
        x = np.arange(n_points) / n_points
        self.samples = np.array([f(x + n) for n in self.shifts]).reshape(self.shifts.size, n_points)


def _floquet(b: MonodromyBatch, t: np.ndarray, n: int, sign: int) -> np.ndarray:
    """Floquet solution with multiplier ``e^{i sign t}``, choosing the better-conditioned formula per lane."""
    z = np.exp(1j * sign * t)
    th, ph = b.theta[:, :n], b.phi[:, :n]
    phi_form = b.phi1[:, None] * th + (z - b.theta1)[:, None] * ph
    g_form = b.dtheta1[:, None] * ph + (z - b.dphi1)[:, None] * th
    r_phi = np.sqrt(np.mean(np.abs(phi_form) ** 2, axis=1)) / (np.abs(b.phi1) + np.abs(z - b.theta1) + 1.0)
    r_g = np.sqrt(np.mean(np.abs(g_form) ** 2, axis=1)) / (np.abs(b.dtheta1) + np.abs(z - b.dphi1) + 1.0)
    if np.any(np.maximum(r_phi, r_g) < NULL_TOL):
        i = int(np.argmin(np.maximum(r_phi, r_g)))
        raise DegeneratePairError(f"both Floquet formulas vanish at lambda = {b.lam[i]:.10g}")
    return np.where((r_phi >= r_g)[:, None], phi_form, g_form)


def _accumulate(
    q: Potential,
    lam: np.ndarray,
    t: np.ndarray,
    w: np.ndarray,
    bucket: np.ndarray,
    n_buckets: int,
    fdata: _FData,
    periods: range,
    n_points: int,
    tol: float,
    rng: np.random.Generator | None,
) -> tuple[np.ndarray, np.ndarray]:
    """Sum ``w (1/2pi) [a Psi](+-t)`` over lanes into buckets on the evaluation periods.

    Returns the bucket sums, shape ``(n_buckets, len(periods), n_points)``, and
    ``|alpha|`` per lane.
    """
    m = np.array(list(periods), dtype=float)
    out = np.zeros((n_buckets, m.size, n_points), dtype=complex)
    alpha = np.empty(lam.size)
    for start in range(0, lam.size, _CHUNK):
        sl = slice(start, min(lam.size, start + _CHUNK))
        tl, wl = t[sl], w[sl]
        b = sample_batch(q, lam[sl], n_points, tol)
        up = _floquet(b, tl, n_points, 1)
        um = _floquet(b, tl, n_points, -1)
        if rng is not None:
            up = up * np.exp(1j * rng.uniform(0, _TWO_PI, tl.size))[:, None]
            um = um * np.exp(1j * rng.uniform(0, _TWO_PI, tl.size))[:, None]
        denom = np.einsum("lx,lx->l", up, um) / n_points
        alpha[sl] = np.abs(denom) / np.sqrt(np.mean(np.abs(up) ** 2, axis=1) * np.mean(np.abs(um) ** 2, axis=1))
        a_m = np.einsum("nx,lx->ln", fdata.samples, um) / n_points
        a_p = np.einsum("nx,lx->ln", fdata.samples, up) / n_points
        phase = np.exp(1j * np.outer(tl, fdata.shifts))
        num_p = np.einsum("ln,ln->l", a_m, np.conj(phase))
        num_m = np.einsum("ln,ln->l", a_p, phase)
        scale = wl / (_TWO_PI * denom)
        out_phase = np.exp(1j * np.outer(tl, m))
        cp = (scale * num_p)[:, None] * out_phase
        cm = (scale * num_m)[:, None] * np.conj(out_phase)
        bl = bucket[sl]
        for j in np.unique(bl):
            sel = bl == j
            out[j] += np.einsum("lm,lx->mx", cp[sel], up[sel]) + np.einsum("lm,lx->mx", cm[sel], um[sel])
    return out, alpha


def _solve_band(q: Potential, k: int, t: np.ndarray, tol: float) -> np.ndarray:
    """``lambda_k`` at every node, traced in ascending ``t`` for branch continuity."""
    ts, inv = np.unique(t, return_inverse=True)
    band = trace_band(q, k, ts, near_multiple=True, tol=tol)
    return band.lambda_vals[inv]


# ---------------------------------------------------------------------------
# Synthesis
# ---------------------------------------------------------------------------


def _l2(v: np.ndarray, mask: np.ndarray, n_points: int) -> float:
    return float(np.sqrt(np.sum(np.abs(v[mask]) ** 2) / n_points))


def _growth_exponent(shells: np.ndarray, widths: np.ndarray, mids: np.ndarray, mask, n_points, floor) -> float:
    """Slope ``beta`` of ``|shell integral| / width ~ delta^{-beta}`` over the innermost shells."""
    dens = np.array([_l2(s, mask, n_points) for s in shells]) / widths
    keep = dens > floor
    if keep.sum() < 3:
        return 0.0
    slope = np.polyfit(np.log(mids[keep]), np.log(dens[keep]), 1)[0]
    return float(-slope)


def synthesize(
    q: Potential,
    f: TestFunction,
    plan: ExpansionPlan,
    tol: float = DEFAULT_TOL,
    gauge_seed: int | None = None,
) -> ReconstructionReport:
    """Reconstruct ``f`` on the plan's interval and tabulate errors per ``(k_max, delta)`` cell.

    ``gauge_seed`` rescales every Floquet solution by a random unit-modulus
    factor; the output is invariant up to rounding.
    """
    n_points = plan.x_points
    rng = None if gauge_seed is None else np.random.default_rng(gauge_seed)
    fdata = _FData(f, n_points)
    shells = _zone_shells(plan)
    n_shell = len(shells)
    n_per = len(plan.periods)
    outer = {k: np.zeros((n_per, n_points), complex) for k in plan.k_set}
    zone_parts = [np.zeros((n_shell, n_per, n_points), complex) for _ in plan.zones]
    warnings: list[str] = []
    shell_rules = [_gauss(lo, hi, plan.quad_order) for lo, hi in shells]

    for k in plan.k_set:
        ts, ws, bks = [plan.t_grid], [plan.t_weights], [np.zeros(plan.t_grid.size, dtype=int)]
        keys = [("outer",)]
        for zi, z in enumerate(plan.zones):
            if k not in z.bands:
                continue
            for si, (s, sw) in enumerate(shell_rules):
                if z.limit and si == n_shell - 1:
                    continue
                ts.append(s if z.center == 0.0 else math.pi - s)
                ws.append(sw)
                bks.append(np.full(s.size, len(keys)))
                keys.append(("zone", zi, si))
        t = np.concatenate(ts)
        lam = _solve_band(q, k, t, tol)
        sums, alpha = _accumulate(q, lam, t, np.concatenate(ws), np.concatenate(bks), len(keys), fdata,
                                  plan.periods, n_points, tol, rng)
        outer[k] += sums[0]
        a_min = float(np.min(alpha[: plan.t_grid.size]))
        if plan.excised and a_min < INTERIOR_ALPHA_WARN:
            warnings.append(f"band {k}: |alpha| = {a_min:.3g} inside the outer region")
        for j, key in enumerate(keys[1:], start=1):
            zone_parts[key[1]][key[2]] += sums[j]
        log.debug("band %d done (%d nodes)", k, t.size)

    _check_pairs(q, plan, tol)
    x = plan.x_eval
    f_true = f(x)
    mask = plan.eval_mask
    f_norm = _l2(f_true, mask, n_points)
    floor = 1e-10 * max(f_norm, 1e-300)
    d = plan.delta_ladder
    J = d.size

    # Partial sums P_j = sum of shells 0..j-1 at delta_j, and extrapolated R_j.
    partial, extrap = [], []
    for zi, z in enumerate(plan.zones):
        parts = zone_parts[zi]
        if not z.limit:
            partial.append(None)
            extrap.append(None)
            continue
        P = np.cumsum(parts[:J], axis=0)
        R = np.full_like(P, np.nan)
        for j in range(1, J):
            R[j] = (d[j - 1] * P[j] - d[j] * P[j - 1]) / (d[j - 1] - d[j])
        partial.append(P)
        extrap.append(R)

    def rel(u, v):
        return _l2(u - v, mask, n_points) / max(_l2(u, mask, n_points), floor)

    diagnostics: list[TermDiagnostic] = []
    rc_by_term = {}
    for zi, z in enumerate(plan.zones):
        if not z.limit:
            continue
        P, R = partial[zi], extrap[zi]
        rc = [math.nan] * J
        for j in range(2, J):
            rc[j] = rel(R[j], R[j - 1])
        rc_by_term[zi] = rc
        raw = rel(P[-1], P[-2])
        widths = np.array([d[j] - d[j + 1] for j in range(J - 1)])
        mids = 0.5 * (d[:-1] + d[1:])
        beta = _growth_exponent(zone_parts[zi][J - 4:J], widths[-4:], mids[-4:], mask, n_points, floor / plan.h)
        if max(rc[-1], raw) > NONCONVERGENT_TOL or beta >= GROWTH_LIMIT:
            status = "nonconvergent"
        elif rc[-1] <= STABLE_TOL:
            status = "stabilized"
        else:
            status = "unstable"
        diagnostics.append(TermDiagnostic(z.zone, z.bands, float(rc[-1]), float(raw), beta, status))

    cells: list[ConvergenceCell] = []
    for level in plan.k_levels:
        base = sum((outer[k] for k in plan.k_set if abs(k) <= level), np.zeros((n_per, n_points), complex))
        active = []
        for zi, z in enumerate(plan.zones):
            if z.level > level:
                continue
            if z.limit:
                active.append(zi)
            else:
                base = base + zone_parts[zi].sum(axis=0)
        if not active:
            cells.append(ConvergenceCell(level, 0.0, base, _l2(base - f_true, mask, n_points), True))
            continue
        for j in range(J):
            rec = base + sum(partial[zi][j] for zi in active)
            ok = j >= 2 and all(rc_by_term[zi][j] <= STABLE_TOL for zi in active)
            cells.append(ConvergenceCell(level, float(d[j]), rec, _l2(rec - f_true, mask, n_points), ok))
        rec = base + sum(extrap[zi][J - 1] for zi in active)
        ok = all(rc_by_term[zi][J - 1] <= STABLE_TOL for zi in active)
        cells.append(ConvergenceCell(level, 0.0, rec, _l2(rec - f_true, mask, n_points), ok))

    flat_x = x[mask]
    report = ReconstructionReport(
        flat_x, f_true[mask], [_masked(c, mask) for c in cells], plan.pairing, diagnostics, warnings
    )
    for w in warnings:
        log.warning(w)
    return report


def _masked(c: ConvergenceCell, mask: np.ndarray) -> ConvergenceCell:
    return ConvergenceCell(c.k_max, c.delta, c.f_rec[mask], c.l2_error, c.stabilized)


def _check_pairs(q: Potential, plan: ExpansionPlan, tol: float) -> None:
    """Paired branches must stay distinct at the innermost ladder radius."""
    s = float(plan.delta_ladder[-1]) if plan.excised else None
    if s is None:
        return
    for z in plan.zones:
        if not z.limit or len(z.bands) != 2:
            continue
        t = s if z.center == 0.0 else math.pi - s
        la = locate_band_points(q, z.bands[0], [t], near_multiple=True, tol=tol)[0][0]
        lb = locate_band_points(q, z.bands[1], [t], near_multiple=True, tol=tol)[0][0]
        if abs(la - lb) <= 1e-12 * (1.0 + abs(la)):
            raise InconsistentNumberingError(
                f"bands {z.bands} coincide at t = {t:.3g}; pairing would double count"
            )


# ---------------------------------------------------------------------------
# Paired terms in the t and lambda variables
# ---------------------------------------------------------------------------


def _pair_path(center: float, interval: tuple[float, float]) -> tuple[float, float]:
    s1, s2 = interval
    if not (0.0 < s1 < s2 < math.pi / 2):
        raise InvalidInputError("interval must satisfy 0 < s1 < s2 < pi/2")
    if center == 0.0:
        return s1, s2
    if center == math.pi:
        return math.pi - s2, math.pi - s1
    raise InvalidInputError("center must be 0 or pi")


def _geometric_breaks(s1: float, s2: float) -> np.ndarray:
    n = max(1, math.ceil(math.log2(s2 / s1)))
    return s1 * (s2 / s1) ** (np.arange(n + 1) / n)


def t_domain_term(
    q: Potential,
    f: TestFunction,
    bands: tuple[int, ...],
    interval: tuple[float, float],
    center: float = 0.0,
    x_interval: tuple[float, float] | None = None,
    x_points: int = DEFAULT_X_POINTS,
    order: int = 16,
    tol: float = DEFAULT_TOL,
) -> np.ndarray:
    """``int_{s1 < |t - center| <= s2} sum_k a_k Psi_k dt`` by Gauss-Legendre in ``t``.

    Samples are returned on :func:`eval_grid` of ``x_interval`` (flattened and
    masked), without the ``1 / 2 pi`` synthesis factor.
    """
    x_interval = x_interval or (f.support[0] - 1.0, f.support[1] + 1.0)
    _, mask, periods = eval_grid(x_interval, x_points)
    s1, s2 = interval
    _pair_path(center, interval)
    s, w = _panel_rule(_geometric_breaks(s1, s2), order)
    t = s if center == 0.0 else math.pi - s
    fdata = _FData(f, x_points)
    total = np.zeros((len(periods), x_points), complex)
    for k in bands:
        lam = _solve_band(q, k, t, tol)
        sums, _ = _accumulate(q, lam, t, w * _TWO_PI, np.zeros(t.size, dtype=int), 1, fdata, periods,
                              x_points, tol, None)
        total += sums[0]
    return total[mask]


def _whole_line_moments(b: MonodromyBatch, fdata: _FData, n_points: int) -> tuple[np.ndarray, np.ndarray]:
    """``g = int_R f theta`` and ``h = int_R f phi`` using ``[theta, phi](x + n) = [theta, phi](x) M^n``."""
    th, ph = b.theta[:, :n_points], b.phi[:, :n_points]
    g = np.zeros(b.lam.size, complex)
    hh = np.zeros(b.lam.size, complex)
    for n, fn in zip(fdata.shifts.astype(int), fdata.samples):
        m00, m01, m10, m11 = _monodromy_power(b, n)
        ft = np.mean(fn[None, :] * th, axis=1)
        fp = np.mean(fn[None, :] * ph, axis=1)
        g += ft * m00 + fp * m10
        hh += ft * m01 + fp * m11
    return g, hh


def _monodromy_power(b: MonodromyBatch, n: int):
    """Entries of ``M^n`` per lane (``det M = 1`` gives the inverse in closed form)."""
    if n >= 0:
        base = (b.theta1, b.phi1, b.dtheta1, b.dphi1)
    else:
        base = (b.dphi1, -b.phi1, -b.dtheta1, b.theta1)
    one, zero = np.ones_like(b.theta1), np.zeros_like(b.theta1)
    acc = (one, zero, zero, one)
    for _ in range(abs(n)):
        a0, a1, a2, a3 = acc
        c0, c1, c2, c3 = base
        acc = (a0 * c0 + a1 * c2, a0 * c1 + a1 * c3, a2 * c0 + a3 * c2, a2 * c1 + a3 * c3)
    return acc


def _rows_on_periods(b: MonodromyBatch, periods: range, n_points: int) -> tuple[np.ndarray, np.ndarray]:
    """``theta`` and ``phi`` on the evaluation periods, shape ``(lanes, periods, n_points)``."""
    th, ph = b.theta[:, :n_points], b.phi[:, :n_points]
    T = np.empty((b.lam.size, len(periods), n_points), complex)
    P = np.empty_like(T)
    for i, n in enumerate(periods):
        m00, m01, m10, m11 = _monodromy_power(b, n)
        T[:, i] = th * m00[:, None] + ph * m10[:, None]
        P[:, i] = th * m01[:, None] + ph * m11[:, None]
    return T, P


def lambda_domain_term(
    q: Potential,
    f: TestFunction,
    bands: tuple[int, ...],
    interval: tuple[float, float],
    center: float = 0.0,
    x_interval: tuple[float, float] | None = None,
    x_points: int = DEFAULT_X_POINTS,
    order: int = 16,
    tol: float = DEFAULT_TOL,
) -> np.ndarray:
    """The same paired contribution as :func:`t_domain_term`, integrated in ``lambda``.

    Both signs of ``t - center`` combine into the integrand
    ``E(lambda, x) / p(lambda)`` with
    ``E = (2 phi g + (phi' - theta) h) theta(x) + ((phi' - theta) g - 2 theta' h) phi(x)``,
    ``g = int f theta``, ``h = int f phi`` over the whole line and
    ``p = 2 sin t`` continued along each band image. The path runs through
    band points at geometrically spaced ``t`` with straight segments between.
    """
    x_interval = x_interval or (f.support[0] - 1.0, f.support[1] + 1.0)
    _, mask, periods = eval_grid(x_interval, x_points)
    t_lo, t_hi = _pair_path(center, interval)
    s_breaks = _geometric_breaks(*interval)
    t_breaks = np.sort(s_breaks if center == 0.0 else math.pi - s_breaks)
    xg, wg = np.polynomial.legendre.leggauss(order)
    u = 0.5 * (xg + 1.0)
    fdata = _FData(f, x_points)
    total = np.zeros((len(periods), x_points), complex)
    for k in bands:
        lam_b = _solve_band(q, k, t_breaks, tol)
        p_b = 2.0 * np.sin(t_breaks)
        lam = (lam_b[:-1, None] + (lam_b[1:] - lam_b[:-1])[:, None] * u[None, :]).ravel()
        dl = (0.5 * (lam_b[1:] - lam_b[:-1])[:, None] * wg[None, :]).ravel()
        p_ref = (p_b[:-1, None] + (p_b[1:] - p_b[:-1])[:, None] * u[None, :]).ravel()
        for start in range(0, lam.size, _CHUNK):
            sl = slice(start, min(lam.size, start + _CHUNK))
            b = sample_batch(q, lam[sl], x_points, tol)
            th1, ph1, dth1, dph1 = b.theta1, b.phi1, b.dtheta1, b.dphi1
            fm2 = ph1 * dth1 - (th1 - 1.0) * (dph1 - 1.0)
            fp2 = (th1 + 1.0) * (dph1 + 1.0) - ph1 * dth1
            p = np.sqrt(-fm2 * fp2 + 0j)
            p = np.where(np.abs(p - p_ref[sl]) <= np.abs(p + p_ref[sl]), p, -p)
            if np.any(np.abs(p - p_ref[sl]) > 0.5 * np.abs(p_ref[sl])):
                raise BranchAmbiguityError(f"p(lambda) branch cannot be continued along band {k}")
            g, hh = _whole_line_moments(b, fdata, x_points)
            c_th = 2.0 * ph1 * g + (dph1 - th1) * hh
            c_ph = (dph1 - th1) * g - 2.0 * dth1 * hh
            T, P = _rows_on_periods(b, periods, x_points)
            wts = dl[sl] / p
            total += np.einsum("l,lmx->mx", wts * c_th, T) + np.einsum("l,lmx->mx", wts * c_ph, P)
    return total[mask]
