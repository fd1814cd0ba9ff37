"""Command-line pipeline: discriminant, bands, singularities, expand, verify.

Exit codes: 0 success, 1 failed invariant checks (``verify``), 2 configuration
or input errors, 3 numerical failures, 4 nonconvergent expansion limits.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .bloch import alpha_via_identity, floquet_from_batch, pair_from_samples
from .config import RunConfig, load_config, tolerance_scope
from .discriminant import (
    BAND_CSV_HEADER,
    discriminant_batch,
    find_multiple_points,
    locate_band_points,
    trace_band,
)
from .errors import (
    ConfigError,
    DegeneratePairError,
    FormulaInapplicableError,
    HillError,
    InvalidInputError,
    KMaxTooSmallError,
)
from .expansion import CONVERGENCE_HEADER, RECONSTRUCTION_HEADER, make_plan, synthesize
from .monodromy import integrate_fundamental, sample_batch
from .potential import GridSpec
from .singularity import build_index_sets, classify_point, report_json

__all__ = ["main", "EXIT_OK", "EXIT_VERIFY", "EXIT_CONFIG", "EXIT_NUMERIC", "EXIT_NONCONVERGENT"]

EXIT_OK = 0
EXIT_VERIFY = 1
EXIT_CONFIG = 2
EXIT_NUMERIC = 3
EXIT_NONCONVERGENT = 4

log = logging.getLogger("hillbloch")


class _JsonLineFormatter(logging.Formatter):
    """One JSON object per record, without timestamps so repeated runs produce the same log."""

    def format(self, record: logging.LogRecord) -> str:
        return json.dumps({"level": record.levelname, "logger": record.name, "message": record.getMessage()},
                          sort_keys=True)


def _write_csv(path: Path, header: Sequence[str], rows) -> None:
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _r(v: float) -> str:
    return repr(float(v))


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def cmd_discriminant(cfg: RunConfig, out: Path) -> int:
    opt = cfg.section("discriminant")
    x0, x1, y0, y1 = (float(v) for v in opt["window"])
    n_re, n_im = int(opt["n_re"]), int(opt["n_im"])
    if n_re < 1 or n_im < 1 or x1 < x0 or y1 < y0:
        raise ConfigError("discriminant window or grid size is invalid")
    re = np.linspace(x0, x1, n_re)
    im = np.linspace(y0, y1, n_im) if n_im > 1 else np.array([y0])
    lam = (re[None, :] + 1j * im[:, None]).ravel()
    q = cfg.make_potential()
    F, dF = discriminant_batch(q, lam, cfg.tol)
    p = np.sqrt(4.0 - F * F + 0j)
    rows = [[_r(l.real), _r(l.imag), _r(a.real), _r(a.imag), _r(b.real), _r(b.imag), _r(c.real), _r(c.imag)]
            for l, a, b, c in zip(lam, F, dF, p)]
    _write_csv(out / "discriminant.csv",
               ["re_lambda", "im_lambda", "re_F", "im_F", "re_dF", "im_dF", "re_p", "im_p"], rows)
    log.info("discriminant: %d rows", len(rows))
    return EXIT_OK


def _band_alpha(q, lam: np.ndarray, t: np.ndarray, dF: np.ndarray, k: int, cfg: RunConfig) -> np.ndarray:
    b = sample_batch(q, lam, cfg.x_points, cfg.tol)
    alpha = np.full(lam.shape, np.nan + 0j)
    for i in range(lam.size):
        try:
            alpha[i] = pair_from_samples(b, k, float(t[i]), dF[i], cfg.x_points, i).alpha
        except DegeneratePairError:
            log.warning("band %d: degenerate pair at t = %.6g", k, t[i])
    return alpha


def cmd_bands(cfg: RunConfig, out: Path) -> int:
    opt = cfg.section("bands")
    q = cfg.make_potential()
    t = GridSpec(cfg.x_points, int(opt["t_points"]), cfg.quad_order).t_nodes()
    bands_dir = out / "bands"
    bands_dir.mkdir(parents=True, exist_ok=True)
    for k in range(-cfg.k_max, cfg.k_max + 1):
        band = trace_band(q, k, t, near_multiple=True, tol=cfg.tol)
        if opt["alpha"]:
            band.alpha_vals = _band_alpha(q, band.lambda_vals, t, band.dF_vals, k, cfg)
        _write_csv(bands_dir / f"band_{k:+d}.csv", BAND_CSV_HEADER, band.csv_rows())
        near = sum(f != "simple" for f in band.flags)
        if near:
            log.warning("band %d: %d near-multiple nodes", k, near)
    log.info("bands: %d files", 2 * cfg.k_max + 1)
    return EXIT_OK


def cmd_singularities(cfg: RunConfig, out: Path) -> int:
    opt = cfg.section("singularities")
    q = cfg.make_potential()
    region = tuple(float(v) for v in opt["region"])
    points = find_multiple_points(q, region, cfg.tol)
    radius = opt.get("radius")
    records = []
    for cp in points:
        if radius is not None and abs(cp.lambda0) > float(radius):
            continue
        if cp.t0 is None:
            log.info("critical point %s off the spectrum", f"{cp.lambda0:.10g}")
            continue
        rec = classify_point(q, cp, cfg.tol, cfg.x_points, cfg.fit_slack)
        log.info("lambda0 = %s: %s (beta = %.4g)", f"{rec.lambda0:.10g}", rec.classification, rec.alpha_exponent)
        records.append(rec)
    sets = build_index_sets(q, cfg.h, max(cfg.k_max, 1), cfg.tol, cfg.x_points, cfg.fit_slack)
    (out / "singularities.json").write_text(report_json(records, sets) + "\n")
    log.info("singularities: %d records", len(records))
    return EXIT_OK


def cmd_expand(cfg: RunConfig, out: Path) -> int:
    opt = cfg.section("expand")
    q = cfg.make_potential()
    f = cfg.make_test_function()
    interval = None if opt["interval"] is None else tuple(float(v) for v in opt["interval"])
    plan = make_plan(
        q, f, cfg.k_max, cfg.h, cfg.grid, None, cfg.delta_ladder, interval, bool(opt["pairing"]),
        opt["k_levels"], cfg.tol,
    )
    report = synthesize(q, f, plan, cfg.tol)
    _write_csv(out / "reconstruction.csv", RECONSTRUCTION_HEADER, report.reconstruction_rows())
    _write_csv(out / "convergence.csv", CONVERGENCE_HEADER, report.convergence_rows())
    _write_json(out / "expansion.json", {
        "pairing_enabled": report.pairing_enabled,
        "l2_error": report.l2_error,
        "nonconvergent": report.nonconvergent,
        "diagnostics": [d.to_json() for d in report.diagnostics],
        "warnings": report.warnings,
        "index_sets": plan.index_sets.to_json() if plan.index_sets is not None else None,
    })
    for d in report.diagnostics:
        if d.status != "stabilized":
            log.warning("zone %s bands %s: %s (relative change %.3g, growth exponent %.3g)",
                        d.zone, list(d.bands), d.status, d.relative_change, d.growth_exponent)
    log.info("expand: l2 error %.6g", report.l2_error)
    if report.nonconvergent:
        log.error("nonconvergent limit over the excision ladder")
        return EXIT_NONCONVERGENT
    return EXIT_OK


def _random_band_points(q, rng: np.random.Generator, n: int, k_max: int, tol: float):
    ks = rng.integers(-k_max, k_max + 1, size=n)
    ts = rng.uniform(0.2, math.pi - 0.2, size=n)
    ts = np.where(rng.random(n) < 0.5, ts, 2.0 * math.pi - ts)
    out = []
    for k, t in zip(ks, ts):
        lam, dF = locate_band_points(q, int(k), [t], tol=tol)
        out.append((int(k), float(t), complex(lam[0]), complex(dF[0])))
    return out


def cmd_verify(cfg: RunConfig, out: Path) -> int:
    """Randomized invariant checks on the configured potential."""
    n = int(cfg.section("verify")["cases"])
    rng = np.random.default_rng(cfg.seed)
    q = cfg.make_potential()
    k_max = max(1, min(cfg.k_max, 8))
    checks: dict[str, dict] = {}

    def record(name: str, errors: list[float], limit: float) -> None:
        worst = float(max(errors)) if errors else 0.0
        checks[name] = {"max_error": worst, "limit": limit, "cases": len(errors), "passed": bool(worst <= limit)}

    radius = 200.0 * np.sqrt(rng.random(n))
    angle = rng.uniform(0, 2 * math.pi, n)
    record("wronskian", [integrate_fundamental(q, r * np.exp(1j * a), cfg.tol).wronskian_defect
                         for r, a in zip(radius, angle)], 1e-9)

    pts = _random_band_points(q, rng, n, k_max, cfg.tol)
    lam = np.array([p[2] for p in pts])
    F, _ = discriminant_batch(q, lam, cfg.tol)
    res = [abs(Fi - 2 * math.cos(p[1])) / (1.0 + abs(p[2])) for Fi, p in zip(F, pts)]
    record("eigenvalue_residual", res, 1e-8)

    b = sample_batch(q, lam, cfg.x_points, cfg.tol)
    ident, gauge = [], []
    for i, (k, t, lm, dF) in enumerate(pts):
        phi_p, _ = floquet_from_batch(b, t, cfg.x_points, 1)
        phi_m, _ = floquet_from_batch(b, t, cfg.x_points, -1)
        quad = np.mean(phi_p[i] * phi_m[i])
        exact = -b.phi1[i] * dF
        if abs(exact) > 1e-8 * np.sqrt(np.mean(np.abs(phi_p[i]) ** 2) * np.mean(np.abs(phi_m[i]) ** 2)):
            ident.append(float(abs(quad - exact) / abs(exact)))
        if t < math.pi:
            try:
                a_quad = pair_from_samples(b, k, t, dF, cfg.x_points, i).alpha
                a_id = alpha_via_identity(q, k, t, cfg.x_points, cfg.tol)
                gauge.append(float(abs(a_quad - a_id) / max(abs(a_id), 1e-300)))
            except (FormulaInapplicableError, DegeneratePairError):
                pass
    record("inner_product_identity", ident, 1e-6)
    record("alpha_identity", gauge, 1e-6)
    _write_json(out / "verify.json", {"seed": cfg.seed, "checks": checks})
    failed = [name for name, c in checks.items() if not c["passed"]]
    for name in failed:
        log.error("invariant %s violated: %.3g > %.3g", name, checks[name]["max_error"], checks[name]["limit"])
    return EXIT_VERIFY if failed else EXIT_OK


COMMANDS: dict[str, Callable[[RunConfig, Path], int]] = {
    "discriminant": cmd_discriminant,
    "bands": cmd_bands,
    "singularities": cmd_singularities,
    "expand": cmd_expand,
    "verify": cmd_verify,
}


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hillbloch", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn in COMMANDS.items():
        p = sub.add_parser(name, help=(fn.__doc__ or name).splitlines()[0])
        p.add_argument("--config", type=Path, default=None, help="JSON run configuration")
        p.add_argument("--out", type=Path, default=None, help="output directory")
        p.add_argument("--k-max", type=int, default=None)
        p.add_argument("--h", type=float, default=None)
        p.add_argument("--no-pairing", action="store_true", help="integrate every band separately")
        p.add_argument("--seed", type=int, default=None, help="seed for randomized checks")
    return parser


def _configure_logging(out: Path) -> logging.Handler:
    handler = logging.FileHandler(out / "run.log", mode="w")
    handler.setFormatter(_JsonLineFormatter())
    log.addHandler(handler)
    log.setLevel(logging.INFO)
    return handler


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        cfg = cfg.with_overrides(
            k_max=args.k_max, h=args.h, seed=args.seed, out=None if args.out is None else str(args.out)
        )
        if args.no_pairing:
            opts = dict(cfg.options)
            opts["expand"] = {**opts.get("expand", {}), "pairing": False}
            cfg = cfg.with_overrides(options=opts)
    except (ConfigError, InvalidInputError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "effective_config.json").write_text(cfg.to_json() + "\n")
    handler = _configure_logging(out)
    try:
        with tolerance_scope(cfg):
            code = COMMANDS[args.command](cfg, out)
    except (ConfigError, InvalidInputError, KMaxTooSmallError) as exc:
        log.error("input error: %s", exc)
        print(f"input error: {exc}", file=sys.stderr)
        code = EXIT_CONFIG
    except HillError as exc:
        log.error("%s: %s", type(exc).__name__, exc)
        print(f"numerical failure ({type(exc).__name__}): {exc}", file=sys.stderr)
        code = EXIT_NUMERIC
    finally:
        log.removeHandler(handler)
        handler.close()
    return code


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
