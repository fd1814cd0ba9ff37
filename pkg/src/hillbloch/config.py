"""Run configuration for the command-line pipeline."""

from __future__ import annotations

import contextlib
import json
import math
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Iterator

from . import discriminant, singularity
from .errors import ConfigError, InvalidInputError
from .monodromy import DEFAULT_TOL
from .potential import GridSpec, Potential, TestFunction

__all__ = ["RunConfig", "load_config", "tolerance_scope"]

_SECTIONS = ("discriminant", "bands", "singularities", "expand", "verify")

_DEFAULT_OPTIONS: dict[str, dict[str, Any]] = {
    "discriminant": {"window": [0.0, 100.0, 0.0, 0.0], "n_re": 200, "n_im": 1},
    "bands": {"t_points": 64, "alpha": True},
    "singularities": {"region": [-100.0, 100.0, -20.0, 20.0], "radius": None},
    "expand": {"interval": None, "pairing": True, "k_levels": None},
    "verify": {"cases": 20},
}


@dataclass(frozen=True)
class RunConfig:
    potential: dict = field(default_factory=lambda: {"coeffs": []})
    x_points: int = 512
    t_points: int = 512
    quad_order: int = 8
    tol: float = DEFAULT_TOL
    crit_tol: float = discriminant.CRIT_REL
    gm_tol: float = singularity.GM_REL
    fit_slack: float = singularity.FIT_SLACK
    h: float = singularity.DEFAULT_H
    k_max: int = singularity.DEFAULT_K_MAX
    delta_ladder: list | None = None
    test_function: dict = field(default_factory=lambda: {"kind": "spline", "support": [0.0, 3.0]})
    out: str = "out"
    seed: int = 0
    options: dict = field(default_factory=dict)

    def __post_init__(self):
        for name in ("tol", "crit_tol", "gm_tol", "fit_slack"):
            v = getattr(self, name)
            if not (isinstance(v, (int, float)) and math.isfinite(v) and v > 0):
                raise ConfigError(f"{name} must be a positive number, got {v!r}")
        if not (0.0 < self.h < 1.0 / 32.0):
            raise ConfigError("h must satisfy 0 < h < 1/32")
        if not isinstance(self.k_max, int) or self.k_max < 0:
            raise ConfigError("k_max must be a non-negative integer")
        if self.delta_ladder is not None:
            d = [float(v) for v in self.delta_ladder]
            if len(d) < 3 or any(b >= a for a, b in zip(d, d[1:])) or d[-1] <= 0 or d[0] >= self.h:
                raise ConfigError("delta_ladder must decrease strictly inside (0, h) with at least 3 radii")
        try:
            self.grid
            self.make_potential()
            self.make_test_function()
        except InvalidInputError as exc:
            raise ConfigError(str(exc)) from exc
        unknown = set(self.options) - set(_SECTIONS)
        if unknown:
            raise ConfigError(f"unknown option sections: {sorted(unknown)}")

    @property
    def grid(self) -> GridSpec:
        return GridSpec(self.x_points, self.t_points, self.quad_order)

    def make_potential(self) -> Potential:
        return Potential.from_json(self.potential)

    def make_test_function(self) -> TestFunction:
        return TestFunction.from_json(self.test_function)

    def section(self, name: str) -> dict[str, Any]:
        """Command options with defaults filled in."""
        merged = dict(_DEFAULT_OPTIONS[name])
        merged.update(self.options.get(name, {}))
        return merged

    def with_overrides(self, **kw) -> "RunConfig":
        kw = {k: v for k, v in kw.items() if v is not None}
        return replace(self, **kw) if kw else self

    def effective(self) -> dict:
        """Every field resolved, option sections included, suitable for re-running."""
        obj = asdict(self)
        obj["options"] = {name: self.section(name) for name in _SECTIONS}
        return obj

    def to_json(self) -> str:
        return json.dumps(self.effective(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, obj: dict) -> "RunConfig":
        if not isinstance(obj, dict):
            raise ConfigError("configuration must be a JSON object")
        obj = dict(obj)
        grids = obj.pop("grids", {}) or {}
        tols = obj.pop("tolerances", {}) or {}
        obj.update(grids)
        obj.update(tols)
        options = dict(obj.pop("options", {}) or {})
        for name in _SECTIONS:
            if name in obj:
                options[name] = obj.pop(name)
        names = {f.name for f in fields(cls)}
        unknown = set(obj) - names
        if unknown:
            raise ConfigError(f"unknown configuration keys: {sorted(unknown)}")
        try:
            return cls(**obj, options=options)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc


def load_config(path: str | Path | None) -> RunConfig:
    """Read a JSON configuration; ``None`` gives the defaults."""
    if path is None:
        return RunConfig()
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"malformed JSON in {path}: {exc}") from exc
    return RunConfig.from_dict(obj)


@contextlib.contextmanager
def tolerance_scope(cfg: RunConfig) -> Iterator[None]:
    """Apply the configured relative thresholds for the duration of a run."""
    saved = (discriminant.CRIT_REL, singularity.GM_REL)
    discriminant.CRIT_REL, singularity.GM_REL = cfg.crit_tol, cfg.gm_tol
    try:
        yield
    finally:
        discriminant.CRIT_REL, singularity.GM_REL = saved
