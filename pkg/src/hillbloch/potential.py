"""Periodic complex potentials, compactly supported test functions and grids.

Potentials are finite Fourier series ``q(x) = sum_m q_m exp(i 2 pi m x)``.
A nonzero mean ``q_0`` is removed from the series and kept as ``mean_shift``;
every spectral value reported by the package already includes it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Any, Mapping

import numpy as np
from scipy.interpolate import BSpline

from .errors import InvalidInputError

__all__ = [
    "Potential",
    "TestFunction",
    "GridSpec",
    "make_fourier_potential",
    "eval_potential",
    "make_test_function",
    "periodic_grid",
]


@dataclass(frozen=True)
class Potential:
    """Mean-free trigonometric polynomial with an optional spectral shift.

    ``modes`` holds ``(m, q_m)`` pairs sorted by frequency, zero amplitudes and
    ``m = 0`` excluded.
    """

    modes: tuple[tuple[int, complex], ...] = ()
    mean_shift: complex = 0j

    @property
    def fourier_coeffs(self) -> dict[int, complex]:
        return dict(self.modes)

    @property
    def max_frequency(self) -> int:
        return max((abs(m) for m, _ in self.modes), default=0)

    @cached_property
    def _freqs(self) -> np.ndarray:
        return np.array([m for m, _ in self.modes], dtype=float)

    @cached_property
    def _amps(self) -> np.ndarray:
        return np.array([c for _, c in self.modes], dtype=complex)

    @property
    def is_zero(self) -> bool:
        return not self.modes

    @property
    def is_real(self) -> bool:
        """True when ``q_{-m} = conj(q_m)`` for every stored mode."""
        coeffs = self.fourier_coeffs
        return all(
            abs(coeffs.get(-m, 0j) - np.conj(c)) <= 1e-14 * (1 + abs(c)) for m, c in self.modes
        ) and abs(complex(self.mean_shift).imag) <= 1e-14

    @property
    def sup_bound(self) -> float:
        """Upper bound for ``max |q(x)|`` from the triangle inequality."""
        return float(np.sum(np.abs(self._amps)))

    def __call__(self, x: Any) -> np.ndarray:
        """Evaluate the mean-free part ``q(x) - q_0`` (broadcasts over ``x``)."""
        x = np.asarray(x, dtype=float)
        if not self.modes:
            return np.zeros(x.shape, dtype=complex)
        # Reduce to [0, 1) first so that periodicity holds to rounding.
        xr = x - np.floor(x)
        phase = np.exp(2j * np.pi * np.multiply.outer(xr, self._freqs))
        return phase @ self._amps

    def to_json(self) -> dict:
        coeffs = [[m, float(c.real), float(c.imag)] for m, c in self.modes]
        if self.mean_shift != 0:
            s = complex(self.mean_shift)
            coeffs.insert(0, [0, s.real, s.imag])
        return {"coeffs": coeffs}

    @classmethod
    def from_json(cls, obj: Mapping[str, Any]) -> "Potential":
        try:
            entries = obj["coeffs"]
            coeffs = {}
            for entry in entries:
                m, re, im = entry
                if int(m) != m:
                    raise InvalidInputError(f"frequency {m!r} is not an integer")
                coeffs[int(m)] = coeffs.get(int(m), 0j) + complex(float(re), float(im))
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, InvalidInputError):
                raise
            raise InvalidInputError(f"malformed potential JSON: {exc}") from exc
        return make_fourier_potential(coeffs)


def make_fourier_potential(coeffs: Mapping[int, complex]) -> Potential:
    """Build a :class:`Potential` from a frequency-to-amplitude map.

    The ``m = 0`` entry becomes ``mean_shift``; zero amplitudes are dropped.
    """
    modes = []
    shift = 0j
    for m, c in coeffs.items():
        c = complex(c)
        if not (math.isfinite(c.real) and math.isfinite(c.imag)):
            raise InvalidInputError(f"non-finite amplitude for frequency {m}")
        if int(m) != m:
            raise InvalidInputError(f"frequency {m!r} is not an integer")
        if int(m) == 0:
            shift += c
        elif c != 0:
            modes.append((int(m), c))
    modes.sort(key=lambda mc: mc[0])
    return Potential(tuple(modes), shift)


def eval_potential(q: Potential, x: Any) -> complex | np.ndarray:
    """Value of the full potential, mean included, at ``x``."""
    val = q(x) + q.mean_shift
    return complex(val) if np.ndim(val) == 0 else val


_CARDINAL_CUBIC = BSpline.basis_element([0.0, 1.0, 2.0, 3.0, 4.0], extrapolate=False)


@dataclass(frozen=True)
class TestFunction:
    """Continuous function vanishing outside ``support = (a, b)``."""

    __test__ = False  # keep pytest from collecting this class

    kind: str
    support: tuple[float, float]
    params: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        a, b = self.support
        if not (math.isfinite(a) and math.isfinite(b)) or a >= b:
            raise InvalidInputError(f"degenerate support [{a}, {b}]")
        if self.kind not in ("bump", "spline", "user-sampled"):
            raise InvalidInputError(f"unknown test function kind {self.kind!r}")
        if self.kind == "user-sampled":
            xs, ys = self._samples
            if xs.size < 2 or np.any(np.diff(xs) <= 0):
                raise InvalidInputError("sample abscissae must be strictly increasing")
            if abs(xs[0] - a) > 1e-12 or abs(xs[-1] - b) > 1e-12:
                raise InvalidInputError("samples must start at a and end at b")
            if ys[0] != 0 or ys[-1] != 0:
                raise InvalidInputError("sampled values must vanish at the support ends")

    @property
    def amplitude(self) -> complex:
        return complex(self.params.get("amplitude", 1.0))

    @cached_property
    def _samples(self) -> tuple[np.ndarray, np.ndarray]:
        p = self.params
        xs = np.asarray(p.get("x", []), dtype=float)
        ys = np.asarray(p.get("re", np.zeros_like(xs)), dtype=float) + 1j * np.asarray(
            p.get("im", np.zeros_like(xs)), dtype=float
        )
        return xs, ys

    def __call__(self, x: Any) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        a, b = self.support
        inside = (x > a) & (x < b)
        out = np.zeros(x.shape, dtype=complex)
        xi = x[inside]
        if self.kind == "bump":
            u = (2.0 * xi - a - b) / (b - a)
            out[inside] = self.amplitude * np.exp(-1.0 / (1.0 - u * u))
        elif self.kind == "spline":
            out[inside] = self.amplitude * _CARDINAL_CUBIC(4.0 * (xi - a) / (b - a))
        else:
            xs, ys = self._samples
            out[inside] = np.interp(xi, xs, ys.real) + 1j * np.interp(xi, xs, ys.imag)
        return out

    @property
    def breakpoints(self) -> np.ndarray:
        """Points where the function may lose smoothness."""
        a, b = self.support
        if self.kind == "spline":
            return a + (b - a) * np.arange(5) / 4.0
        if self.kind == "user-sampled":
            return self._samples[0]
        return np.array([a, b])

    def fourier_transform(self, xi: Any) -> np.ndarray:
        """``integral f(x) exp(-i xi x) dx``; closed form for splines, quadrature otherwise."""
        xi = np.asarray(xi, dtype=float)
        a, b = self.support
        if self.kind == "spline":
            s = 4.0 / (b - a)
            w = xi / s
            half = w / 2.0
            sinc = np.sinc(half / np.pi)  # sin(w/2)/(w/2)
            return self.amplitude / s * np.exp(-1j * xi * a) * np.exp(-2j * w) * sinc**4
        nodes, weights = np.polynomial.legendre.leggauss(16)
        brk = self.breakpoints
        if self.kind == "bump":
            brk = np.linspace(a, b, 65)
        lo, hi = brk[:-1], brk[1:]
        xs = (0.5 * (hi - lo)[:, None] * (nodes + 1.0) + lo[:, None]).ravel()
        ws = (0.5 * (hi - lo)[:, None] * weights).ravel()
        vals = self(xs) * ws
        return np.exp(-1j * np.multiply.outer(xi, xs)) @ vals

    def to_json(self) -> dict:
        return {"kind": self.kind, "support": list(self.support), "params": dict(self.params)}

    @classmethod
    def from_json(cls, obj: Mapping[str, Any]) -> "TestFunction":
        try:
            return make_test_function(obj["kind"], obj["support"], obj.get("params", {}))
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, InvalidInputError):
                raise
            raise InvalidInputError(f"malformed test function JSON: {exc}") from exc


def make_test_function(
    kind: str, support: tuple[float, float] | list[float], params: Mapping[str, Any] | None = None
) -> TestFunction:
    """Create a bump, cubic B-spline or sampled piecewise-linear test function."""
    a, b = (float(v) for v in support)
    return TestFunction(kind, (a, b), dict(params or {}))


@dataclass(frozen=True)
class GridSpec:
    """Sample counts for the x and quasimomentum grids."""

    x_points: int = 512
    t_points: int = 512
    quad_order: int = 8

    def __post_init__(self):
        if min(self.x_points, self.t_points, self.quad_order) < 2:
            raise InvalidInputError("all grid counts must be at least 2")

    def t_nodes(self) -> np.ndarray:
        """Uniform nodes on (0, 2 pi) offset by half a step, so 0 and pi are never hit."""
        n = self.t_points
        return 2.0 * np.pi * (np.arange(n) + 0.5) / n


def periodic_grid(n: int) -> np.ndarray:
    """Points ``j / n`` for ``j = 0..n-1``; the trapezoid rule on them is spectrally accurate for periodic integrands."""
    return np.arange(n) / n

