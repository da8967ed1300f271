"""Utility and probability-distortion functions of a CPT preference.

Utilities act on gains or losses measured as nonnegative magnitudes; the
power family ``x**g / g`` is the workhorse.  Distortions map ``[0, 1]`` onto
itself and enter the objective through their derivative evaluated at a
decumulative probability.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Mapping

import numpy as np
from scipy.interpolate import PchipInterpolator
from scipy.optimize import brentq

from .errors import ConfigError, DomainError

#: Below this magnitude marginal utility is treated as divergent.
INADA_FLOOR = 1e-300


def _as_array(x) -> np.ndarray:
    return np.asarray(x, dtype=float)


def _scalar_out(x, out: np.ndarray):
    return float(out) if np.ndim(x) == 0 else out


@dataclass(frozen=True)
class UtilityFn:
    """Increasing concave utility on the half line.

    ``kind`` is ``"power"`` (value ``scale * x**exponent / exponent``) or
    ``"custom"`` (monotone cubic through ``knots``; linear continuation past
    the last knot using its end slope).
    """

    kind: str
    exponent: float = 0.5
    scale: float = 1.0
    knots: tuple[tuple[float, float], ...] = ()
    _interp: Any = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.kind == "power":
            if not 0.0 < self.exponent < 1.0:
                raise DomainError(f"power exponent must lie in (0, 1), got {self.exponent}")
            if not self.scale > 0.0:
                raise DomainError(f"power scale must be positive, got {self.scale}")
        elif self.kind == "custom":
            if len(self.knots) < 2:
                raise DomainError("custom utility needs at least two knots")
            xs = np.array([k[0] for k in self.knots], dtype=float)
            ys = np.array([k[1] for k in self.knots], dtype=float)
            if xs[0] != 0.0 or np.any(np.diff(xs) <= 0):
                raise DomainError("custom utility knots must start at x=0 and increase strictly")
            object.__setattr__(self, "_interp", PchipInterpolator(xs, ys, extrapolate=False))
        else:
            raise DomainError(f"unknown utility kind {self.kind!r}")

    # constructors -------------------------------------------------------
    @classmethod
    def power(cls, exponent: float, scale: float = 1.0) -> "UtilityFn":
        return cls("power", exponent=float(exponent), scale=float(scale))

    @classmethod
    def custom(cls, knots) -> "UtilityFn":
        return cls("custom", knots=tuple((float(a), float(b)) for a, b in knots))

    @classmethod
    def zero(cls) -> "UtilityFn":
        """The identically-zero utility, handy for switching a term off."""
        return cls.custom([(0.0, 0.0), (1.0, 0.0)])

    @property
    def is_zero(self) -> bool:
        return self.kind == "custom" and all(k[1] == 0.0 for k in self.knots)

    # evaluation ---------------------------------------------------------
    def _custom_parts(self, x: np.ndarray, order: int) -> np.ndarray:
        xs_last, ys_last = self.knots[-1]
        slope = float(self._interp(xs_last, 1))
        inside = x <= xs_last
        out = np.empty_like(x)
        xi = x[inside]
        out[inside] = self._interp(xi, order) if xi.size else xi
        xo = x[~inside] - xs_last
        if order == 0:
            out[~inside] = ys_last + slope * xo
        elif order == 1:
            out[~inside] = slope
        else:
            out[~inside] = 0.0
        return out

    def value(self, x):
        xa = _as_array(x)
        if np.any(xa < 0) or np.any(np.isnan(xa)):
            raise DomainError("utility argument must be nonnegative")
        if self.kind == "power":
            out = self.scale * xa**self.exponent / self.exponent
        else:
            out = self._custom_parts(xa, 0)
        return _scalar_out(x, out)

    def deriv(self, x, order: int = 1):
        if order not in (1, 2):
            raise DomainError("derivative order must be 1 or 2")
        xa = _as_array(x)
        if np.any(~(xa >= INADA_FLOOR)):
            raise DomainError("utility derivative requires x > 0")
        if self.kind == "power":
            g = self.exponent
            out = self.scale * xa ** (g - 1.0) if order == 1 else self.scale * (g - 1.0) * xa ** (g - 2.0)
        else:
            out = self._custom_parts(xa, order)
        return _scalar_out(x, out)

    def deriv_inverse(self, y):
        """Solve ``f'(x) = y`` for ``x > 0``."""
        ya = _as_array(y)
        if np.any(~(ya > 0)):
            raise DomainError("marginal utility level must be positive")
        if self.kind == "power":
            out = (ya / self.scale) ** (1.0 / (self.exponent - 1.0))
            return _scalar_out(y, out)
        flat = ya.ravel()
        res = np.empty_like(flat)
        hi_x = self.knots[-1][0]
        for k, target in enumerate(flat):
            fn = lambda s: float(self.deriv(s)) - target
            lo, hi = max(self.knots[0][0], 1e-12), hi_x
            try:
                res[k] = brentq(fn, lo, hi, xtol=1e-15, rtol=1e-13)
            except ValueError as exc:
                raise DomainError(f"no x on the knot range with f'(x) = {target}") from exc
        return _scalar_out(y, res.reshape(ya.shape))


@dataclass(frozen=True)
class DistortionFn:
    """Increasing map of ``[0, 1]`` onto itself.

    ``lopes`` is ``nu * p**(a+1) + (1-nu) * (1 - (1-p)**(b+1))``; ``tabulated``
    is a monotone cubic through ``knots``.
    """

    kind: str
    nu: float = 0.5
    a: float = 0.0
    b: float = 0.0
    knots: tuple[tuple[float, float], ...] = ()
    _interp: Any = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.kind == "lopes":
            if not 0.0 <= self.nu <= 1.0 or self.a < 0 or self.b < 0:
                raise DomainError(f"lopes parameters out of range: nu={self.nu}, a={self.a}, b={self.b}")
        elif self.kind == "tabulated":
            ps = np.array([k[0] for k in self.knots], dtype=float)
            vs = np.array([k[1] for k in self.knots], dtype=float)
            if ps.size < 2 or ps[0] != 0.0 or ps[-1] != 1.0 or np.any(np.diff(ps) <= 0):
                raise DomainError("tabulated distortion knots must span 0..1 in increasing order")
            object.__setattr__(self, "_interp", PchipInterpolator(ps, vs, extrapolate=False))
        elif self.kind != "identity":
            raise DomainError(f"unknown distortion kind {self.kind!r}")

    @classmethod
    def identity(cls) -> "DistortionFn":
        return cls("identity")

    @classmethod
    def lopes(cls, nu: float, a: float, b: float) -> "DistortionFn":
        return cls("lopes", nu=float(nu), a=float(a), b=float(b))

    @classmethod
    def tabulated(cls, knots) -> "DistortionFn":
        return cls("tabulated", knots=tuple((float(p), float(v)) for p, v in knots))

    @property
    def is_identity(self) -> bool:
        return self.kind == "identity"

    def _check(self, p) -> np.ndarray:
        pa = _as_array(p)
        if np.any(~((pa >= 0.0) & (pa <= 1.0))):
            raise DomainError("distortion argument must lie in [0, 1]")
        return pa

    def value(self, p):
        pa = self._check(p)
        if self.kind == "identity":
            out = pa.copy()
        elif self.kind == "lopes":
            out = self.nu * pa ** (self.a + 1.0) + (1.0 - self.nu) * (1.0 - (1.0 - pa) ** (self.b + 1.0))
            out = np.where(pa == 1.0, 1.0, np.where(pa == 0.0, 0.0, out))
        else:
            out = self._interp(pa)
        return _scalar_out(p, out)

    def deriv(self, p):
        pa = self._check(p)
        if self.kind == "identity":
            out = np.ones_like(pa)
        elif self.kind == "lopes":
            out = (self.nu * (self.a + 1.0) * pa**self.a
                   + (1.0 - self.nu) * (self.b + 1.0) * (1.0 - pa) ** self.b)
        else:
            out = self._interp(pa, 1)
        return _scalar_out(p, out)


def utility_eval(f: UtilityFn, x):
    return f.value(x)


def utility_deriv(f: UtilityFn, x, order: int = 1):
    return f.deriv(x, order)


def utility_deriv_inverse(f: UtilityFn, y):
    return f.deriv_inverse(y)


def distortion_eval(g: DistortionFn, p, deriv: int = 0):
    if deriv not in (0, 1):
        raise DomainError("distortion derivative order must be 0 or 1")
    return g.value(p) if deriv == 0 else g.deriv(p)


@dataclass(frozen=True)
class PreferenceSpec:
    """Gain/loss running utilities, terminal utility and their distortions."""

    zeta_plus: UtilityFn
    zeta_minus: UtilityFn
    terminal_l: UtilityFn
    varpi_plus: DistortionFn
    varpi_minus: DistortionFn
    terminal_w: DistortionFn

    UTILITY_FIELDS = ("zeta_plus", "zeta_minus", "terminal_l")
    DISTORTION_FIELDS = ("varpi_plus", "varpi_minus", "terminal_w")

    @classmethod
    def from_config(cls, entries: Mapping[str, Mapping[str, Any]], base: "PreferenceSpec | None" = None) -> "PreferenceSpec":
        """Build from ``{field: {kind, params...}}``; unspecified fields come from ``base``."""
        values = {}
        for name in cls.UTILITY_FIELDS + cls.DISTORTION_FIELDS:
            if name in entries:
                values[name] = _component_from_mapping(name, entries[name])
            elif base is not None:
                values[name] = getattr(base, name)
            else:
                raise ConfigError(f"preference component {name!r} missing")
        unknown = set(entries) - set(values)
        if unknown:
            raise ConfigError(f"unknown preference components: {sorted(unknown)}")
        return cls(**values)

    def to_dict(self) -> dict:
        out = {}
        for name in self.UTILITY_FIELDS + self.DISTORTION_FIELDS:
            out[name] = component_to_mapping(getattr(self, name))
        return out


def _parse_knots(text) -> list[tuple[float, float]]:
    if isinstance(text, str):
        pairs = [chunk.split(":") for chunk in text.replace(";", ",").split(",") if chunk.strip()]
        return [(float(a), float(b)) for a, b in pairs]
    return [(float(a), float(b)) for a, b in text]


def _component_from_mapping(name: str, entry: Mapping[str, Any]):
    kind = str(entry.get("kind", "")).strip()
    try:
        if name in PreferenceSpec.UTILITY_FIELDS:
            if kind == "power":
                return UtilityFn.power(float(entry["exponent"]), float(entry.get("scale", 1.0)))
            if kind == "custom":
                return UtilityFn.custom(_parse_knots(entry["knots"]))
            if kind == "zero":
                return UtilityFn.zero()
        else:
            if kind == "identity":
                return DistortionFn.identity()
            if kind == "lopes":
                return DistortionFn.lopes(float(entry["nu"]), float(entry["a"]), float(entry["b"]))
            if kind == "tabulated":
                return DistortionFn.tabulated(_parse_knots(entry["knots"]))
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"bad parameters for {name}: {exc}") from exc
    raise ConfigError(f"unknown kind {kind!r} for {name}")


def component_to_mapping(obj) -> dict:
    if isinstance(obj, UtilityFn):
        if obj.kind == "power":
            return {"kind": "power", "exponent": obj.exponent, "scale": obj.scale}
        return {"kind": "custom", "knots": [list(k) for k in obj.knots]}
    if obj.kind == "lopes":
        return {"kind": "lopes", "nu": obj.nu, "a": obj.a, "b": obj.b}
    if obj.kind == "tabulated":
        return {"kind": "tabulated", "knots": [list(k) for k in obj.knots]}
    return {"kind": "identity"}


@dataclass(frozen=True)
class Violation:
    component: str
    prop: str
    point: float
    detail: str = ""


@dataclass
class ValidationReport:
    violations: list[Violation] = field(default_factory=list)
    warnings: list[Violation] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def properties(self) -> set[str]:
        return {v.prop for v in self.violations}


def validate_preference(spec: PreferenceSpec, grid_size: int = 201, x_max: float = 10.0,
                        deriv_bound: float = 1e6) -> ValidationReport:
    """Check shape requirements on uniform grids and report every failure.

    Utilities are probed on ``[0, x_max]``; distortions on ``[0, 1]``.
    """
    if grid_size < 2:
        raise DomainError("grid_size must be at least 2")
    rep = ValidationReport()
    xs = np.linspace(0.0, x_max, grid_size)
    for name in PreferenceSpec.UTILITY_FIELDS:
        f = getattr(spec, name)
        vals = f.value(xs)
        if vals[0] != 0.0:
            rep.violations.append(Violation(name, "endpoint value(0)≠0", 0.0, f"value(0)={vals[0]!r}"))
        if name == "terminal_l" and f.is_zero:
            continue  # switched-off terminal utility
        steps = np.diff(vals)
        bad = np.flatnonzero(steps <= 0)
        if bad.size:
            rep.violations.append(Violation(name, "monotonicity", float(xs[bad[0] + 1])))
        second = np.diff(vals, 2)
        tol = 1e-12 * max(1.0, float(np.max(np.abs(vals))))
        bad = np.flatnonzero(second > tol)
        if bad.size:
            rep.violations.append(Violation(name, "concavity", float(xs[bad[0] + 1])))
        if f.kind != "power":
            slope0 = float(f.deriv(max(xs[1] * 1e-6, INADA_FLOOR)))
            if np.isfinite(slope0) and slope0 < 1e6:
                rep.warnings.append(Violation(name, "inada", 0.0, f"f'(0+)≈{slope0:.3g} is finite"))
    ps = np.linspace(0.0, 1.0, grid_size)
    for name in PreferenceSpec.DISTORTION_FIELDS:
        g = getattr(spec, name)
        vals = g.value(ps)
        if vals[0] != 0.0:
            rep.violations.append(Violation(name, "endpoint value(0)≠0", 0.0, f"value(0)={vals[0]!r}"))
        if vals[-1] != 1.0:
            rep.violations.append(Violation(name, "endpoint value(1)≠1", 1.0, f"value(1)={vals[-1]!r}"))
        bad = np.flatnonzero(np.diff(vals) <= 0)
        if bad.size:
            rep.violations.append(Violation(name, "monotonicity", float(ps[bad[0] + 1])))
        d = g.deriv(ps)
        bad = np.flatnonzero(~np.isfinite(d) | (np.abs(d) > deriv_bound))
        if bad.size:
            rep.violations.append(Violation(name, "bounded derivative", float(ps[bad[0]])))
    return rep
