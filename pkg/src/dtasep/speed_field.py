"""Piecewise-continuous speed fields c(x, y) with discontinuity curves.

A field is a vectorized value rule that is continuous off a finite set of
curves, plus the curves themselves.  Points within ``ON_CURVE_TOL`` of a curve
take the minimum over all adjacent regions, which makes every field lower
semicontinuous.  Coordinate changes (shear, shift) are stored as a stack of
affine maps applied to the query point, so the curve geometry moves with the
values automatically.
"""
from __future__ import annotations

import configparser
import math
from dataclasses import dataclass, field as dc_field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy.interpolate import PchipInterpolator
from scipy.optimize import minimize

ON_CURVE_TOL = 1e-12
_N_PROBE_DIRS = 16
_PROBE_ANGLES = 2 * np.pi * (np.arange(_N_PROBE_DIRS) + 0.5) / _N_PROBE_DIRS
_PROBE_DIRS = np.stack([np.cos(_PROBE_ANGLES), np.sin(_PROBE_ANGLES)], axis=1)

FAMILIES = ("constant", "xstep", "ystep", "oblique_step", "rect_checker", "bump", "tabulated")


class SpeedFieldError(ValueError):
    """Raised for malformed field descriptions or non-positive speeds."""


# ---------------------------------------------------------------- curves

class Curve:
    """Base class; ``residual`` is a signed offset that vanishes on the curve
    and is +inf where the point is outside the curve's domain."""

    def residual(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def directions(self) -> list[tuple[float, float]]:
        """Tangent directions, used for the assumption checks."""
        return []


@dataclass(frozen=True)
class Segment(Curve):
    """Straight segment from p0 to p1; ``infinite`` turns it into a full line."""

    p0: tuple[float, float]
    p1: tuple[float, float]
    infinite: bool = False

    def residual(self, x, y):
        (x0, y0), (x1, y1) = self.p0, self.p1
        dx, dy = x1 - x0, y1 - y0
        length = math.hypot(dx, dy)
        ux, uy = dx / length, dy / length
        rx, ry = x - x0, y - y0
        res = rx * uy - ry * ux
        if self.infinite:
            return res
        s = rx * ux + ry * uy
        outside = (s < -ON_CURVE_TOL) | (s > length + ON_CURVE_TOL)
        return np.where(outside, np.inf, res)

    def directions(self):
        (x0, y0), (x1, y1) = self.p0, self.p1
        return [(x1 - x0, y1 - y0)]


@dataclass(frozen=True)
class LineFamily(Curve):
    """Parallel lines {p : n.p = offset + k*spacing, k integer}."""

    normal: tuple[float, float]
    spacing: float
    offset: float = 0.0

    def residual(self, x, y):
        nx, ny = self.normal
        s = nx * x + ny * y - self.offset
        return s - self.spacing * np.round(s / self.spacing)

    def directions(self):
        nx, ny = self.normal
        return [(-ny, nx)]


class MonotoneGraph(Curve):
    """Graph y = h(x) of a strictly monotone tabulated function on [xs[0], xs[-1]],
    interpolated by a monotone cubic."""

    def __init__(self, xs: Sequence[float], ys: Sequence[float]):
        xs = np.asarray(xs, float)
        ys = np.asarray(ys, float)
        if xs.ndim != 1 or xs.size < 2 or xs.size != ys.size:
            raise SpeedFieldError("tabulated curve needs matching xs/ys with at least two samples")
        if np.any(np.diff(xs) <= 0):
            raise SpeedFieldError("tabulated curve xs must be strictly increasing")
        dy = np.diff(ys)
        if not (np.all(dy > 0) or np.all(dy < 0)):
            raise SpeedFieldError("tabulated curve must be strictly monotone")
        self.xs, self.ys = xs, ys
        self._h = PchipInterpolator(xs, ys, extrapolate=False)

    def __call__(self, x):
        return self._h(x)

    def residual(self, x, y):
        x = np.asarray(x, float)
        inside = (x >= self.xs[0]) & (x <= self.xs[-1])
        hx = np.where(inside, self._h(np.clip(x, self.xs[0], self.xs[-1])), 0.0)
        return np.where(inside, y - hx, np.inf)

    def directions(self):
        return [(float(a), float(b)) for a, b in zip(np.diff(self.xs), np.diff(self.ys))]


# ---------------------------------------------------------------- affine maps

_SHEAR = (np.array([[1.0, 1.0], [0.0, 1.0]]), np.zeros(2))
_UNSHEAR = (np.array([[1.0, -1.0], [0.0, 1.0]]), np.zeros(2))


def _apply(op, x, y):
    a, b = op
    return a[0, 0] * x + a[0, 1] * y + b[0], a[1, 0] * x + a[1, 1] * y + b[1]


def _is_op(op, ref) -> bool:
    return np.array_equal(op[0], ref[0]) and np.array_equal(op[1], ref[1])


# ---------------------------------------------------------------- the field

@dataclass(frozen=True)
class SpeedField:
    """Speed function with discontinuity curves.

    ``rule`` maps native coordinate arrays to values and only has to be right
    off the curves.  ``ops`` is the stack of affine maps taking a query point to
    native coordinates; the first entry is applied first.
    """

    rule: Callable[[np.ndarray, np.ndarray], np.ndarray]
    curves: tuple = ()
    kind: str = "general"
    name: str = "custom"
    ops: tuple = ()
    native_kind: str = ""
    params: dict = dc_field(default_factory=dict, compare=False)
    _bounds_cache: dict = dc_field(default_factory=dict, compare=False, repr=False)

    # -- coordinates
    def to_native(self, x, y):
        x = np.asarray(x, float)
        y = np.asarray(y, float)
        for op in self.ops:
            x, y = _apply(op, x, y)
        return x, y

    def _raw(self, x, y):
        x, y = self.to_native(x, y)
        return np.array(np.broadcast_to(np.asarray(self.rule(x, y), float), np.shape(x)))

    def _on_curve_native(self, nx, ny):
        on = np.zeros(nx.shape, bool)
        for c in self.curves:
            on |= np.abs(c.residual(nx, ny)) <= ON_CURVE_TOL
        return on

    def _probe(self, x, y, radius):
        """Raw values on a ring of probes around each point: shape (..., dirs)."""
        px = x[..., None] + radius[..., None] * _PROBE_DIRS[:, 0]
        py = y[..., None] + radius[..., None] * _PROBE_DIRS[:, 1]
        return self._raw(px, py)

    @staticmethod
    def _probe_radius(x, y):
        return 1e-8 * (1.0 + np.abs(x) + np.abs(y))

    # -- evaluation
    def __call__(self, x, y):
        x, y = np.broadcast_arrays(np.asarray(x, float), np.asarray(y, float))
        shape = x.shape
        x, y = x.ravel(), y.ravel()
        nx, ny = self.to_native(x, y)
        vals = np.array(np.broadcast_to(np.asarray(self.rule(nx, ny), float), nx.shape))
        if self.curves:
            on = self._on_curve_native(nx, ny)
            if np.any(on):
                xs, ys = x[on], y[on]
                vals[on] = self._probe(xs, ys, self._probe_radius(xs, ys)).min(axis=-1)
        return vals.reshape(shape)

    def eval(self, p) -> float:
        return float(self(p[0], p[1]))

    def on_curve(self, x, y):
        nx, ny = self.to_native(x, y)
        return self._on_curve_native(np.atleast_1d(nx), np.atleast_1d(ny)).reshape(np.shape(nx))

    def envelopes(self, x, y, radius: float | None = None):
        """Lower and upper envelopes (liminf, limsup over small balls).

        With ``radius=None`` the ball shrinks to the probe scale, so only curve
        points differ.  A positive radius gives the min/max over a sampled disk,
        which is what finite-difference stencils of that size see.
        """
        x, y = np.broadcast_arrays(np.asarray(x, float), np.asarray(y, float))
        x, y = np.array(x), np.array(y)
        base = np.array(self(x, y))
        if radius is None:
            if not self.curves:
                return base, base.copy()
            hi = base.copy()
            on = self.on_curve(x, y)
            if np.any(on):
                xs, ys = x[on], y[on]
                hi[on] = self._probe(xs, ys, self._probe_radius(xs, ys)).max(axis=-1)
            return base, hi
        lo, hi = base.copy(), base.copy()
        for frac in (1.0, 0.5, 0.25):
            r = np.full(x.shape, radius * frac)
            ring = self._probe(x, y, r)
            lo = np.minimum(lo, ring.min(axis=-1))
            hi = np.maximum(hi, ring.max(axis=-1))
        return lo, hi

    # -- transforms
    def shear(self) -> "SpeedField":
        """c~(x, y) = c(x + y, y)."""
        if self.ops and _is_op(self.ops[0], _UNSHEAR):
            return self._with_ops(self.ops[1:], "general")
        return self._with_ops((_SHEAR,) + self.ops, "general")

    def shear_inverse(self) -> "SpeedField":
        """c(u, y) = c~(u - y, y)."""
        if self.ops and _is_op(self.ops[0], _SHEAR):
            return self._with_ops(self.ops[1:], "general")
        return self._with_ops((_UNSHEAR,) + self.ops, "general")

    def shift(self, a: float, b: float) -> "SpeedField":
        """(T_{a,b} c)(x, y) = c(x + a, y + b)."""
        op = (np.eye(2), np.array([float(a), float(b)]))
        return self._with_ops((op,) + self.ops, self.kind)

    def _with_ops(self, ops, kind):
        base = self.native_kind or (self.kind if not self.ops else "general")
        if self.kind == "constant":
            kind = "constant"
        elif not ops:
            kind = base
        return SpeedField(self.rule, self.curves, kind, self.name, tuple(ops), base, dict(self.params))

    def with_kind(self, kind: str) -> "SpeedField":
        return SpeedField(self.rule, self.curves, kind, self.name, self.ops, self.native_kind, dict(self.params))

    def scaled(self, factor: float) -> "SpeedField":
        rule = self.rule
        return SpeedField(lambda x, y: factor * np.asarray(rule(x, y), float), self.curves,
                          self.kind, self.name, self.ops, self.native_kind, dict(self.params))

    # -- bounds
    def bounds_on(self, rect) -> tuple[float, float]:
        """(r_low, r_high) over rect = (xlo, xhi, ylo, yhi).

        Dense interior grid plus dense boundary sampling, then a bounded local
        search from the best samples to pin down smooth extrema.
        """
        xlo, xhi, ylo, yhi = map(float, rect)
        if xhi < xlo or yhi < ylo:
            raise SpeedFieldError(f"negative rectangle extent: {rect}")
        key = (xlo, xhi, ylo, yhi)
        if key in self._bounds_cache:
            return self._bounds_cache[key]
        gx = np.linspace(xlo, xhi, 257)
        gy = np.linspace(ylo, yhi, 257)
        X, Y = np.meshgrid(gx, gy, indexing="ij")
        bx = np.linspace(xlo, xhi, 2049)
        by = np.linspace(ylo, yhi, 2049)
        px = np.concatenate([X.ravel(), bx, bx, np.full(by.size, xlo), np.full(by.size, xhi)])
        py = np.concatenate([Y.ravel(), np.full(bx.size, ylo), np.full(bx.size, yhi), by, by])
        vals = self(px, py)
        lo, hi = float(vals.min()), float(vals.max())
        if not np.all(np.isfinite(vals)) or lo <= 0:
            raise SpeedFieldError(f"speed field not positive and finite on {rect}")
        if xhi > xlo and yhi > ylo:
            box = [(xlo, xhi), (ylo, yhi)]
            for sign, idx in ((1.0, np.argmin(vals)), (-1.0, np.argmax(vals))):
                res = minimize(lambda p: sign * float(self(p[0], p[1])), [px[idx], py[idx]],
                               method="L-BFGS-B", bounds=box)
                v = float(self(res.x[0], res.x[1]))
                lo, hi = min(lo, v), max(hi, v)
        self._bounds_cache[key] = (lo, hi)
        return lo, hi

    def spatial_profile(self, x) -> np.ndarray:
        """c~(x) for a field that does not depend on its second coordinate."""
        x = np.asarray(x, float)
        return self(x, np.zeros_like(x))

    def looks_spatial_only(self, xs, ys=(-3.0, -0.7, 0.0, 1.3, 4.1)) -> bool:
        xs = np.asarray(xs, float)
        base = self(xs, np.zeros_like(xs))
        return all(np.array_equal(base, self(xs, np.full_like(xs, y))) for y in ys)

    def assumption_issues(self, frame: str = "lpp") -> list[str]:
        """Geometric red flags for straight pieces of the curves.

        In the LPP frame curves may not be horizontal or vertical; in the
        particle frame they may not have slope -1.
        """
        issues = []
        for c in self.curves:
            for dx, dy in c.directions():
                vx, vy = dx, dy
                for a, _ in reversed(self.ops):
                    # tangent in query coordinates: inverse of the linear part
                    vx, vy = np.linalg.solve(a, [vx, vy])
                if frame == "lpp" and (abs(vx) < 1e-12 or abs(vy) < 1e-12):
                    issues.append(f"{type(c).__name__} axis-parallel in the LPP frame")
                if frame == "particle" and abs(vx) > 1e-12 and abs(vy / vx + 1.0) < 1e-12:
                    issues.append(f"{type(c).__name__} has slope -1 in the particle frame")
        return sorted(set(issues))


def growth_probe(field: SpeedField, anchor=(0.0, 0.0), max_exp: int = 16) -> list[tuple[float, float]]:
    """(side, sup c / log side) on doubling squares centred at ``anchor``."""
    out = []
    ax, ay = anchor
    for k in range(1, max_exp + 1):
        side = 2.0 ** k
        gx = np.linspace(ax - side, ax + side, 129)
        X, Y = np.meshgrid(gx, gx + (ay - ax), indexing="ij")
        sup = float(field(X, Y).max())
        out.append((side, sup / math.log(side)))
    return out


# ---------------------------------------------------------------- presets

def constant(value: float) -> SpeedField:
    value = float(value)
    if value <= 0:
        raise SpeedFieldError("speed must be positive")
    return SpeedField(lambda x, y: np.full(np.shape(x), value), (), "constant", "constant", (), "constant",
                      {"value": value})


def xstep(left: float, right: float, at: float = 0.0) -> SpeedField:
    """left for x < at, right for x > at."""
    _positive(left, right)
    rule = lambda x, y: np.where(x < at, left, right)
    return SpeedField(rule, (Segment((at, 0.0), (at, 1.0), infinite=True),), "spatial_only", "xstep", (), "spatial_only",
                      {"left": left, "right": right, "at": at})


def ystep(below: float, above: float, at: float = 0.0) -> SpeedField:
    _positive(below, above)
    rule = lambda x, y: np.where(y < at, below, above)
    return SpeedField(rule, (Segment((0.0, at), (1.0, at), infinite=True),), "general", "ystep", (), "general",
                      {"below": below, "above": above, "at": at})


def oblique_step(slope: float, intercept: float, below: float, above: float) -> SpeedField:
    """below under the line y = slope*x + intercept, above over it."""
    _positive(below, above)
    rule = lambda x, y: np.where(y < slope * x + intercept, below, above)
    line = Segment((0.0, intercept), (1.0, intercept + slope), infinite=True)
    return SpeedField(rule, (line,), "general", "oblique_step", (), "general",
                      {"slope": slope, "intercept": intercept, "below": below, "above": above})


def rect_checker(a: float, b: float, size: float = 1.0) -> SpeedField:
    """Checkerboard of square cells: a on even cells, b on odd ones."""
    _positive(a, b)
    if size <= 0:
        raise SpeedFieldError("checker size must be positive")

    def rule(x, y):
        parity = (np.floor(x / size) + np.floor(y / size)) % 2
        return np.where(parity == 0, a, b)

    curves = (LineFamily((1.0, 0.0), size), LineFamily((0.0, 1.0), size))
    return SpeedField(rule, curves, "general", "rect_checker", (), "general", {"a": a, "b": b, "size": size})


def bump(base: float = 2.0, amp: float = 1.0) -> SpeedField:
    """Smooth field base + amp*sin(x)sin(y)."""
    if base - abs(amp) <= 0:
        raise SpeedFieldError("bump field must stay positive (base > |amp|)")
    rule = lambda x, y: base + amp * np.sin(x) * np.sin(y)
    return SpeedField(rule, (), "general", "bump", (), "general", {"base": base, "amp": amp})


def tabulated(xs, ys, below: float, above: float) -> SpeedField:
    """below under the monotone graph through (xs, ys), above over it.

    Outside the tabulated x-range the graph is continued by its end values
    horizontally for the region test, but no curve is registered there.
    """
    _positive(below, above)
    curve = MonotoneGraph(xs, ys)
    x0, x1 = curve.xs[0], curve.xs[-1]

    def rule(x, y):
        h = curve(np.clip(x, x0, x1))
        return np.where(y < h, below, above)

    return SpeedField(rule, (curve,), "general", "tabulated", (), "general",
                      {"xs": list(curve.xs), "ys": list(curve.ys), "below": below, "above": above})


def from_rule(rule, curves=(), kind="general", name="custom") -> SpeedField:
    return SpeedField(rule, tuple(curves), kind, name)


def _positive(*vals):
    for v in vals:
        if not (np.isfinite(v) and v > 0):
            raise SpeedFieldError(f"speed values must be positive and finite, got {v}")


# ---------------------------------------------------------------- file format

_SPEC = {
    "constant": {"value": None},
    "xstep": {"left": None, "right": None, "at": 0.0},
    "ystep": {"below": None, "above": None, "at": 0.0},
    "oblique_step": {"slope": None, "intercept": 0.0, "below": None, "above": None},
    "rect_checker": {"a": None, "b": None, "size": 1.0},
    "bump": {"base": 2.0, "amp": 1.0},
    "tabulated": {"xs": None, "ys": None, "below": None, "above": None},
}
_BUILDERS = {"constant": constant, "xstep": xstep, "ystep": ystep, "oblique_step": oblique_step,
             "rect_checker": rect_checker, "bump": bump, "tabulated": tabulated}


@dataclass(frozen=True)
class FieldSpec:
    """Parsed speed file: the LPP-frame field and its particle-frame shear."""

    lpp: SpeedField
    particle: SpeedField
    family: str
    frame: str
    params: dict


def parse_speed_text(text: str) -> FieldSpec:
    """Parse ``key = value`` lines (``#`` comments).  Grammar in the README."""
    cp = configparser.ConfigParser(inline_comment_prefixes=("#",), interpolation=None)
    try:
        cp.read_string("[speed]\n" + text)
    except configparser.Error as exc:
        raise SpeedFieldError(f"cannot parse speed file: {exc}") from exc
    raw = dict(cp["speed"])
    family = raw.pop("family", None)
    if family not in _SPEC:
        raise SpeedFieldError(f"unknown or missing family {family!r}; expected one of {FAMILIES}")
    frame = raw.pop("frame", "lpp").strip()
    if frame not in ("lpp", "particle"):
        raise SpeedFieldError("frame must be 'lpp' or 'particle'")
    spec = _SPEC[family]
    unknown = set(raw) - set(spec)
    if unknown:
        raise SpeedFieldError(f"unknown keys for {family}: {sorted(unknown)}")
    params = {}
    for key, default in spec.items():
        if key not in raw:
            if default is None:
                raise SpeedFieldError(f"missing key {key!r} for family {family}")
            params[key] = default
            continue
        try:
            if key in ("xs", "ys"):
                params[key] = [float(s) for s in raw[key].split(",") if s.strip()]
            else:
                params[key] = float(raw[key])
        except ValueError as exc:
            raise SpeedFieldError(f"bad number for {key!r}: {raw[key]!r}") from exc
    native = _BUILDERS[family](**params)
    if frame == "lpp":
        lpp = native
        particle = native.shear()
    else:
        particle = native
        lpp = native.shear_inverse()
    return FieldSpec(lpp, particle, family, frame, params)


def load_speed_file(path) -> FieldSpec:
    p = Path(path)
    if not p.is_file():
        raise SpeedFieldError(f"speed file not found: {p}")
    return parse_speed_text(p.read_text())
