"""Macroscopic shape functions and level curves.

Gamma_c((a, b), (a, b) + p) is the supremum over up-right paths of the
integral of gamma(x')/c(x).  It is computed by a Bellman recursion on a square
grid of spacing h:

    Gamma(p) = max_moves  Gamma(p - d) + h * gamma(d) * mean(1/c along the move)

Moves are the primitive lattice vectors with both components <= M (speed
sampled at the midpoint, which always lies on the half-grid; a move whose
ends and midpoint sit in different regions of the field is charged the
smallest of the three samples, so no path can profit from a crossing) plus the long
near-axis moves (a, 1) and (1, a) for every a up to the grid size, whose
speed average is taken over the half-grid midline they follow.  The long
moves are what resolve the square-root behaviour of gamma near the axes.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Callable

import numpy as np
from numba import njit

from .speed_field import ON_CURVE_TOL, LineFamily, MonotoneGraph, SpeedField


# ---------------------------------------------------------------- closed forms

def gamma(x, y):
    """Homogeneous shape (sqrt(x) + sqrt(y))**2."""
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    if np.any(x < 0) or np.any(y < 0):
        raise ValueError("gamma is defined on the closed positive quadrant")
    return (np.sqrt(x) + np.sqrt(y)) ** 2


def psi(y):
    """-y for y < -1, (1 - y)^2/4 on [-1, 1], 0 for y > 1."""
    y = np.asarray(y, float)
    return np.where(y < -1, -y, np.where(y > 1, 0.0, 0.25 * (1 - y) ** 2))


def beta(x):
    return np.maximum(0.0, -np.asarray(x, float))


def homogeneous_level(r, t, c0: float = 1.0):
    """g(r, t) = c0 t psi(r / (c0 t)) for the constant field c0."""
    r = np.asarray(r, float)
    return c0 * t * psi(r / (c0 * t))


# ---------------------------------------------------------------- moves

def move_set(M: int) -> np.ndarray:
    """Primitive vectors (a, b), 0 <= a, b <= M, in lexicographic order."""
    out = [(a, b) for a in range(M + 1) for b in range(M + 1) if (a or b) and math.gcd(a, b) == 1]
    return np.array(out, np.int64)


def auto_moves(h: float) -> int:
    """Odd short-move radius near 0.9 / sqrt(h).

    With exact speed averages the remaining error comes from the gaps between
    move directions, which shrink like 1/M**2 and only at odd M, so this keeps
    the error O(h).
    """
    return max(7, 2 * math.ceil(0.45 / math.sqrt(h)) - 1)


@njit(cache=True, nogil=True)
def _bellman(winv, labels, NU, NY, moves, gam, prow, pcol, families):
    """winv: 1/c on the half-grid (2NU+1, 2NY+1); labels: region ids there.
    prow[j, m]: sum over k < m of winv[2k+1, 2j-1]; pcol[i, m]: sum over
    k < m of winv[2i-1, 2k+1]."""
    G = np.empty((NU + 1, NY + 1))
    M = 0
    for m in range(moves.shape[0]):
        M = max(M, moves[m, 0], moves[m, 1])
    for i in range(NU + 1):
        for j in range(NY + 1):
            if i == 0 and j == 0:
                G[0, 0] = 0.0
                continue
            best = -np.inf
            for m in range(moves.shape[0]):
                a = moves[m, 0]
                b = moves[m, 1]
                if a > i or b > j:
                    continue
                w = winv[2 * i - a, 2 * j - b]
                lm = labels[2 * i - a, 2 * j - b]
                if labels[2 * i, 2 * j] != lm or labels[2 * (i - a), 2 * (j - b)] != lm:
                    w = min(w, winv[2 * i, 2 * j], winv[2 * (i - a), 2 * (j - b)])
                v = G[i - a, j - b] + gam[m] * w
                if v > best:
                    best = v
            if families:
                if j >= 1:
                    for a in range(M + 1, i + 1):
                        g = (math.sqrt(a) + 1.0) ** 2
                        v = G[i - a, j - 1] + g * (prow[j, i] - prow[j, i - a]) / a
                        if v > best:
                            best = v
                if i >= 1:
                    for b in range(M + 1, j + 1):
                        g = (math.sqrt(b) + 1.0) ** 2
                        v = G[i - 1, j - b] + g * (pcol[i, j] - pcol[i, j - b]) / b
                        if v > best:
                            best = v
            G[i, j] = best
    return G


@njit(cache=True, nogil=True)
def _interp(V, h, X, Y):
    NU = V.shape[0] - 1
    NY = V.shape[1] - 1
    fx = X / h
    fy = Y / h
    i = int(math.floor(fx))
    j = int(math.floor(fy))
    if i < 0:
        i = 0
    if j < 0:
        j = 0
    if i > NU - 1:
        i = NU - 1
    if j > NY - 1:
        j = NY - 1
    sx = fx - i
    sy = fy - j
    # linear on the two triangles cut by the cell's main diagonal, so kinks
    # along diagonal lines (vertical interfaces in the particle frame) stay sharp
    if sx >= sy:
        return V[i, j] + sx * (V[i + 1, j] - V[i, j]) + sy * (V[i + 1, j + 1] - V[i + 1, j])
    return V[i, j] + sy * (V[i, j + 1] - V[i, j]) + sx * (V[i + 1, j + 1] - V[i, j + 1])


@njit(cache=True, nogil=True)
def _levels(V, h, r, t, tol):
    """inf{y >= beta(r): V(r + y, y) >= t} by bisection; NaN if off the grid."""
    out = np.empty(r.shape[0])
    umax = (V.shape[0] - 1) * h
    ymax = (V.shape[1] - 1) * h
    for k in range(r.shape[0]):
        rk = r[k]
        lo = -rk if rk < 0 else 0.0
        if lo > ymax or rk + lo > umax:
            out[k] = np.nan
            continue
        if _interp(V, h, rk + lo, lo) >= t[k]:
            out[k] = lo
            continue
        hi = min(ymax, umax - rk)
        if hi < lo or _interp(V, h, rk + hi, hi) < t[k]:
            out[k] = np.nan
            continue
        while hi - lo > tol:
            mid = 0.5 * (lo + hi)
            if _interp(V, h, rk + mid, mid) >= t[k]:
                hi = mid
            else:
                lo = mid
        out[k] = hi
    return out


# ---------------------------------------------------------------- grids

@dataclass(frozen=True)
class ValueGrid:
    """Gamma from ``start`` at nodes start + h*(i, j); ``values[i, j]``."""

    start: tuple[float, float]
    h: float
    values: np.ndarray
    M: int
    families: bool = True

    @property
    def extent(self) -> tuple[float, float]:
        return ((self.values.shape[0] - 1) * self.h, (self.values.shape[1] - 1) * self.h)

    def at(self, dx: float, dy: float) -> float:
        """Interpolated value at displacement (dx, dy) from the start."""
        ex, ey = self.extent
        if dx < -1e-12 or dy < -1e-12 or dx > ex + 1e-9 or dy > ey + 1e-9:
            raise ValueError("point outside the grid")
        return float(_interp(self.values, self.h, max(dx, 0.0), max(dy, 0.0)))

    def node(self, i: int, j: int) -> float:
        return float(self.values[i, j])

    def level(self, r, t, tol: float = 1e-10) -> np.ndarray:
        """Level heights inf{y >= beta(r): Gamma(r + y, y) >= t}; NaN if the grid is too small."""
        r, t = np.broadcast_arrays(np.atleast_1d(np.asarray(r, float)), np.atleast_1d(np.asarray(t, float)))
        return _levels(self.values, self.h, np.ascontiguousarray(r), np.ascontiguousarray(t), tol)


def _half_grid_inverse_speed(field: SpeedField, start, NU, NY, h, nudge: bool):
    a, b = start
    xs = a + np.arange(2 * NU + 1) * (h / 2)
    ys = b + np.arange(2 * NY + 1) * (h / 2)
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    c = field(X, Y)
    if nudge and field.curves:
        on = field.on_curve(X, Y)
        if np.any(on):
            # midpoints on a curve: sample just off the curve on the slow side
            c = c.copy()
            c[on] = field._probe(X[on], Y[on], np.full(int(on.sum()), h / 10)).min(axis=-1)
    if np.any(~(c > 0)) or not np.all(np.isfinite(c)):
        raise ValueError("speed field must be positive and finite")
    return 1.0 / c


def _region_labels(field: SpeedField, start, NU, NY, h) -> np.ndarray:
    """Integer id of the side of every curve at each half-grid point (0 on a curve)."""
    a, b = start
    xs = a + np.arange(2 * NU + 1) * (h / 2)
    ys = b + np.arange(2 * NY + 1) * (h / 2)
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    labels = np.zeros(X.shape, np.int64)
    if not field.curves:
        return labels
    nx, ny = field.to_native(X, Y)
    for c in field.curves:
        if isinstance(c, LineFamily):
            n0, n1 = c.normal
            sval = n0 * nx + n1 * ny - c.offset
            band = np.floor(sval / c.spacing).astype(np.int64)
            res = c.residual(nx, ny)
            code = np.where(np.abs(res) <= ON_CURVE_TOL, 0, 2 * band + 1)
        else:
            res = c.residual(nx, ny)
            code = np.where(np.abs(res) <= ON_CURVE_TOL, 0, np.where(res > 0, 1, 2))
        labels = labels * 1_000_003 + code
    return labels


def _midline_inverse_speed(field: SpeedField, start, h, winv, labels, horizontal: bool, sub: int = 8):
    """Mean of 1/c along each cell's horizontal (or vertical) midline.

    The cell centre value is exact enough unless the midline crosses a curve,
    which shows up as differing labels at its two ends and centre; those cells
    are averaged over ``sub`` sub-samples.  A centre sitting on a curve that
    the midline only crosses would otherwise charge the whole cell the slow
    side's value.
    """
    cen = winv[1::2, 1::2].copy()
    if horizontal:
        e0, e1 = labels[:-2:2, 1::2], labels[2::2, 1::2]
    else:
        e0, e1 = labels[1::2, :-2:2], labels[1::2, 2::2]
    mid = labels[1::2, 1::2]
    cross = (e0 != mid) | (e1 != mid)
    if not np.any(cross):
        return cen
    iu, iy = np.nonzero(cross)
    a, b = start
    frac = (np.arange(sub) + 0.5) / sub
    if horizontal:
        X = a + (iu[:, None] + frac[None, :]) * h
        Y = np.broadcast_to(b + (iy[:, None] + 0.5) * h, X.shape)
    else:
        Y = b + (iy[:, None] + frac[None, :]) * h
        X = np.broadcast_to(a + (iu[:, None] + 0.5) * h, Y.shape)
    cen[iu, iy] = (1.0 / field(X, Y)).mean(axis=1)
    return cen


def _coarseness_warning(field: SpeedField, h: float):
    for c in field.curves:
        if isinstance(c, MonotoneGraph) and np.min(np.diff(c.xs)) < h:
            warnings.warn("grid spacing is coarser than the tabulated curve's knot spacing", RuntimeWarning)


def shape_grid(field: SpeedField, start=(0.0, 0.0), extent=(1.0, 1.0), h: float = 1 / 64,
               M: int | None = None, families: bool = True, nudge: bool = False) -> ValueGrid:
    """Gamma on start + [0, W] x [0, H] (rounded up to whole cells)."""
    if h <= 0:
        raise ValueError("h must be positive")
    ex, ey = float(extent[0]), float(extent[1])
    if ex < 0 or ey < 0:
        raise ValueError("extent must be nonnegative")
    NU = max(1, math.ceil(ex / h - 1e-9))
    NY = max(1, math.ceil(ey / h - 1e-9))
    M = auto_moves(h) if M is None else int(M)
    _coarseness_warning(field, h)
    winv = _half_grid_inverse_speed(field, (float(start[0]), float(start[1])), NU, NY, h, nudge)
    moves = move_set(M)
    gam = h * gamma(moves[:, 0], moves[:, 1])
    labels = _region_labels(field, (float(start[0]), float(start[1])), NU, NY, h)
    st = (float(start[0]), float(start[1]))
    prow = np.zeros((NY + 1, NU + 1))
    prow[1:, 1:] = np.cumsum(_midline_inverse_speed(field, st, h, winv, labels, True).T, axis=1)
    pcol = np.zeros((NU + 1, NY + 1))
    pcol[1:, 1:] = np.cumsum(_midline_inverse_speed(field, st, h, winv, labels, False), axis=1)
    G = _bellman(winv, labels, NU, NY, moves, gam, h * prow, h * pcol, families)
    return ValueGrid((float(start[0]), float(start[1])), h, G, M, families)


def shape_value(field: SpeedField, start, end, h: float = 1 / 64, **kw) -> float:
    """Gamma_c(start, end)."""
    ext = (end[0] - start[0], end[1] - start[1])
    return shape_grid(field, start, ext, h, **kw).at(*ext)


def lpp_start(q: float, v0q: float) -> tuple[float, float]:
    """LPP-frame root (q - v0(q), -v0(q)) of the anchored shape function."""
    return (q - v0q, -v0q)


def shape_shifted_q(field: SpeedField, q: float, v0: Callable, point, h: float = 1 / 64, **kw) -> float:
    """Gamma_c^q(point) = Gamma of the field shifted to the anchor of q."""
    v0q = float(v0(q))
    a, b = lpp_start(q, v0q)
    return shape_grid(field.shift(a, b), (0.0, 0.0), point, h, **kw).at(*point)


# ---------------------------------------------------------------- level curves

@dataclass
class LevelCurve:
    q: float
    v0q: float
    t: float
    x: np.ndarray
    g: np.ndarray


class ShapeBank:
    """Memoized shape grids keyed by their LPP-frame start point.

    ``height(start, r, t)`` returns inf{y >= beta(r): Gamma(start, start +
    (r + y, y)) >= t}, enlarging the grid when the level leaves it.
    """

    def __init__(self, field: SpeedField, h: float = 1 / 64, M: int | None = None, r_high: float | None = None,
                 tol: float = 1e-10, max_extent: float = 256.0):
        self.field = field
        self.h = h
        self.M = M
        self.tol = tol
        self.max_extent = max_extent
        self._r_high = r_high
        self.grids: dict[tuple[float, float], ValueGrid] = {}
        self.solves = 0

    def r_high(self, start, span: float) -> float:
        if self._r_high is not None:
            return self._r_high
        a, b = start
        return self.field.bounds_on((a - 1, a + span + 1, b - 1, b + span + 1))[1]

    def grid(self, start, need_u: float, need_y: float) -> ValueGrid:
        key = (float(start[0]), float(start[1]))
        g = self.grids.get(key)
        if g is not None and g.extent[0] >= need_u - 1e-12 and g.extent[1] >= need_y - 1e-12:
            return g
        if g is not None:
            need_u = max(need_u, g.extent[0])
            need_y = max(need_y, g.extent[1])
        if max(need_u, need_y) > self.max_extent:
            raise RuntimeError("level-curve grid would exceed the hard extent cap")
        g = shape_grid(self.field, key, (need_u, need_y), self.h, self.M)
        self.solves += 1
        self.grids[key] = g
        return g

    def height(self, start, r, t) -> np.ndarray:
        r, t = np.broadcast_arrays(np.atleast_1d(np.asarray(r, float)), np.atleast_1d(np.asarray(t, float)))
        if np.any(t <= 0):
            raise ValueError("t must be positive")
        tmax = float(t.max())
        rmax = max(float(r.max()), 0.0)
        bmax = float(beta(r).max())
        span = max(rmax, bmax) + tmax + 1
        rh = self.r_high(start, span)
        need_y = bmax + tmax * rh / 4 + 4 * self.h
        need_u = rmax + tmax * rh / 4 + 4 * self.h
        while True:
            g = self.grid(start, need_u, need_y)
            out = g.level(r, t, self.tol)
            if not np.any(np.isnan(out)):
                return out
            need_u, need_y = 2 * need_u, 2 * need_y


def level_curve(field: SpeedField, q: float, v0q: float, t: float, xs, h: float = 1 / 64,
                bank: ShapeBank | None = None) -> LevelCurve:
    """g^q(x, t) at the sample points ``xs``."""
    if t <= 0:
        raise ValueError("t must be positive")
    bank = bank or ShapeBank(field, h)
    xs = np.asarray(xs, float)
    g = bank.height(lpp_start(q, v0q), xs, np.full(xs.shape, float(t)))
    return LevelCurve(float(q), float(v0q), float(t), xs, g)


@dataclass
class SubadditivityReport:
    lhs: float
    rhs: float
    slack: float
    tol: float

    @property
    def ok(self) -> bool:
        return self.slack >= -self.tol


def level_curve_subadditivity_check(field: SpeedField, v0: Callable, q0: float, q: float, x: float, t: float,
                                    h_step: float, tol: float = 1e-2, bank: ShapeBank | None = None
                                    ) -> SubadditivityReport:
    """Compare g^{q0}(q - q0, t - h) + restarted level curve against g^{q0}(x - q0, t).

    The restarted curve is rooted at the particle-frame point (q, y1 - v0(q0))
    with y1 = g^{q0}(q - q0, t - h), i.e. at the LPP-frame point
    (q + y1 - v0(q0), y1 - v0(q0)).
    """
    if not 0 < h_step < t:
        raise ValueError("need 0 < h < t")
    bank = bank or ShapeBank(field)
    v0q0 = float(v0(q0))
    root = lpp_start(q0, v0q0)
    y1 = float(bank.height(root, q - q0, t - h_step)[0])
    restart = (q + y1 - v0q0, y1 - v0q0)
    gbar = float(bank.height(restart, x - q, h_step)[0])
    rhs = float(bank.height(root, x - q0, t)[0])
    lhs = y1 + gbar
    return SubadditivityReport(lhs, rhs, lhs - rhs, tol)
