"""Hydrodynamic current by maximizing over anchored level curves.

    v(x, t) = sup_q  v0(q) - g^q(x - q, t)

g^q is the level curve of the shape function rooted at the LPP point
(q - v0(q), -v0(q)).  Anchors q live on the lattice h*Z of the shape solver,
so grid nodes line up with interfaces at lattice coordinates.  Most anchors
are discarded with the cheap bracket

    r_low t psi(r / (r_low t)) <= g^q(r, t) <= r_high t psi(r / (r_high t))

that comes from comparing with constant fields.  Fields passed here are in
the LPP frame.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field
from typing import Callable

import numpy as np
from scipy.optimize import minimize

from .macro_shape import ShapeBank, homogeneous_level, lpp_start, psi
from .speed_field import SpeedField

HARD_TRUNCATION_CAP = 1e4
TIE_TOL = 1e-6


class TruncationError(RuntimeError):
    """The anchor search interval had to grow past the hard cap."""


@dataclass
class Profile:
    t: float
    x: np.ndarray
    v: np.ndarray
    rho: np.ndarray
    qstar: np.ndarray
    gstar: np.ndarray
    case: list
    trunc: list
    ties: list = dc_field(default_factory=list)

    def rows(self) -> list[dict]:
        return [{"x": float(x), "v": float(v), "rho": float(r), "qstar": float(q), "case": c}
                for x, v, r, q, c in zip(self.x, self.v, self.rho, self.qstar, self.case)]


def _classify(x: float, q: float, g: float, tol: float) -> str:
    r = x - q
    if r >= 0 and g <= tol:
        return "contact0"
    if r <= 0 and g <= -r + tol:
        return "contact1"
    return "interior"


def density_from_values(x: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Symmetric differences on the sample grid (one-sided at the ends), clamped to [0, 1]."""
    if len(x) < 2:
        return np.full(len(x), np.nan)
    rho = np.gradient(v, x)
    return np.clip(rho, 0.0, 1.0)


class _AnchorSearch:
    """F(q) rows over all x samples, memoized per anchor lattice index."""

    def __init__(self, field: SpeedField, v0: Callable, xs: np.ndarray, t: float, h: float,
                 bank: ShapeBank, r_low: float, r_high: float):
        self.field, self.v0, self.xs, self.t, self.h = field, v0, xs, t, h
        self.bank, self.r_low, self.r_high = bank, r_low, r_high
        self.rows: dict[int, np.ndarray] = {}
        self.gs: dict[int, np.ndarray] = {}

    def F(self, k: int) -> np.ndarray:
        row = self.rows.get(k)
        if row is None:
            q = k * self.h
            v0q = float(self.v0(q))
            start = lpp_start(q, v0q)
            r = self.xs - q
            # size the grid for every x at once; g never exceeds the r_high bracket
            gU = homogeneous_level(r, self.t, self.r_high)
            margin = 0.1 * (1 + self.t) + 4 * self.h
            need_y = float(np.max(gU)) + margin
            need_u = float(np.max(r + gU)) + margin
            need_u, need_y = max(need_u, 2 * self.h), max(need_y, 2 * self.h)
            tt = np.full(r.shape, self.t)
            while True:
                g = self.bank.grid(start, need_u, need_y).level(r, tt, self.bank.tol)
                if not np.any(np.isnan(g)):
                    break
                need_u, need_y = 2 * need_u, 2 * need_y
            row = v0q - g
            self.rows[k] = row
            self.gs[k] = g
        return row


def current(field: SpeedField, v0: Callable, x_samples, t: float, h: float = 1 / 64,
            bank: ShapeBank | None = None, bounds: tuple[float, float] | None = None,
            margin: float = 0.02) -> Profile:
    """v(x, t) at the sample points, with maximizers and their contact case."""
    if t <= 0:
        raise ValueError("t must be positive")
    xs = np.atleast_1d(np.asarray(x_samples, float))
    if bounds is None:
        span = 2 * (1 + 4) * t + 2
        rect = (xs.min() - span, xs.max() + span, -span - abs(xs).max(), span + abs(xs).max())
        bounds = field.bounds_on(rect)
    r_low, r_high = bounds
    bank = bank or ShapeBank(field, h, r_high=r_high)
    search = _AnchorSearch(field, v0, xs, t, h, bank, r_low, r_high)

    v = np.empty(len(xs))
    qstar = np.empty(len(xs))
    gstar = np.empty(len(xs))
    cases, truncs, ties = [], [], []
    for ix, x in enumerate(xs):
        half = 2 * (1 + r_high) * t + 1
        while True:
            lo, hi = x - half, x + half
            k_best, val, tie = _maximize(search, ix, x, lo, hi, margin)
            q = k_best * h
            if q - lo >= 0.5 and hi - q >= 0.5:
                break
            half *= 2
            if half > HARD_TRUNCATION_CAP:
                raise TruncationError(f"anchor interval for x={x} exceeded {HARD_TRUNCATION_CAP}")
        v[ix] = val
        qstar[ix] = q
        gstar[ix] = search.gs[k_best][ix]
        cases.append(_classify(x, q, gstar[ix], 1e-9))
        truncs.append((lo, hi))
        ties.append(tie)
    return Profile(float(t), xs, v, density_from_values(xs, v), qstar, gstar, cases, truncs, ties)


def _maximize(search: _AnchorSearch, ix: int, x: float, lo: float, hi: float, margin: float):
    h, t = search.h, search.t
    ks = np.arange(math.ceil(lo / h - 1e-9), math.floor(hi / h + 1e-9) + 1)
    qs = ks * h
    v0q = np.asarray(search.v0(qs), float)
    r = x - qs
    LB = v0q - homogeneous_level(r, t, search.r_high)
    UB = v0q - homogeneous_level(r, t, search.r_low)
    # rows already computed for other x give exact values here for free
    known = {int(k): float(search.rows[int(k)][ix]) for k in ks if int(k) in search.rows}
    floor = max(LB.max(), max(known.values(), default=-np.inf))
    keep = UB >= floor - margin
    cand = ks[keep]

    vals: dict[int, float] = {k: v for k, v in known.items() if keep[k - ks[0]]}

    def ev(k):
        k = int(k)
        if k not in vals:
            vals[k] = float(search.F(k)[ix])
        return vals[k]

    if len(cand) <= 64:
        for k in cand:
            ev(k)
    else:
        # coarse anchors on a stride shared by all x, so their rows get reused
        stride = int(np.ceil(len(cand) / 64))
        for k in cand[cand % stride == 0]:
            ev(k)
        step = stride
        index = {int(k): i for i, k in enumerate(cand)}
        rounds = 0
        while step > 1 or rounds < 5:
            step = max(1, step // 2)
            best = max(vals.values())
            lead = sorted((k for k in vals if vals[k] >= best - TIE_TOL), key=lambda k: -vals[k])
            # also follow a few runners-up in case F has several humps
            runners = sorted(vals, key=lambda k: -vals[k])[:3]
            for k in set(lead) | set(runners):
                i = index[int(k)]
                for j in (i - step, i + step):
                    if 0 <= j < len(cand):
                        ev(cand[j])
            rounds += 1
            if step == 1 and rounds >= 5:
                break
    best = max(vals.values())
    tied = sorted(k * h for k in vals if vals[k] >= best - TIE_TOL)
    k_best = max(vals, key=lambda k: (vals[k], -abs(k * h - x)))
    return int(k_best), best, tied


class CurrentSolver:
    """v(x, t) on demand for one field and datum; shape grids are shared across times."""

    def __init__(self, field: SpeedField, v0: Callable, h: float = 1 / 64,
                 bounds: tuple[float, float] | None = None, rect=(-8.0, 8.0, -8.0, 8.0)):
        self.field, self.v0, self.h = field, v0, h
        self.bounds = bounds or field.bounds_on(rect)
        self.bank = ShapeBank(field, h, r_high=self.bounds[1])

    def profile(self, xs, t: float) -> Profile:
        return current(self.field, self.v0, xs, t, self.h, self.bank, self.bounds)

    def __call__(self, xs, t: float) -> np.ndarray:
        if t == 0:
            return np.asarray(self.v0(np.asarray(xs, float)), float)
        return self.profile(xs, t).v


# ---------------------------------------------------------------- diagnostics

@dataclass
class MaximizerCheck:
    x: float
    qstar: float
    case: str
    residual: float
    ok: bool


def maximizer_diagnostics(profile: Profile, field: SpeedField, v0: Callable, h: float | None = None,
                          tol: float = 2e-2) -> list[MaximizerCheck]:
    """Interior maximizers must sit on the level curve Gamma^{q*} = t; contacts on the wedge boundary."""
    from .macro_shape import shape_value

    out = []
    hh = h or 1 / 64
    for x, q, g, case in zip(profile.x, profile.qstar, profile.gstar, profile.case):
        r = x - q
        if case == "contact0":
            ok, res = bool(g <= 1e-9 and q <= x + 1e-12), float(g)
        elif case == "contact1":
            ok, res = bool(abs(g - (q - x)) <= 1e-9 and q >= x - 1e-12), float(g - (q - x))
        else:
            a, b = lpp_start(q, float(v0(q)))
            G = shape_value(field, (a, b), (a + r + g, b + g), hh)
            res = float(G - profile.t)
            ok = abs(res) <= tol * max(1.0, profile.t)
        out.append(MaximizerCheck(float(x), float(q), case, res, ok))
    return out


# ---------------------------------------------------------------- Lax-Oleinik

def _path_cost_spatial(prof: Callable, nodes: np.ndarray, dur: np.ndarray, sub: int) -> float:
    """Integral of c psi(xi/c) along a piecewise-linear w1 path; c depends on w1 only."""
    frac = (np.arange(sub) + 0.5) / sub
    w = nodes[:-1, None] + (nodes[1:] - nodes[:-1])[:, None] * frac[None, :]
    c = prof(w.ravel()).reshape(w.shape)
    xi = (nodes[1:] - nodes[:-1]) / dur
    return float(np.sum(dur * np.mean(c * psi(xi[:, None] / c), axis=1)))


def _path_w2_general(ctil: SpeedField, v0: Callable, nodes: np.ndarray, dur: np.ndarray, sub: int) -> float:
    w1 = float(nodes[0])
    w2 = -float(v0(w1))
    for k in range(len(dur)):
        xi = (nodes[k + 1] - nodes[k]) / dur[k]
        ds = dur[k] / sub
        for _ in range(sub):
            # midpoint (RK2) step of w2' = c psi(xi/c)
            c0 = float(ctil(w1, w2))
            wm = w2 + 0.5 * ds * c0 * float(psi(xi / c0))
            cm = float(ctil(w1 + 0.5 * ds * xi, wm))
            w2 += ds * cm * float(psi(xi / cm))
            w1 += ds * xi
    return w2


def _interval_costs(prof: Callable, grid: np.ndarray, sub: int, dt: float) -> np.ndarray:
    """C[a, b]: running cost of moving from grid[a] to grid[b] in time dt (spatial-only field)."""
    frac = (np.arange(sub) + 0.5) / sub
    A = grid[:, None, None]
    B = grid[None, :, None]
    w = A + (B - A) * frac
    c = prof(w.ravel()).reshape(w.shape)
    xi = (grid[None, :] - grid[:, None]) / dt
    return dt * np.mean(c * psi(xi[:, :, None] / c), axis=-1)


def _jump_points(prof: Callable, grid: np.ndarray, iters: int = 60) -> np.ndarray:
    """Both sides of each jump of the profile between neighbouring grid points, by bisection.

    Optimal paths like to sit exactly on a slow-side discontinuity, which a
    uniform grid almost never contains.
    """
    vals = prof(grid)
    idx = np.nonzero(vals[1:] != vals[:-1])[0]
    out = []
    for i in idx:
        a, b = grid[i], grid[i + 1]
        fa = prof(np.array([a]))[0]
        for _ in range(iters):
            m = 0.5 * (a + b)
            if prof(np.array([m]))[0] == fa:
                a = m
            else:
                b = m
        out += [a, b]
    return np.array(out)


def _node_dp(grid: np.ndarray, v0g: np.ndarray, costs: list, end: int) -> tuple[float, np.ndarray]:
    """Best path on the position grid ending at grid[end] (= x); one cost matrix per piece."""
    V = v0g.copy()
    back = []
    for C in costs:
        tot = V[:, None] - C
        arg = np.argmax(tot, axis=0)
        V = tot[arg, np.arange(len(grid))]
        back.append(arg)
    k = end
    val = float(V[k])
    nodes = [k]
    for arg in reversed(back):
        k = arg[k]
        nodes.append(k)
    return val, grid[np.array(nodes[::-1])]


@dataclass
class LaxOleinikResult:
    value: float
    nodes: np.ndarray
    durations: np.ndarray
    history: list


def lax_oleinik_value(field: SpeedField, v0: Callable, x: float, t: float, path_family_size: int = 8,
                      sub: int | None = None, detail: bool = False):
    """Lower bound on v(x, t) from paths whose w1 is piecewise linear with m pieces.

    Path data are the positions at the breakpoints and the piece durations,
    w1 ends at x, and w2 follows w2' = c psi(w1'/c) from -v0(w1(0)).
    m runs through 1, 2, 4, ... up to ``path_family_size``; each level starts
    from the previous optimum with every piece split in half (the same path),
    so the values never decrease.  On spatial-only fields every level is also
    seeded by an exact dynamic program over a grid of positions.
    """
    if t <= 0:
        raise ValueError("t must be positive")
    ctil = field.shear()
    spatial = ctil.kind in ("spatial_only", "constant")
    rect = (x - 6 * t - 2, x + 6 * t + 2, -6 * t - 2, 6 * t + 2)
    r_high = ctil.bounds_on(rect)[1]
    prof = ctil.spatial_profile
    sub = sub or (32 if spatial else 8)

    def unpack(z, m):
        nodes = np.append(z[:m], x)
        th = np.append(z[m:], 0.0)
        d = np.exp(th - th.max())
        return nodes, t * d / d.sum()

    def pack(nodes, dur):
        th = np.log(dur / dur[-1])
        return np.concatenate([nodes[:-1], th[:-1]])

    def value_of(nodes, dur):
        if spatial:
            return float(v0(nodes[0])) - _path_cost_spatial(prof, nodes, dur, sub)
        return -_path_w2_general(ctil, v0, nodes, dur, sub)

    reach = 2 * r_high * t
    grid = np.linspace(x - reach, x + reach, 121)
    if spatial:
        grid = np.unique(np.concatenate([grid, _jump_points(prof, grid)]))
    end = int(np.argmin(np.abs(grid - x)))
    v0g = np.asarray(v0(grid), float)
    vals = [value_of(np.array([g, x]), np.array([t])) for g in grid]
    best_nodes = np.array([grid[int(np.argmax(vals))], x])
    best_dur = np.array([t])
    best = max(vals)
    history = []
    m = 1
    opts = {"xatol": 1e-7, "fatol": 1e-9}

    def consider(nodes, dur):
        nonlocal best, best_nodes, best_dur
        val = value_of(nodes, dur)
        if val > best:
            best, best_nodes, best_dur = val, np.asarray(nodes, float), np.asarray(dur, float)

    while True:
        seeds = [(best_nodes, best_dur)]
        if m >= 2:
            splits = [best_dur]
            if m == 2:
                splits += [np.array([f, 1 - f]) * t for f in np.linspace(0.05, 0.95, 19)]
            for dur in splits:
                if spatial:
                    costs = [_interval_costs(prof, grid, 16, d) for d in dur]
                    _, nodes = _node_dp(grid, v0g, costs, end)
                    seeds.append((nodes, dur))
                    consider(nodes, dur)
                else:
                    nodes = best_nodes.copy()
                    for _ in range(2):
                        for k in range(m):
                            for g in grid[::3]:
                                trial = nodes.copy()
                                trial[k] = g
                                if value_of(trial, dur) > value_of(nodes, dur):
                                    nodes = trial
                    seeds.append((nodes, dur))
                    consider(nodes, dur)
        seeds.sort(key=lambda s_: -value_of(*s_))
        for nodes, dur in seeds[:2]:
            z0 = pack(nodes, dur) if m > 1 else nodes[:1]
            res = minimize(lambda z: -value_of(*unpack(z, m)) if m > 1 else -value_of(np.array([z[0], x]), np.array([t])),
                           z0, method="Nelder-Mead", options={**opts, "maxiter": 300 * m, "adaptive": m > 2})
            if m > 1:
                consider(*unpack(res.x, m))
            else:
                consider(np.array([res.x[0], x]), np.array([t]))
        history.append((m, best))
        if 2 * m > path_family_size:
            break
        mids = 0.5 * (best_nodes[:-1] + best_nodes[1:])
        best_nodes = np.append(np.ravel(np.column_stack([best_nodes[:-1], mids])), x)
        best_dur = np.repeat(best_dur / 2, 2)
        m *= 2
    if detail:
        return LaxOleinikResult(float(best), best_nodes, best_dur, history)
    return float(best)


# ---------------------------------------------------------------- closed forms

def homogeneous_current(v0: Callable, x: float, t: float, c0: float = 1.0, span: float | None = None,
                        samples: int = 200001) -> float:
    """sup_q v0(q) - c0 t psi((x - q)/(c0 t)) by dense search (constant field)."""
    span = span or 2 * (1 + c0) * t + 1
    q = np.linspace(x - span, x + span, samples)
    return float(np.max(np.asarray(v0(q), float) - homogeneous_level(x - q, t, c0)))


def step_fan_current(x, t):
    """Closed-form v for the step datum v0(q) = min(q, 0) on the unit field."""
    x = np.asarray(x, float)
    return np.where(x <= -t, x, np.where(x >= t, 0.0, -t * psi(x / t)))


def step_fan_density(x, t):
    x = np.asarray(x, float)
    return np.clip(0.5 * (1 - x / t), 0.0, 1.0)


def fenchel_gap(p_values, c_values, xi=None) -> float:
    """max |inf_xi (xi p + c psi(xi/c)) - c p (1 - p)| over the given p and c."""
    if xi is None:
        xi = np.linspace(-10, 10, 2_000_001)
    worst = 0.0
    for c in c_values:
        ps = psi(xi / c) * c
        for p in p_values:
            val = np.min(xi * p + ps)
            worst = max(worst, abs(val - c * p * (1 - p)))
    return worst
