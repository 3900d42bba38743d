"""Checks of the limiting current against its PDE descriptions.

Height side: v_t + c~(x, -v) v_x (1 - v_x) = 0, tested pointwise and with
quadratic test functions.  Density side: rho_t + (c~(x) rho (1 - rho))_x = 0
for spatial-only fields, solved by a finite-volume scheme whose interface flux
is min(demand upstream, supply downstream).
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field as dc_field
from typing import Callable

import numpy as np

from .speed_field import SpeedField

DIFF_REL_TOL = 5e-3
CONTINUITY_TOL = 1e-9
# largest slope jump between one-sided differences still treated as smooth;
# interpolated solver output carries jumps near 1e-2 at grid lines
KINK_TOL = 2e-2


def flux(c, rho):
    return c * rho * (1.0 - rho)


def demand(rho, c):
    """Most the cell can send: c f(rho) below 1/2, c/4 above."""
    rho = np.asarray(rho, float)
    return np.where(rho < 0.5, c * rho * (1 - rho), 0.25 * c)


def supply(rho, c):
    """Most the cell can receive: c f(rho) above 1/2, c/4 below."""
    rho = np.asarray(rho, float)
    return np.where(rho > 0.5, c * rho * (1 - rho), 0.25 * c)


def interface_flux(rho_l, c_l, rho_r, c_r):
    return np.minimum(demand(rho_l, c_l), supply(rho_r, c_r))


# ---------------------------------------------------------------- Godunov

@dataclass
class GodunovState:
    edges: np.ndarray
    rho: np.ndarray
    c: np.ndarray
    dt: float
    t: float = 0.0

    @property
    def dx(self) -> float:
        return float(self.edges[1] - self.edges[0])

    @property
    def centers(self) -> np.ndarray:
        return 0.5 * (self.edges[1:] + self.edges[:-1])

    def mass(self) -> float:
        return math.fsum(self.rho * self.dx)


@dataclass
class GodunovTrajectory:
    """Snapshots of cell densities plus the running time integral of each interface flux."""

    edges: np.ndarray
    c: np.ndarray
    rho0: np.ndarray
    times: np.ndarray
    rho: np.ndarray          # (snapshots, cells)
    cum_flux: np.ndarray     # (snapshots, interfaces)
    dt: float
    max_mass_defect: float
    max_principle_ok: bool
    cfl: float

    @property
    def centers(self) -> np.ndarray:
        return 0.5 * (self.edges[1:] + self.edges[:-1])

    @property
    def dx(self) -> float:
        return float(self.edges[1] - self.edges[0])

    def integrated_current(self, x, k: int = -1) -> np.ndarray:
        """Time integral of the flux through x up to snapshot k (linear between interfaces)."""
        return np.interp(np.asarray(x, float), self.edges, self.cum_flux[k])

    def bin_density(self, bins, k: int = -1) -> np.ndarray:
        """Mean density over each bin [bins[i], bins[i+1]] of snapshot k."""
        mass = np.concatenate([[0.0], np.cumsum(self.rho[k] * self.dx)])
        m = np.interp(np.asarray(bins, float), self.edges, mass)
        return np.diff(m) / np.diff(bins)

    def rows(self, k: int = -1) -> list[dict]:
        return [{"t": float(self.times[k]), "x": float(x), "rho": float(r)}
                for x, r in zip(self.centers, self.rho[k])]


def godunov_run(field: SpeedField, rho0: Callable, horizon: float, mesh=(-4.0, 4.0, 1 / 400),
                cfl: float = 0.5, record_times=None, record_every: int | None = None,
                conservative: bool = True) -> GodunovTrajectory:
    """Explicit supply-demand scheme for rho_t + (c~(x) f(rho))_x = 0.

    ``field`` is the particle-frame c~ and must not depend on its second
    argument.  ``mesh = (a, b, dx)``; outside the mesh the first and last
    cells are continued (transmissive boundary), so the domain should be wide
    enough that no wave reaches its ends.  ``conservative=False`` swaps in a
    non-conservative update, only useful as a negative control.
    """
    a, b, dx = mesh
    if not b > a or dx <= 0:
        raise ValueError("bad mesh")
    if horizon <= 0:
        raise ValueError("horizon must be positive")
    ncell = int(round((b - a) / dx))
    edges = a + dx * np.arange(ncell + 1)
    xc = 0.5 * (edges[1:] + edges[:-1])
    probe = np.linspace(a, b, 97)
    if not field.looks_spatial_only(probe):
        raise ValueError("the conservation-law solver needs a spatial-only field")
    c = field.spatial_profile(xc)
    rho = np.asarray(rho0(xc), float).copy()
    if np.any(rho < 0) or np.any(rho > 1):
        raise ValueError("initial density outside [0, 1]")
    cmax = float(c.max())
    if cfl > 0.5:
        warnings.warn("CFL number above 1/2 lowered to 1/2", RuntimeWarning)
        cfl = 0.5
    nsteps = max(1, math.ceil(horizon * cmax / (cfl * dx) - 1e-9))
    dt = horizon / nsteps
    courant = dt * cmax / dx

    if record_times is None:
        every = record_every or max(1, nsteps // 200)
        rec_steps = sorted(set(list(range(0, nsteps + 1, every)) + [nsteps]))
    else:
        rec_steps = sorted({int(round(t / dt)) for t in record_times} | {0, nsteps})
    rec_set = set(rec_steps)

    cl = np.concatenate([[c[0]], c, [c[-1]]])
    cum = np.zeros(ncell + 1)
    times, snaps, cums = [], [], []
    worst = 0.0
    in_range = True
    for step in range(nsteps + 1):
        if step in rec_set:
            times.append(step * dt)
            snaps.append(rho.copy())
            cums.append(cum.copy())
        if step == nsteps:
            break
        r = np.concatenate([[rho[0]], rho, [rho[-1]]])
        F = interface_flux(r[:-1], cl[:-1], r[1:], cl[1:])  # ncell + 1 interfaces
        if conservative:
            new = rho - dt / dx * (F[1:] - F[:-1])
        else:
            # upwind-in-rho derivative: not a conservation form
            new = rho - dt / dx * c * (1 - 2 * rho) * (r[1:-1] - r[:-2])
        defect = abs(math.fsum((new - rho) * dx) + dt * (F[-1] - F[0]))
        worst = max(worst, defect)
        rho = new
        if np.any(rho < -1e-14) or np.any(rho > 1 + 1e-14):
            in_range = False
        cum += dt * F
    return GodunovTrajectory(edges, c, snaps[0], np.array(times), np.array(snaps), np.array(cums),
                             dt, worst, in_range, courant)


# ---------------------------------------------------------------- weak form

@dataclass(frozen=True)
class BumpTest:
    """phi(x, t) = b((x - x0)/wx) * b(t/t1), b(s) = (1 - s^2)^3 on |s| < 1."""

    x0: float
    wx: float
    t1: float

    @staticmethod
    def _b(s):
        return np.where(np.abs(s) < 1, (1 - s * s) ** 3, 0.0)

    @staticmethod
    def _db(s):
        return np.where(np.abs(s) < 1, -6 * s * (1 - s * s) ** 2, 0.0)

    def support(self) -> tuple[float, float]:
        return self.x0 - self.wx, self.x0 + self.wx

    def phi(self, x, t):
        return self._b((x - self.x0) / self.wx) * self._b(t / self.t1)

    def phi_t(self, x, t):
        return self._b((x - self.x0) / self.wx) * self._db(t / self.t1) / self.t1

    def phi_x(self, x, t):
        return self._db((x - self.x0) / self.wx) / self.wx * self._b(t / self.t1)


@dataclass
class WeakFormReport:
    defects: list
    tests: list

    @property
    def max_defect(self) -> float:
        return max(abs(d) for d in self.defects) if self.defects else 0.0


def weak_form_check(traj: GodunovTrajectory, test_functions) -> WeakFormReport:
    """Integral of lambda phi_t + G(x, lambda) phi_x plus the initial term, per test function."""
    xc = traj.centers
    dx = traj.dx
    defects = []
    for tf in test_functions:
        lo, hi = tf.support()
        if lo < traj.edges[0] + 2 * dx or hi > traj.edges[-1] - 2 * dx:
            raise ValueError("test function support leaves the computational domain")
        if tf.t1 > traj.times[-1] + 1e-12:
            raise ValueError("test function is not supported inside the simulated time range")
        vals = []
        for k, t in enumerate(traj.times):
            lam = traj.rho[k]
            vals.append(np.sum(lam * tf.phi_t(xc, t) + flux(traj.c, lam) * tf.phi_x(xc, t)) * dx)
        space_time = float(np.trapezoid(vals, traj.times))
        initial = float(np.sum(traj.rho0 * tf.phi(xc, 0.0)) * dx)
        defects.append(space_time + initial)
    return WeakFormReport(defects, list(test_functions))


# ---------------------------------------------------------------- maximal current

@dataclass
class MaxCurrentReport:
    x: np.ndarray
    scheme: np.ndarray
    variational: np.ndarray
    tol: float

    @property
    def excess(self) -> np.ndarray:
        return self.scheme - self.variational

    @property
    def ok(self) -> bool:
        return bool(np.all(self.excess <= self.tol))

    @property
    def near_equality(self) -> np.ndarray:
        return np.abs(self.excess) <= self.tol


def maximal_current_check(traj: GodunovTrajectory, v_final: np.ndarray, v_initial: np.ndarray, x_samples,
                          tol: float = 0.02, k: int = -1) -> MaxCurrentReport:
    """Compare time-integrated currents through each x.

    On the variational side the integrated current is v0(x) - v(x, t): the
    height at x drops by one for every particle that crosses it.
    """
    xs = np.asarray(x_samples, float)
    v_final = np.asarray(v_final, float)
    v_initial = np.asarray(v_initial, float)
    if v_final.shape != xs.shape or v_initial.shape != xs.shape:
        raise ValueError("grid mismatch between samples and variational values")
    if xs.min() < traj.edges[0] or xs.max() > traj.edges[-1]:
        raise ValueError("grid mismatch: samples outside the scheme's mesh")
    return MaxCurrentReport(xs, traj.integrated_current(xs, k), v_initial - v_final, tol)


def l1_distance(traj: GodunovTrajectory, bins, rho_bins, k: int = -1) -> float:
    """Integral of |scheme - given| over the bins, with the scheme averaged per bin."""
    bins = np.asarray(bins, float)
    return float(np.sum(np.abs(traj.bin_density(bins, k) - np.asarray(rho_bins, float)) * np.diff(bins)))


# ---------------------------------------------------------------- Hamilton-Jacobi

def hamiltonian(c, p):
    return c * p * (1.0 - p)


@dataclass
class ResidualReport:
    points: np.ndarray
    residual: np.ndarray     # NaN where excluded
    status: list             # "ok" | "nondiff" | "coef_jump"

    @property
    def included(self) -> np.ndarray:
        return np.array([s == "ok" for s in self.status])

    @property
    def excluded_fraction(self) -> float:
        return 1.0 - float(self.included.mean()) if len(self.status) else 0.0

    @property
    def median(self) -> float:
        r = self.residual[self.included]
        return float(np.median(np.abs(r))) if r.size else float("nan")

    def as_dict(self) -> dict:
        return {"points": len(self.status), "excluded_fraction": self.excluded_fraction,
                "median_abs_residual": self.median,
                "max_abs_residual": float(np.nanmax(np.abs(self.residual))) if self.included.any() else None}


def _stable(a, b, rel=DIFF_REL_TOL):
    return np.abs(a - b) <= rel * np.maximum(1.0, np.maximum(np.abs(a), np.abs(b)))


def hj_residual(v: Callable, ctil: SpeedField, points, delta: float = 1e-3,
                rel_tol: float = DIFF_REL_TOL) -> ResidualReport:
    """R = v_t + c~(x, -v) v_x (1 - v_x) at numerically smooth points.

    ``v(xs, t)`` returns the current at an array of x for one t.  A point is
    kept if centered differences with steps delta and delta/2 agree in both
    variables, forward and backward differences agree too, and c~ is
    continuous at (x, -v).
    """
    pts = np.atleast_2d(np.asarray(points, float))
    res = np.full(len(pts), np.nan)
    status = []
    by_t: dict[float, list[int]] = {}
    for i, (_, t) in enumerate(pts):
        by_t.setdefault(float(t), []).append(i)
    for t, idx in by_t.items():
        if t - delta <= 0:
            raise ValueError("time samples must exceed the difference step")
        xs = pts[idx, 0]
        d1, d2 = delta, delta / 2
        xq = np.concatenate([xs, xs - d1, xs + d1, xs - d2, xs + d2])
        vx_all = v(xq, t)
        k = len(xs)
        v0_, vm1, vp1, vm2, vp2 = (vx_all[j * k:(j + 1) * k] for j in range(5))
        tm1, tp1, tm2, tp2 = (v(xs, t + s) for s in (-d1, d1, -d2, d2))
        vx1, vx2 = (vp1 - vm1) / (2 * d1), (vp2 - vm2) / (2 * d2)
        vt1, vt2 = (tp1 - tm1) / (2 * d1), (tp2 - tm2) / (2 * d2)
        # one-sided slopes catch a kink sitting exactly on the sample point,
        # where every centred difference returns the mean slope
        fwd, bwd = (vp1 - v0_) / d1, (v0_ - vm1) / d1
        tf, tb = (tp1 - v0_) / d1, (v0_ - tm1) / d1
        smooth = (_stable(vx1, vx2, rel_tol) & _stable(vt1, vt2, rel_tol)
                  & (np.abs(fwd - bwd) <= KINK_TOL) & (np.abs(tf - tb) <= KINK_TOL))
        lo, hi = ctil.envelopes(xs, -v0_)
        cont = np.abs(hi - lo) <= CONTINUITY_TOL
        R = vt2 + lo * vx2 * (1 - vx2)
        for j, i in enumerate(idx):
            if not smooth[j]:
                status_i = "nondiff"
            elif not cont[j]:
                status_i = "coef_jump"
            else:
                status_i = "ok"
                res[i] = R[j]
            status.append((i, status_i))
    status = [s for _, s in sorted(status)]
    return ResidualReport(pts, res, status)


# ---------------------------------------------------------------- viscosity

@dataclass
class ViscosityReport:
    points: np.ndarray
    sub_worst: np.ndarray    # max over touching-above tests of q + c_low H(p); NaN if none
    super_worst: np.ndarray  # min over touching-below tests of q + c_high H(p); NaN if none
    tol: float
    tested: np.ndarray = dc_field(default=None)

    @property
    def inconclusive(self) -> np.ndarray:
        return np.isnan(self.sub_worst) & np.isnan(self.super_worst)

    @property
    def counterexamples(self) -> int:
        sub_bad = np.nan_to_num(self.sub_worst, nan=-np.inf) > self.tol
        sup_bad = np.nan_to_num(self.super_worst, nan=np.inf) < -self.tol
        return int(np.sum(sub_bad | sup_bad))

    @property
    def ok(self) -> bool:
        return self.counterexamples == 0


def viscosity_spot_check(v: Callable, ctil: SpeedField, points, radius: float = 5e-3,
                         p_grid=None, kappas=None, tol: float = 0.02,
                         rings: int = 2) -> ViscosityReport:
    """Envelope-selected sub/supersolution inequalities with quadratic test functions.

    phi = v(x0, t0) + p dx + q dt +- (kappa/2)(dx^2 + dt^2).  For each (p, kappa)
    the set of q making phi touch v from above (below) on the sampled disk of
    the given radius is an interval, computed exactly from the samples; the
    inequality is tested at its worst end.  Even where v is smooth a test
    with curvature kappa passes slack of about (1 + c_high) * kappa * radius / 2
    into the inequality, so by default kappa runs up to
    tol / (radius * (1 + c_high)) at each point.  Secant slopes of v at the
    point are added to ``p_grid`` so that smooth points get touching tests.
    """
    pts = np.atleast_2d(np.asarray(points, float))
    p_grid = np.linspace(-0.1, 1.1, 121) if p_grid is None else np.asarray(p_grid, float)
    offs = np.array([radius * (k + 1) / rings for k in range(rings)])
    steps = np.concatenate([-offs[::-1], [0.0], offs])
    DX, DT = np.meshgrid(steps, steps, indexing="ij")
    inside = DX ** 2 + DT ** 2 <= radius ** 2 + 1e-15
    DX, DT = DX[inside], DT[inside]
    sub_w = np.full(len(pts), np.nan)
    sup_w = np.full(len(pts), np.nan)
    for i, (x0, t0) in enumerate(pts):
        V = np.empty(len(DX))
        for dt_ in np.unique(DT):
            sel = DT == dt_
            V[sel] = v(x0 + DX[sel], t0 + dt_)
        centre = V[(DX == 0) & (DT == 0)][0]
        lo, hi = ctil.envelopes(np.array([x0]), np.array([-centre]))
        c_lo, c_hi = float(lo[0]), float(hi[0])
        D = V - centre
        moving = DT != 0
        flat = ~moving & (DX != 0)
        secants = D[flat] / DX[flat]
        ps = np.concatenate([p_grid, secants, [0.5 * (secants.min() + secants.max())]])
        if kappas is None:
            kmax = tol / (radius * (1.0 + c_hi))
            ks = (0.0, 0.5 * kmax, kmax)
        else:
            ks = kappas
        for kappa in ks:
            quad = 0.5 * kappa * (DX ** 2 + DT ** 2)
            for p in ps:
                # above: D <= p dx + q dt + quad
                need = D - p * DX - quad
                if np.all(need[flat] <= 1e-12):
                    rhs = need[moving] / DT[moving]
                    qlo = rhs[DT[moving] > 0].max(initial=-np.inf)
                    qhi = rhs[DT[moving] < 0].min(initial=np.inf)
                    if qlo <= qhi and np.isfinite(qhi):
                        val = qhi + hamiltonian(c_lo, p)
                        sub_w[i] = val if np.isnan(sub_w[i]) else max(sub_w[i], val)
                # below: D >= p dx + q dt - quad
                need = D - p * DX + quad
                if np.all(need[flat] >= -1e-12):
                    rhs = need[moving] / DT[moving]
                    qhi = rhs[DT[moving] > 0].min(initial=np.inf)
                    qlo = rhs[DT[moving] < 0].max(initial=-np.inf)
                    if qlo <= qhi and np.isfinite(qlo):
                        val = qlo + hamiltonian(c_hi, p)
                        sup_w[i] = val if np.isnan(sup_w[i]) else min(sup_w[i], val)
    return ViscosityReport(pts, sub_w, sup_w, tol)
