"""TASEP with height- and space-dependent rates via the graphical construction.

Heights are tracked in the form J_i = -z_i, which is nondecreasing in time
with J_{i-1} - J_i in {0, 1}.  Site i moves from level j - 1 to j when its
left neighbour is at level >= j and its right neighbour at level >= j - 1;
it then waits for the next ring of the Poisson clock attached to the clock
site (I, j - 1 + hoff), whose rate is c((I + J)/n, J/n) with J = j - 1 + hoff.

Because a growth site stays enabled until it fires, the time T_i(j) at which
site i reaches level j obeys

    T_i(j) = next_ring_{i, j-1}( max(T_{i-1}(j), T_{i+1}(j-1)) ),

and the whole trajectory is computed level by level.  Two clock engines are
provided:

* ``poisson``: clocks are genuine Poisson processes with ring gaps
  E(seed, u, v, r)/rate, r = 0, 1, ...  This is the shared-clock coupling
  under which the envelope identity holds exactly.
* ``timer``: the waiting time after enablement is E(seed, u, v, 0)/rate.  By
  memorylessness this has the same law, and it makes T_i(j) coincide exactly
  with a last-passage recursion in the same environment.

``simulate_events`` is an independent priority-queue implementation of the
``poisson`` engine, used to cross-check the recursion on small windows.
"""
from __future__ import annotations

import heapq
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field as dc_field
from typing import Callable

import numpy as np
from numba import njit

from .lpp_micro import Environment
from .rng import derive_seed, std_exponential, uniforms

ENGINES = ("timer", "poisson")
_BERNOULLI_STREAM = 0x5EED
KAPPA = 4.0


class BufferOverrun(RuntimeError):
    """The finite window was too small: the frozen boundary reached a reported site."""


# ---------------------------------------------------------------- initial data

@dataclass(frozen=True)
class InitialProfile:
    """Initial density rule.

    ``v0`` is the integrated density with v0(0) = 0; ``random`` selects
    independent Bernoulli(rho0(i/n)) occupations instead of the deterministic
    rounding of n*v0.
    """

    rho0: Callable[[np.ndarray], np.ndarray]
    v0: Callable[[np.ndarray], np.ndarray]
    random: bool = False
    label: str = "custom"


def step_profile() -> InitialProfile:
    """rho0 = 1{x <= 0}."""
    return riemann_profile(1.0, 0.0, label="step")


def riemann_profile(left: float, right: float, at: float = 0.0, label: str | None = None) -> InitialProfile:
    for r in (left, right):
        if not 0.0 <= r <= 1.0:
            raise ValueError("density outside [0, 1]")

    def rho0(x):
        return np.where(np.asarray(x, float) <= at, left, right)

    def v0(x):
        x = np.asarray(x, float)
        base = left * min(at, 0.0) + right * max(at, 0.0) if at != 0 else 0.0
        # integral of rho0 from 0 to x
        return left * np.minimum(x, at) + right * np.maximum(x, at) - base

    return InitialProfile(rho0, v0, False, label or f"riemann:{left},{right}")


def flat_profile(rho: float) -> InitialProfile:
    return riemann_profile(rho, rho, label=f"flat:{rho}")


def bernoulli_profile(p: float) -> InitialProfile:
    if not 0.0 <= p <= 1.0:
        raise ValueError("density outside [0, 1]")
    return InitialProfile(lambda x: np.full(np.shape(x), p), lambda x: p * np.asarray(x, float), True, f"bernoulli:{p}")


def tabulated_profile(xs, rhos) -> InitialProfile:
    """Piecewise-linear density through (xs, rhos), constant beyond the ends."""
    xs = np.asarray(xs, float)
    rhos = np.asarray(rhos, float)
    if np.any(rhos < 0) or np.any(rhos > 1):
        raise ValueError("density outside [0, 1]")
    if np.any(np.diff(xs) <= 0):
        raise ValueError("density table x values must increase")
    cum = np.concatenate([[0.0], np.cumsum(0.5 * (rhos[1:] + rhos[:-1]) * np.diff(xs))])

    def rho0(x):
        return np.interp(x, xs, rhos)

    def prim(x):
        x = np.asarray(x, float)
        inside = np.interp(x, xs, cum)
        # exact integral of the piecewise-linear interpolant
        k = np.clip(np.searchsorted(xs, x, side="right") - 1, 0, len(xs) - 2)
        dx = np.clip(x, xs[0], xs[-1]) - xs[k]
        slope = (rhos[k + 1] - rhos[k]) / (xs[k + 1] - xs[k])
        inside = cum[k] + rhos[k] * dx + 0.5 * slope * dx * dx
        inside = np.where(x < xs[0], rhos[0] * (x - xs[0]), inside)
        inside = np.where(x > xs[-1], cum[-1] + rhos[-1] * (x - xs[-1]), inside)
        return inside

    off = float(prim(0.0))
    return InitialProfile(rho0, lambda x: prim(x) - off, False, "table")


def parse_init(spec: str) -> InitialProfile:
    """``step`` | ``bernoulli:p`` | ``flat:r`` | ``riemann:l,r`` | ``file:path`` (CSV x,rho)."""
    spec = spec.strip()
    if spec == "step":
        return step_profile()
    kind, _, arg = spec.partition(":")
    try:
        if kind == "bernoulli":
            return bernoulli_profile(float(arg))
        if kind == "flat":
            return flat_profile(float(arg))
        if kind == "riemann":
            left, right = (float(s) for s in arg.split(","))
            return riemann_profile(left, right)
        if kind == "file":
            data = np.loadtxt(arg, delimiter=",", comments="#", ndmin=2, skiprows=_header_rows(arg))
            return tabulated_profile(data[:, 0], data[:, 1])
    except (ValueError, OSError) as exc:
        raise ValueError(f"bad initial profile {spec!r}: {exc}") from exc
    raise ValueError(f"unknown initial profile {spec!r}")


def _header_rows(path) -> int:
    with open(path) as fh:
        first = fh.readline()
    try:
        [float(s) for s in first.split(",")]
        return 0
    except ValueError:
        return 1


def initial_heights(profile: InitialProfile, n: int, sites: np.ndarray, seed: int = 0) -> np.ndarray:
    """z_i(0) at the given consecutive integer sites, with z_0(0) = 0."""
    sites = np.asarray(sites, np.int64)
    lo, hi = int(sites[0]), int(sites[-1])
    if profile.random:
        # occupations on every site between 0 and the window, so heights do not
        # depend on which window is asked for
        a, b = min(lo, 0), max(hi, 0)
        occ_sites = np.arange(a, b)
        p = np.asarray(profile.rho0(occ_sites / n), float) * np.ones(occ_sites.size)
        if np.any(p < 0) or np.any(p > 1):
            raise ValueError("density outside [0, 1]")
        eta = (uniforms(seed, occ_sites, 0, _BERNOULLI_STREAM) < p).astype(np.int64)
        cum = np.concatenate([[0], np.cumsum(eta)])  # cum[m] = sum eta over a .. a+m-1
        z_all = cum - cum[-a]  # z at sites a .. b, zero at site 0
        return z_all[sites - a]
    v = np.asarray(profile.v0(sites / n), float)
    z = np.floor(n * v + 1e-9).astype(np.int64)
    z -= int(np.floor(n * float(profile.v0(np.array(0.0))) + 1e-9))
    dz = np.diff(z)
    if np.any(dz < 0) or np.any(dz > 1):
        raise ValueError("initial profile must have density in [0, 1]")
    return z


# ---------------------------------------------------------------- kernel

@njit(cache=True, nogil=True)
def _next_ring(seed, u, v, rate, s, poisson):
    if not poisson:
        return s + std_exponential(seed, u, v, 0) / rate
    t = 0.0
    r = 0
    while True:
        t += std_exponential(seed, u, v, r) / rate
        if t > s:
            return t
        r += 1


@njit(cache=True, nogil=True)
def _level_block(J0, clock_site, hoff, j0, j1, lo, rates, prev, cur, F, seed, horizon, poisson,
                 free_boundary, rec_times, counts, ev_t, ev_i, ev_j, n_ev, trace):
    """Process levels j0 .. j1-1.

    ``prev`` holds T at level j0 - 1 (valid where reached), ``F`` the rightmost
    interior site reached at that level.  rates[r, i - lo] is the clock rate for
    level j0 + r at site i.  Returns (F, n_ev, done, last_level).
    """
    W = J0.shape[0]
    inf = np.inf
    done = False
    for j in range(j0, j1):
        # boundary sites
        for b in (0, W - 1):
            if J0[b] >= j or free_boundary:
                cur[b] = 0.0
            else:
                cur[b] = inf
        # first interior site below level j
        s = 1
        while s < W - 1 and J0[s] >= j:
            cur[s] = 0.0
            s += 1
        end = min(F, W - 2)
        newF = s - 1
        any_move = False
        for i in range(s, end + 1):
            if J0[i - 1] >= j:
                left = 0.0
            else:
                left = cur[i - 1]
            if J0[i + 1] >= j - 1:
                right = 0.0
            elif i + 1 == W - 1:
                right = 0.0 if free_boundary else inf
            elif i + 1 > F:
                right = inf
            else:
                right = prev[i + 1]
            st = left if left > right else right
            if st > horizon:
                cur[i] = inf
                continue
            jc = j - 1 + hoff
            ic = clock_site[i]
            t = _next_ring(seed, ic + jc, jc, rates[j - j0, i - lo], st, poisson)
            if t > horizon:
                cur[i] = inf
                continue
            cur[i] = t
            newF = i
            any_move = True
            for r in range(rec_times.shape[0]):
                if t <= rec_times[r]:
                    counts[r, i] += 1
            if trace:
                if n_ev < ev_t.shape[0]:
                    ev_t[n_ev] = t
                    ev_i[n_ev] = i
                    ev_j[n_ev] = j
                n_ev += 1
        # stale entries beyond the loop are never read: guarded by newF
        F = newF
        prev, cur = cur, prev
        if not any_move and j > J0[1]:
            done = True
            return prev, cur, F, n_ev, done, j
    return prev, cur, F, n_ev, done, j1 - 1


@dataclass
class LevelRun:
    """Raw output of one J-process run."""

    J0: np.ndarray
    rec_times: np.ndarray
    J: np.ndarray  # (len(rec_times), W)
    events: np.ndarray | None  # rows (time, local index, level)


def run_levels(env: Environment, J0: np.ndarray, clock_site: np.ndarray, hoff: int, horizon: float,
               rec_times, engine: str = "timer", free_boundary: bool = False, trace: bool = False,
               block_cells: int = 1 << 20, max_levels: int | None = None) -> LevelRun:
    """Evolve a J-process on a finite window up to microscopic time ``horizon``."""
    if engine not in ENGINES:
        raise ValueError(f"engine must be one of {ENGINES}")
    J0 = np.ascontiguousarray(J0, np.int64)
    clock_site = np.ascontiguousarray(clock_site, np.int64)
    W = J0.size
    if W < 3:
        raise ValueError("window needs at least three sites")
    if np.any(np.diff(J0) > 0) or np.any(np.diff(J0) < -1):
        raise ValueError("initial levels violate the exclusion constraint")
    rec = np.ascontiguousarray(np.sort(np.asarray(rec_times, float)))
    counts = np.zeros((rec.size, W), np.int64)
    prev = np.zeros(W)
    cur = np.zeros(W)
    cap = 1024 if trace else 0
    ev_t, ev_i, ev_j = np.zeros(cap), np.zeros(cap, np.int64), np.zeros(cap, np.int64)
    n_ev = 0
    F = W - 2
    j = int(J0[-1]) + 1
    # level j0 - 1 = J0[-1]: every site has reached it at time 0
    if max_levels is None:
        max_levels = int(J0[0] - J0[-1]) + 10 * int(horizon * 10 + 100)
    stop = int(J0[-1]) + 1 + max_levels
    field = env.field
    n = env.n
    particle = field.shear()
    # the clock at (I, J) has rate c~(I/n, J/n); it depends on I alone for these fields
    by_site = particle.kind in ("spatial_only", "constant")
    done = False
    guess = 64  # levels per block; doubles, so short runs stay cheap
    while not done and j < stop:
        # interior sites that can move within the next levels
        s = int(np.searchsorted(-J0, -j, side="left"))  # first index with J0 < j
        width = max(1, min(F, W - 2) - max(s - 64, 1) + 1)
        nlev = max(1, min(stop - j, block_cells // width, guess))
        guess *= 2
        lo = max(1, int(np.searchsorted(-J0, -(j + nlev - 1), side="left")))
        hi = max(lo, min(F, W - 2))
        levels = np.arange(j, j + nlev)
        jc = (levels - 1 + hoff)[:, None]
        ic = clock_site[lo:hi + 1][None, :]
        if by_site:
            row = particle(ic / n, np.zeros(ic.shape))
            rates = np.ascontiguousarray(np.broadcast_to(row, (nlev, hi - lo + 1)))
        else:
            rates = np.ascontiguousarray(field((ic + jc) / n, np.broadcast_to(jc, (nlev, hi - lo + 1)) / n))
        if np.any(~(rates > 0)) or not np.all(np.isfinite(rates)):
            raise ValueError("speed field must be positive and finite")
        while True:
            prev_s, cur_s = prev.copy(), cur.copy()
            counts_s = counts.copy()
            prev, cur, F_new, n_new, done, last = _level_block(J0, clock_site, np.int64(hoff), np.int64(j), np.int64(j + nlev),
                                                    np.int64(lo), rates, prev, cur, np.int64(F), np.int64(env.seed),
                                                    float(horizon), engine == "poisson", free_boundary, rec, counts,
                                                    ev_t, ev_i, ev_j, np.int64(n_ev), trace)
            if n_new <= ev_t.size:
                break
            # grow the event log and redo the block
            prev, cur, counts = prev_s, cur_s, counts_s
            cap = 2 * n_new
            ev_t = np.concatenate([ev_t, np.zeros(cap - ev_t.size)])
            ev_i = np.concatenate([ev_i, np.zeros(cap - ev_i.size, np.int64)])
            ev_j = np.concatenate([ev_j, np.zeros(cap - ev_j.size, np.int64)])
        F, n_ev = int(F_new), int(n_new)
        j = last + 1
    if not done:
        raise RuntimeError("level cap reached before the horizon; raise max_levels")
    events = None
    if trace:
        events = np.column_stack([ev_t[:n_ev], ev_i[:n_ev].astype(float), ev_j[:n_ev].astype(float)])
        events = events[np.lexsort((events[:, 1], events[:, 0]))]
    return LevelRun(J0, rec, J0[None, :] + counts, events)


# ---------------------------------------------------------------- trajectories

@dataclass
class HeightTrajectory:
    """Height snapshots z_i(t) on sites window[0] .. window[1].

    Times are microscopic.  ``events`` (when traced) has rows
    (time, site, new height).
    """

    env: Environment
    profile: InitialProfile
    window: tuple[int, int]
    z0: np.ndarray
    init_seed: int = 0
    times: list = dc_field(default_factory=list)
    heights: list = dc_field(default_factory=list)
    events: np.ndarray | None = None
    engine: str = "timer"

    @property
    def n(self) -> int:
        return self.env.n

    @property
    def sites(self) -> np.ndarray:
        return np.arange(self.window[0], self.window[1] + 1)

    def occupations(self, k: int = -1) -> np.ndarray:
        """eta at sites window[0] .. window[1] - 1 for snapshot k (z0 if none)."""
        z = self.heights[k] if self.heights else self.z0
        return np.diff(z)

    def snapshot(self, t: float) -> np.ndarray:
        return self.heights[self.times.index(t)]


def init_heights(profile: InitialProfile, n: int, window, env: Environment | None = None,
                 seed: int = 0) -> HeightTrajectory:
    """Initial heights on ``window``; ``env`` carries the LPP-frame field and clock seed."""
    L, U = int(window[0]), int(window[1])
    if U - L < 2:
        raise ValueError("window needs at least three sites")
    if env is None:
        from .speed_field import constant
        env = Environment(constant(1.0), n, seed)
    z0 = initial_heights(profile, n, np.arange(L, U + 1), seed)
    return HeightTrajectory(env, profile, (L, U), z0, init_seed=seed)


def buffer_width(env: Environment, window, z0, horizon: float) -> int:
    """B = ceil(kappa * r_high * T * n) with T*n = horizon (microscopic)."""
    n = env.n
    particle = env.field.shear()
    L, U = window
    r_high = 1.0
    for _ in range(2):
        B = math.ceil(KAPPA * r_high * horizon)
        jlo = -int(z0.max()) - 1
        jhi = -int(z0.min()) + B + 1
        _, r_high = particle.bounds_on(((L - B) / n, (U + B) / n, jlo / n, jhi / n))
    return max(2, math.ceil(KAPPA * r_high * horizon))


def evolve(traj: HeightTrajectory, horizon: float, record_times=None, engine: str = "timer",
           trace: bool = False, check_buffer: bool = True, pad: int | None = None) -> HeightTrajectory:
    """Run the dynamics up to microscopic time ``horizon``.

    The window is padded by the buffer rule and the outermost sites are frozen.
    With ``check_buffer`` the run is repeated with free boundary sites (which
    can only make events earlier); if the reported heights differ, the frozen
    boundary influenced the window and :class:`BufferOverrun` is raised.
    """
    if horizon < 0:
        raise ValueError("horizon must be nonnegative")
    rec = [horizon] if record_times is None else sorted(float(t) for t in record_times)
    if rec and rec[-1] > horizon:
        raise ValueError("record times beyond the horizon")
    L, U = traj.window
    B = buffer_width(traj.env, traj.window, traj.z0, horizon) if pad is None else int(pad)
    sites = np.arange(L - B, U + B + 1)
    z0 = initial_heights(traj.profile, traj.n, sites, traj.init_seed)
    J0 = -z0
    frozen = run_levels(traj.env, J0, sites, 0, horizon, rec, engine, False, trace)
    rep = slice(B, B + U - L + 1)
    if check_buffer:
        free = run_levels(traj.env, J0, sites, 0, horizon, rec, engine, True, False)
        if not np.array_equal(free.J[:, rep], frozen.J[:, rep]):
            raise BufferOverrun(f"boundary influence reached the window [{L}, {U}] with pad {B}")
    out = HeightTrajectory(traj.env, traj.profile, traj.window, traj.z0.copy(), traj.init_seed, engine=engine)
    out.times = list(rec)
    out.heights = [-frozen.J[k, rep] for k in range(len(rec))]
    if trace:
        ev = frozen.events
        keep = (ev[:, 1] >= B) & (ev[:, 1] < B + U - L + 1)
        ev = ev[keep]
        out.events = np.column_stack([ev[:, 0], ev[:, 1] - B + L, -ev[:, 2]])
    return out


# ---------------------------------------------------------------- auxiliary processes

def wedge_levels(local_sites) -> np.ndarray:
    """xi_i(0): 0 for i >= 0, -i for i < 0."""
    return np.maximum(-np.asarray(local_sites, np.int64), 0)


@dataclass
class AuxProcess:
    k: int
    anchor: tuple[int, int]  # (k, -z_k(0))
    sites: np.ndarray  # local indices i (global site i + k)
    times: np.ndarray
    xi: np.ndarray  # (len(times), len(sites))
    events: np.ndarray | None  # rows (time, local site, new level)


def evolve_aux(env: Environment, k: int, zk0: int, horizon: float, global_window, record_times=None,
               engine: str = "timer", trace: bool = False, seed_override: int | None = None) -> AuxProcess:
    """Step-initial process xi^k on global sites ``global_window`` with frozen ends.

    The clocks are those of the main process shifted by (k, -z_k(0)).
    """
    L, U = global_window
    sites = np.arange(L - k, U - k + 1)
    J0 = wedge_levels(sites)
    rec = [horizon] if record_times is None else sorted(record_times)
    e = env if seed_override is None else Environment(env.field, env.n, seed_override, env.origin)
    run = run_levels(e, J0, sites + k, -int(zk0), horizon, rec, engine, False, trace)
    return AuxProcess(int(k), (int(k), -int(zk0)), sites, np.asarray(rec, float), run.J, run.events)


def xi_passage_times(aux: AuxProcess) -> dict:
    """{(i, j): first time xi_i >= j} from a traced run."""
    out = {}
    for t, i, j in aux.events:
        out[(int(aux.sites[int(i)]), int(j))] = float(t)
    return out


# ---------------------------------------------------------------- envelope identity

@dataclass
class EnvelopeReport:
    checked_times: int
    checked_pairs: int
    violations: list
    inconclusive: list
    anchors: tuple[int, int]

    @property
    def ok(self) -> bool:
        return not self.violations

    def as_dict(self) -> dict:
        return {"checked_times": self.checked_times, "checked_pairs": self.checked_pairs,
                "violations": self.violations[:50], "n_violations": len(self.violations),
                "inconclusive": self.inconclusive[:50], "n_inconclusive": len(self.inconclusive),
                "anchors": list(self.anchors), "pass": self.ok}


def _step_values(times_sorted: np.ndarray, base: int, query: np.ndarray) -> np.ndarray:
    """Level base + #{events <= t} for each query time."""
    return base + np.searchsorted(times_sorted, query, side="right")


def check_envelope(env: Environment, profile: InitialProfile, window, horizon: float,
                   anchors=None, engine: str = "poisson", aux_seed: int | None = None,
                   init_seed: int = 0) -> EnvelopeReport:
    """Check z_i(t) = max_k { z_k(0) - xi^k_{i-k}(t) } at every event time.

    All processes live on the same global window with frozen end sites, which
    keeps the identity exact on the finite system.  ``aux_seed`` decouples the
    auxiliary clocks (negative control).  A strict inequality in the
    direction the identity can fail only through missing anchors is reported
    as inconclusive when the anchors do not cover the window.
    """
    L, U = int(window[0]), int(window[1])
    sites = np.arange(L, U + 1)
    z0 = initial_heights(profile, env.n, sites, init_seed)
    main = run_levels(env, -z0, sites, 0, horizon, [horizon], engine, False, True)
    if anchors is None:
        anchors = (L, U)
    ka, kb = int(anchors[0]), int(anchors[1])
    full_cover = ka <= L and kb >= U
    ks = np.arange(max(ka, L), min(kb, U) + 1)
    aux = [evolve_aux(env, int(k), int(z0[k - L]), horizon, (L, U), [horizon], engine, True,
                      seed_override=aux_seed) for k in ks]
    W = sites.size
    # event times per (process, global site)
    def per_site(ev, shift):
        buckets = [[] for _ in range(W)]
        for t, i, _ in ev:
            buckets[int(i) + shift].append(t)
        return [np.asarray(b) for b in buckets]

    z_ev = per_site(main.events, 0)
    aux_ev = [per_site(a.events, 0) for a in aux]  # local index i is already global - L
    violations, inconclusive = [], []
    n_times = 0
    n_pairs = 0
    for g in range(W):
        times = [np.zeros(1), z_ev[g]] + [a[g] for a in aux_ev]
        tq = np.unique(np.concatenate(times))
        n_times += tq.size
        J_main = _step_values(z_ev[g], int(-z0[g]), tq)
        best = np.full(tq.size, np.iinfo(np.int64).max)
        for a, ev in zip(aux, aux_ev):
            local0 = int(wedge_levels([g + L - a.k])[0])
            vals = _step_values(ev[g], local0, tq) + (-int(z0[a.k - L]))
            np.minimum(best, vals, out=best)
        n_pairs += tq.size
        # z = max_k(z_k(0) - xi) is J = min_k(J_k(0) + xi)
        bad = np.nonzero(best != J_main)[0]
        for b in bad:
            rec = {"site": int(g + L), "time": float(tq[b]), "z": int(-J_main[b]), "envelope": int(-best[b])}
            if best[b] > J_main[b] and not full_cover:
                inconclusive.append(rec)
            else:
                violations.append(rec)
    return EnvelopeReport(n_times, n_pairs, violations, inconclusive, (int(ks[0]), int(ks[-1])))


# ---------------------------------------------------------------- reference event engine

def simulate_events(env: Environment, J0, clock_site, hoff: int, horizon: float):
    """Priority-queue simulation of the Poisson engine with frozen end sites.

    Returns the event list (time, local site, new level) in time order.  Each
    enabled site holds one scheduled firing; sites are rescheduled when a
    neighbour's move enables them.  Rings of a clock that happen while its
    site is not enabled at that level are skipped, exactly as in the
    graphical construction.
    """
    J = np.array(J0, np.int64)
    W = J.size
    cs = np.asarray(clock_site, np.int64)
    lpp_field = env.field

    def rate(i, level):
        jc = level - 1 + hoff
        return float(lpp_field((cs[i] + jc) / env.n, jc / env.n))

    def enabled(i):
        return 0 < i < W - 1 and J[i - 1] >= J[i] + 1 and J[i + 1] >= J[i]

    def next_ring(i, s):
        level = J[i] + 1
        jc = level - 1 + hoff
        lam = rate(i, level)
        t, r = 0.0, 0
        while True:
            t += float(std_exponential(np.int64(env.seed), np.int64(cs[i] + jc), np.int64(jc), np.int64(r))) / lam
            if t > s:
                return t
            r += 1

    heap = []
    scheduled = {}
    for i in range(W):
        if enabled(i):
            t = next_ring(i, 0.0)
            scheduled[i] = t
            heapq.heappush(heap, (t, i))
    events = []
    while heap:
        t, i = heapq.heappop(heap)
        if scheduled.get(i) != t:
            continue
        if t > horizon:
            break
        J[i] += 1
        del scheduled[i]
        events.append((t, i, int(J[i])))
        for nb in (i - 1, i, i + 1):
            if 0 <= nb < W and nb not in scheduled and enabled(nb):
                tn = next_ring(nb, t)
                scheduled[nb] = tn
                heapq.heappush(heap, (tn, nb))
    return np.array(events, float).reshape(-1, 3)


# ---------------------------------------------------------------- replicas

def run_replicas(field_lpp, profile: InitialProfile, n: int, t_macro: float, window, replicas: int,
                 seed: int, engine: str = "timer", threads: int = 1, record_times=None) -> list[HeightTrajectory]:
    """Independent replicas; replica r uses clock and initial seeds derived from (seed, r)."""
    horizon = n * t_macro
    rec = None if record_times is None else [n * t for t in record_times]

    def one(r):
        s = derive_seed(seed, r)
        env = Environment(field_lpp, n, s)
        traj = init_heights(profile, n, window, env, seed=derive_seed(seed, 10_000 + r))
        return evolve(traj, horizon, rec, engine)

    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        return list(pool.map(one, range(replicas)))
