"""Inhomogeneous exponential environments and last-passage times.

Site (i, j) of an environment carries the weight

    tau(i, j) = E(seed, i + a, j + b) / c((i + a)/n, (j + b)/n)

where E is a counter-based Exp(1) draw and (a, b) is the environment's origin
shift.  Passage times include the weights of both endpoints.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from numba import njit

from .rng import derive_seed, exponentials, std_exponential
from .speed_field import SpeedField

DEFAULT_MEM_CAP_MB = 2048
INDEX_LIMIT = 2 ** 62


class MemoryBudgetError(RuntimeError):
    pass


@dataclass(frozen=True)
class Environment:
    field: SpeedField  # LPP frame
    n: int
    seed: int
    origin: tuple[int, int] = (0, 0)

    def __post_init__(self):
        if self.n <= 0:
            raise ValueError("scale n must be a positive integer")

    def shifted(self, a: int, b: int) -> "Environment":
        return Environment(self.field, self.n, self.seed, (self.origin[0] + a, self.origin[1] + b))

    def rates(self, i, j) -> np.ndarray:
        """c(i/n, j/n) at local sites, i.e. the inverse mean weight."""
        gi = np.asarray(i, np.int64) + self.origin[0]
        gj = np.asarray(j, np.int64) + self.origin[1]
        vals = self.field(gi / self.n, gj / self.n)
        if np.any(~(vals > 0)) or not np.all(np.isfinite(vals)):
            raise ValueError("speed field must be positive and finite at every lattice site")
        return vals

    def weights(self, i, j) -> np.ndarray:
        i, j = np.broadcast_arrays(np.asarray(i, np.int64), np.asarray(j, np.int64))
        _check_index(i, j, self.origin)
        e = exponentials(self.seed, i + self.origin[0], j + self.origin[1], 0)
        return e / self.rates(i, j)


def sample_weight(env: Environment, site) -> float:
    return float(env.weights(site[0], site[1]))


def _check_index(i, j, origin):
    if i.size and (np.abs(i + origin[0]).max() >= INDEX_LIMIT or np.abs(j + origin[1]).max() >= INDEX_LIMIT):
        raise OverflowError("lattice index outside the supported range")


@dataclass(frozen=True)
class PassageGrid:
    """G values on start + [0, w] x [0, h]; ``values[di, dj]``.

    For ``frame == "wedge"`` the array is indexed in corner coordinates
    (u - 1, v - 1) with u = i + j, v = j; use :meth:`wedge_value`.
    """

    start: tuple[int, int]
    extent: tuple[int, int]
    values: np.ndarray
    frame: str = "corner"

    def at(self, i: int, j: int) -> float:
        return float(self.values[i - self.start[0], j - self.start[1]])

    def wedge_value(self, i: int, j: int) -> float:
        if self.frame != "wedge":
            raise ValueError("not a wedge grid")
        if not in_wedge(i, j):
            raise ValueError(f"site {(i, j)} outside the wedge")
        if on_wedge_boundary(i, j):
            return 0.0
        return float(self.values[i + j - 1, j - 1])


def in_wedge(i: int, j: int) -> bool:
    return j >= (-i if i <= 0 else 0)


def on_wedge_boundary(i: int, j: int) -> bool:
    return (i <= 0 and j == -i) or (i > 0 and j == 0)


# ---------------------------------------------------------------- kernels

@njit(cache=True, nogil=True)
def lpp_from_weights(w):
    """Corner recursion G = max(left, below) + w on a full array."""
    nx, ny = w.shape
    g = np.empty_like(w)
    for i in range(nx):
        for j in range(ny):
            best = -np.inf
            if i > 0:
                best = g[i - 1, j]
            if j > 0 and g[i, j - 1] > best:
                best = g[i, j - 1]
            if best == -np.inf:
                best = 0.0
            g[i, j] = best + w[i, j]
    return g


@njit(cache=True, nogil=True)
def _rows_block(seed, gu0, gv0, rates, prev, first):
    """Advance a rolling row through a block of rows.

    rates[i, r] is the speed at column i of row r of the block; prev holds the
    finished row just below the block.  Weights are drawn on the fly.
    """
    nx, nr = rates.shape
    cur = prev.copy()
    for r in range(nr):
        gv = gv0 + r
        for i in range(nx):
            w = std_exponential(seed, gu0 + i, gv, 0) / rates[i, r]
            best = -np.inf
            if i > 0:
                best = cur[i - 1]
            if not (first and r == 0) and cur[i] > best:
                best = cur[i]
            if best == -np.inf:
                best = 0.0
            cur[i] = best + w
    return cur


def _budget(nbytes: float, mem_cap_mb: float):
    if nbytes > mem_cap_mb * 2 ** 20:
        raise MemoryBudgetError(f"request needs {nbytes / 2**20:.0f} MB, cap is {mem_cap_mb} MB")


def passage_rect(env: Environment, start=(0, 0), extent=(0, 0), mem_cap_mb: float = DEFAULT_MEM_CAP_MB) -> PassageGrid:
    """Full grid of G(start, v) for v in start + [0, w] x [0, h]."""
    w, h = int(extent[0]), int(extent[1])
    if w < 0 or h < 0:
        raise ValueError("extent must be nonnegative")
    if max(abs(start[0]) + w, abs(start[1]) + h) >= INDEX_LIMIT:
        raise OverflowError("extent overflows the lattice index range")
    _budget(3 * 8.0 * (w + 1) * (h + 1), mem_cap_mb)
    ii, jj = np.meshgrid(np.arange(start[0], start[0] + w + 1), np.arange(start[1], start[1] + h + 1), indexing="ij")
    values = lpp_from_weights(env.weights(ii, jj))
    return PassageGrid((int(start[0]), int(start[1])), (w, h), values, "corner")


def passage_time(env: Environment, start, end, mem_cap_mb: float = DEFAULT_MEM_CAP_MB) -> float:
    """G(start, end) with O(width) working memory (rolling rows)."""
    w, h = end[0] - start[0], end[1] - start[1]
    if w < 0 or h < 0:
        raise ValueError("end must dominate start")
    gu0, gv0 = start[0] + env.origin[0], start[1] + env.origin[1]
    cols = np.arange(w + 1)
    rows_per_block = max(1, min(h + 1, int(8 * 2 ** 20 // (8 * (w + 1)))))
    _budget(8.0 * (w + 1) * (rows_per_block + 2), mem_cap_mb)
    row = np.zeros(w + 1)
    r0 = 0
    while r0 <= h:
        r1 = min(h + 1, r0 + rows_per_block)
        ii, jj = np.meshgrid(start[0] + cols, np.arange(start[1] + r0, start[1] + r1), indexing="ij")
        rates = np.ascontiguousarray(env.rates(ii, jj))
        row = _rows_block(np.int64(env.seed), np.int64(gu0), np.int64(gv0 + r0), rates, row, r0 == 0)
        r0 = r1
    return float(row[-1])


def passage_wedge(env: Environment, root=(0, 0), extent=(0, 0), mem_cap_mb: float = DEFAULT_MEM_CAP_MB) -> PassageGrid:
    """Wedge passage times L(i, j) for the auxiliary process anchored at ``root``.

    ``root = (k, h)`` with h = -z_k(0).  The process reaching level j at local
    site i consumes the clock of particle-frame site (i + k, j - 1 + h), whose
    LPP-frame key is (u + k + h - 1, v + h - 1) with u = i + j, v = j.  So L is
    the corner recursion on u, v >= 1 with zero boundary, in that shifted
    environment.  ``extent = (i_max, j_max)`` bounds the sites covered.
    """
    k, h = int(root[0]), int(root[1])
    i_max, j_max = int(extent[0]), int(extent[1])
    if j_max < 1 or i_max + j_max < 1:
        raise ValueError("wedge extent must contain interior sites")
    umax, vmax = i_max + j_max, j_max
    shifted = env.shifted(k + h, h)
    grid = passage_rect(shifted, (0, 0), (umax - 1, vmax - 1), mem_cap_mb)
    return PassageGrid((k, h), (umax, vmax), grid.values, "wedge")


# ---------------------------------------------------------------- LLN table

def lln_estimate(field: SpeedField, target, n_list, replicas: int = 1, seed: int = 0,
                 start=(0.0, 0.0), threads: int = 1, mem_cap_mb: float = DEFAULT_MEM_CAP_MB) -> list[dict]:
    """Rows (n, replica, value, mean, stderr) of G/n from floor(n*start) to floor(n*target)."""
    x, y = target
    a, b = start
    if x < a or y < b:
        raise ValueError("target must dominate start")
    rows = []
    for n in n_list:
        n = int(n)
        if n <= 0:
            raise ValueError("n must be positive")
        s = (math.floor(n * a), math.floor(n * b))
        e = (math.floor(n * x), math.floor(n * y))

        def one(r, n=n, s=s, e=e):
            env = Environment(field, n, derive_seed(seed, r))
            return passage_time(env, s, e, mem_cap_mb) / n

        with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
            vals = list(pool.map(one, range(replicas)))
        mean = float(np.mean(vals))
        se = float(np.std(vals, ddof=1) / math.sqrt(len(vals))) if len(vals) > 1 else float("nan")
        for r, v in enumerate(vals):
            rows.append({"n": n, "replica": r, "value": v, "mean": mean, "stderr": se})
    return rows
