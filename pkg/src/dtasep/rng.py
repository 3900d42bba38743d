"""Counter-based random numbers keyed by integer coordinates.

Every draw is a pure function of ``(seed, a, b, c)``, so a lattice of weights
can be filled in any order, by any number of workers, with identical results.
The mixer is the SplitMix64 finalizer chained over the key words.
"""
import numpy as np
from numba import njit

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_K_A = np.uint64(0xD1B54A32D192ED03)
_K_B = np.uint64(0xABC98388FB8FAC03)
_K_C = np.uint64(0x8CB92BA72F3D8DD7)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S11 = np.uint64(11)
# 2**-53: the spacing of the uniform grid below
_INV53 = 1.0 / 9007199254740992.0


@njit(cache=True, inline="always")
def _mix(z):
    z = (z ^ (z >> _S30)) * _M1
    z = (z ^ (z >> _S27)) * _M2
    return z ^ (z >> _S31)


@njit(cache=True)
def hash4(seed, a, b, c):
    """64-bit hash of four signed integers."""
    h = _mix(np.uint64(seed) + _GOLDEN)
    h = _mix(h ^ (np.uint64(a) * _K_A + _GOLDEN))
    h = _mix(h ^ (np.uint64(b) * _K_B + _GOLDEN))
    h = _mix(h ^ (np.uint64(c) * _K_C + _GOLDEN))
    return h


@njit(cache=True)
def uniform(seed, a, b, c):
    """Uniform draw on (0, 1).

    The top 53 bits give a value on the grid k * 2**-53; k = 0 is mapped to the
    smallest positive grid point so the result is never zero.
    """
    k = hash4(seed, a, b, c) >> _S11
    if k == 0:
        k = np.uint64(1)
    return float(k) * _INV53


@njit(cache=True)
def std_exponential(seed, a, b, c):
    """Exp(1) draw by inversion; strictly positive."""
    u = uniform(seed, a, b, c)
    # u < 1 always, and u == 1 - 2**-53 at worst, so -log1p(-u) > 0
    return -np.log1p(-u)


@njit(cache=True)
def std_exponential_array(seed, a, b, c):
    out = np.empty(a.shape[0])
    for k in range(a.shape[0]):
        out[k] = std_exponential(seed, a[k], b[k], c[k])
    return out


@njit(cache=True)
def uniform_array(seed, a, b, c):
    out = np.empty(a.shape[0])
    for k in range(a.shape[0]):
        out[k] = uniform(seed, a[k], b[k], c[k])
    return out


def derive_seed(seed: int, stream: int) -> int:
    """Independent child seed, e.g. one per replica."""
    return int(hash4(np.int64(seed & 0x7FFFFFFFFFFFFFFF), np.int64(stream), np.int64(-1), np.int64(-7)) >> np.uint64(1))


def exponentials(seed: int, a, b, c=0) -> np.ndarray:
    """Vectorized Exp(1) draws keyed by integer arrays (broadcast)."""
    a, b, c = np.broadcast_arrays(np.asarray(a, np.int64), np.asarray(b, np.int64), np.asarray(c, np.int64))
    shape = a.shape
    out = std_exponential_array(np.int64(seed), a.ravel().copy(), b.ravel().copy(), c.ravel().copy())
    return out.reshape(shape)


def uniforms(seed: int, a, b, c=0) -> np.ndarray:
    a, b, c = np.broadcast_arrays(np.asarray(a, np.int64), np.asarray(b, np.int64), np.asarray(c, np.int64))
    shape = a.shape
    return uniform_array(np.int64(seed), a.ravel().copy(), b.ravel().copy(), c.ravel().copy()).reshape(shape)
