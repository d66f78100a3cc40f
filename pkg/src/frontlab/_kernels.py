"""Compiled point evaluation of potentials for the path and particle kernels."""
import math

import numpy as np
from numba import njit

CONSTANT, BUMP, LATTICE = 0, 1, 2


@njit(cache=True, nogil=True)
def chi_eval(d, bx, by):
    if d <= bx[0]:
        return by[0]
    n = bx.shape[0]
    if d >= bx[n - 1]:
        return by[n - 1]
    j = 1
    while bx[j] < d:
        j += 1
    w = (d - bx[j - 1]) / (bx[j] - bx[j - 1])
    return by[j - 1] + w * (by[j] - by[j - 1])


@njit(cache=True, nogil=True)
def _lower_bound(arr, value):
    lo, hi = 0, arr.shape[0]
    while lo < hi:
        mid = (lo + hi) // 2
        if arr[mid] < value:
            lo = mid + 1
        else:
            hi = mid
    return lo


@njit(cache=True, nogil=True)
def xi_eval(kind, fp, arr, bx, by, x):
    if kind == CONSTANT:
        return fp[0]
    if kind == BUMP:
        ei, es, support = fp[0], fp[1], fp[2]
        j = _lower_bound(arr, x - support)
        best = 0.0
        while j < arr.shape[0] and arr[j] < x + support:
            c = chi_eval(abs(x - arr[j]), bx, by)
            if c > best:
                best = c
            j += 1
        return ei + (es - ei) * best
    # lattice with linear interpolation, clamped at the ends
    origin, dx = fp[0], fp[1]
    s = (x - origin) / dx
    n = arr.shape[0]
    if s <= 0.0:
        return arr[0]
    if s >= n - 1:
        return arr[n - 1]
    k = int(s)
    w = s - k
    return arr[k] + w * (arr[k + 1] - arr[k])


def empty_breakpoints():
    return np.zeros(1), np.zeros(1)


# xoroshiro128+ streams, one per path or replicate. The state array holds
# two uint64 words; ``gauss`` caches the spare Box-Muller variate.
_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_TO_UNIT = 1.0 / 9007199254740992.0


@njit(cache=True, nogil=True, inline="always")
def _splitmix(z):
    z = z + _GOLDEN
    z = (z ^ (z >> np.uint64(30))) * _MIX1
    z = (z ^ (z >> np.uint64(27))) * _MIX2
    return z ^ (z >> np.uint64(31))


@njit(cache=True, nogil=True, inline="always")
def _rotl(x, k):
    return (x << np.uint64(k)) | (x >> np.uint64(64 - k))


@njit(cache=True, nogil=True)
def rng_seed(state, gauss, seed, index):
    z = _splitmix(np.uint64(seed) * _GOLDEN + np.uint64(index))
    state[0] = z
    state[1] = _splitmix(z)
    gauss[0] = 0.0
    gauss[1] = 0.0


@njit(cache=True, nogil=True)
def rng_next(state):
    s0 = state[0]
    s1 = state[1]
    out = s0 + s1
    s1 ^= s0
    state[0] = _rotl(s0, 24) ^ s1 ^ (s1 << np.uint64(16))
    state[1] = _rotl(s1, 37)
    return out


@njit(cache=True, nogil=True)
def rng_uniform(state):
    """Uniform on (0, 1)."""
    return ((rng_next(state) >> np.uint64(11)) + 0.5) * _TO_UNIT


@njit(cache=True, nogil=True)
def rng_normal(state, gauss):
    if gauss[1] != 0.0:
        gauss[1] = 0.0
        return gauss[0]
    r = math.sqrt(-2.0 * math.log(rng_uniform(state)))
    angle = 2.0 * math.pi * rng_uniform(state)
    gauss[0] = r * math.sin(angle)
    gauss[1] = 1.0
    return r * math.cos(angle)


@njit(cache=True, nogil=True)
def rng_exponential(state):
    return -math.log(rng_uniform(state))
