"""Branching Brownian motion in a random environment and the McKean estimator of w(t, x).

Simulation is event driven and exact in law. The alive particles share one
proposal clock of rate ``rate * N``; at a ring a uniformly chosen particle
is moved to the ring time by an exact Gaussian increment, then branches
with probability xi(position) / rate. Positions are only materialized at
events and at ``t_end``, so there is no time grid and no motion bias.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from ._kernels import rng_exponential, rng_normal, rng_seed, rng_uniform, xi_eval
from .branching_law import OffspringDistribution
from .errors import ConfigError, DomainError, UnreliableEstimateError
from .io import write_csv
from .parallel import run_chunks
from .rng import derive_seed

_STREAM_SIM = 401
_STREAM_W = 402
DEFAULT_CAP = 1_000_000
MAX_INDETERMINATE = 0.2


@njit(cache=True, nogil=True)
def _grow(a, size):
    out = np.empty(size, dtype=a.dtype)
    out[: a.shape[0]] = a
    return out


@njit(cache=True, nogil=True)
def _run(kind, fp, arr, bx, by, rate, x0, t_end, ks, cum, cap, seed, index, record):
    """One replicate. Returns positions, ids, genealogy, capped flag, stop time and the range visited."""
    st = np.zeros(2, dtype=np.uint64)
    g = np.zeros(2)
    rng_seed(st, g, seed, index)
    size = 16
    pos = np.empty(size)
    last = np.empty(size)
    ident = np.empty(size, dtype=np.int64)
    gsize = 16 if record else 1
    g_parent = np.empty(gsize, dtype=np.int64)
    g_birth = np.empty(gsize)
    pos[0] = x0
    last[0] = 0.0
    ident[0] = 0
    g_parent[0] = -1
    g_birth[0] = 0.0
    n = 1
    next_id = 1
    t = 0.0
    lo = x0
    hi = x0
    capped = False
    while True:
        t += rng_exponential(st) / (rate * n)
        if t > t_end:
            break
        j = int(rng_uniform(st) * n)
        if j >= n:
            j = n - 1
        y = pos[j] + math.sqrt(t - last[j]) * rng_normal(st, g)
        pos[j] = y
        last[j] = t
        if y < lo:
            lo = y
        if y > hi:
            hi = y
        if rng_uniform(st) * rate >= xi_eval(kind, fp, arr, bx, by, y):
            continue
        u = rng_uniform(st)
        m = 0
        while m < cum.shape[0] - 1 and cum[m] < u:
            m += 1
        k = ks[m]
        if n + k - 1 > cap:
            capped = True
            break
        while n + k - 1 > size:
            size *= 2
            pos = _grow(pos, size)
            last = _grow(last, size)
            ident = _grow(ident, size)
        if record:
            while next_id + k > gsize:
                gsize *= 2
                g_parent = _grow(g_parent, gsize)
                g_birth = _grow(g_birth, gsize)
        parent = ident[j]
        for c in range(k):
            slot = j if c == 0 else n + c - 1
            pos[slot] = y
            last[slot] = t
            ident[slot] = next_id
            if record:
                g_parent[next_id] = parent
                g_birth[next_id] = t
            next_id += 1
        n += k - 1
    if capped:
        t_stop = t
    else:
        t_stop = t_end
        for j in range(n):
            dt = t_end - last[j]
            if dt > 0.0:
                pos[j] += math.sqrt(dt) * rng_normal(st, g)
            if pos[j] < lo:
                lo = pos[j]
            if pos[j] > hi:
                hi = pos[j]
    gcount = next_id if record else 0
    return pos[:n].copy(), ident[:n].copy(), g_parent[:gcount].copy(), g_birth[:gcount].copy(), capped, t_stop, lo, hi


@njit(cache=True, nogil=True)
def _replicates(kind, fp, arr, bx, by, rate, x0, t_end, ks, cum, cap, seed, offset, n_reps,
                out_min, out_max, out_count, out_capped, out_lo, out_hi):
    for i in range(n_reps):
        pos, _, _, _, capped, _, lo, hi = _run(kind, fp, arr, bx, by, rate, x0, t_end, ks, cum, cap, seed,
                                               offset + i, False)
        out_capped[i] = capped
        out_count[i] = pos.shape[0]
        out_min[i] = pos.min()
        out_max[i] = pos.max()
        out_lo[i] = lo
        out_hi[i] = hi


@dataclass(frozen=True)
class Genealogy:
    ids: np.ndarray
    parents: np.ndarray
    birth_times: np.ndarray


@dataclass(frozen=True)
class ParticleSystem:
    """Alive particles at ``time``; ``capped`` means the population limit stopped the run early."""

    time: float
    positions: np.ndarray
    ids: np.ndarray
    capped: bool
    cap: int
    genealogy: Genealogy | None = None

    @property
    def size(self):
        return int(self.positions.size)

    def count_le(self, level):
        return int(np.count_nonzero(self.positions <= level))

    def count_ge(self, level):
        return int(np.count_nonzero(self.positions >= level))


def _law(dist):
    dist = dist or OffspringDistribution.binary()
    cum = np.cumsum(dist.ps)
    cum[-1] = 1.0
    return dist.ks.astype(np.int64), cum


def _rate(pot, rate):
    rate = pot.es if rate is None else float(rate)
    if not rate >= pot.es or not rate > 0:
        raise ConfigError("proposal rate must be positive and at least sup xi")
    return rate


def _check_range(pot, lo, hi):
    a, b = pot.window
    if lo < a or hi > b:
        raise DomainError(f"particles left the potential window [{a}, {b}]; enlarge it")


def simulate(pot, x0, t_end, dist=None, cap=DEFAULT_CAP, seed=0, replicate=0, record=False, rate=None):
    """One BBMRE run from a single particle at ``x0``.

    ``rate`` is the proposal rate (default ``pot.es``); any value at least
    sup xi gives the same law. A run that would exceed ``cap`` particles
    stops and is returned with ``capped=True`` at the stopping time.
    """
    if not t_end >= 0:
        raise DomainError("t_end must be non-negative")
    if cap < 1:
        raise ConfigError("cap must be at least 1")
    ks, cum = _law(dist)
    kind, fp, arr, bx, by = pot.kernel()
    pos, ids, par, birth, capped, t_stop, lo, hi = _run(
        kind, fp, arr, bx, by, _rate(pot, rate), float(x0), float(t_end), ks, cum, int(cap),
        derive_seed(seed, _STREAM_SIM), int(replicate), bool(record))
    _check_range(pot, lo, hi)
    gen = Genealogy(np.arange(par.size), par, birth) if record else None
    return ParticleSystem(float(t_stop), pos, ids, bool(capped), int(cap), gen)


def count_interval(system, interval):
    """Number of alive particles in the closed interval ``(a, b)``; empty if a > b."""
    a, b = interval
    if a > b:
        return 0
    p = system.positions
    return int(np.count_nonzero((p >= a) & (p <= b)))


@dataclass(frozen=True)
class ReplicateSummary:
    minimum: np.ndarray
    maximum: np.ndarray
    count: np.ndarray
    capped: np.ndarray


def run_replicates(pot, x0, t_end, n_reps, dist=None, cap=DEFAULT_CAP, seed=0, threads=1, rate=None,
                   stream=_STREAM_W):
    """Extremes and sizes of ``n_reps`` independent runs; replicate i uses stream index i."""
    if not t_end >= 0:
        raise DomainError("t_end must be non-negative")
    ks, cum = _law(dist)
    kind, fp, arr, bx, by = pot.kernel()
    r = _rate(pot, rate)
    base = derive_seed(seed, stream)
    mn = np.empty(n_reps)
    mx = np.empty(n_reps)
    cnt = np.empty(n_reps, dtype=np.int64)
    cp = np.empty(n_reps, dtype=np.bool_)
    lo = np.empty(n_reps)
    hi = np.empty(n_reps)

    def work(a, b):
        _replicates(kind, fp, arr, bx, by, r, float(x0), float(t_end), ks, cum, int(cap), base, a, b - a,
                    mn[a:b], mx[a:b], cnt[a:b], cp[a:b], lo[a:b], hi[a:b])

    run_chunks(work, n_reps, threads, size=256)
    _check_range(pot, float(lo.min()), float(hi.max()))
    return ReplicateSummary(mn, mx, cnt, cp)


@dataclass(frozen=True)
class WEstimate:
    x: float
    t: float
    w_hat: float
    standard_error: float
    n_reps: int
    indeterminate_fraction: float
    lower: float
    upper: float


def estimate_w(pot, x, t, dist=None, n_reps=10_000, cap=DEFAULT_CAP, seed=0, target="le", level=0.0,
               threads=1, rate=None, max_indeterminate=MAX_INDETERMINATE):
    """McKean estimate of the probability that some particle is at or below ``level`` at time t.

    ``target='ge'`` asks instead for a particle at or above ``level``.
    Capped replicates are excluded from ``w_hat`` and enter ``[lower, upper]``
    as both outcomes.
    """
    if not t >= 0:
        raise DomainError("t must be non-negative")
    if target not in ("le", "ge"):
        raise ValueError("target must be 'le' or 'ge'")
    s = run_replicates(pot, x, t, n_reps, dist, cap, seed, threads, rate)
    hit = s.minimum <= level if target == "le" else s.maximum >= level
    capped = s.capped
    n_cap = int(capped.sum())
    frac = n_cap / n_reps
    if frac > max_indeterminate:
        raise UnreliableEstimateError(
            f"{frac:.0%} of replicates hit the population cap {cap}; use a smaller t or a larger cap")
    good = ~capped
    n_good = int(good.sum())
    hits = int((hit & good).sum())
    w = hits / n_good
    se = math.sqrt(max(w * (1.0 - w), 0.0) / max(n_good - 1, 1))
    return WEstimate(float(x), float(t), w, se, n_reps, frac, hits / n_reps, (hits + n_cap) / n_reps)


W_COLUMNS = ("x", "t", "w_hat", "se", "n_reps", "indeterminate_frac")
GENEALOGY_COLUMNS = ("id", "parent", "birth_time", "final_position")


def w_rows(estimates):
    return [(e.x, e.t, e.w_hat, e.standard_error, e.n_reps, e.indeterminate_fraction) for e in estimates]


def write_w_csv(path, estimates):
    write_csv(path, W_COLUMNS, w_rows(estimates))


def write_genealogy_csv(path, system):
    if system.genealogy is None:
        raise ValueError("run the simulation with record=True to dump the genealogy")
    final = dict(zip(system.ids.tolist(), system.positions.tolist()))
    g = system.genealogy
    rows = [(int(i), int(p), float(b), final.get(int(i))) for i, p, b in zip(g.ids, g.parents, g.birth_times)]
    write_csv(path, GENEALOGY_COLUMNS, rows)
