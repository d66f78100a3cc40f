"""Coupled pair of branching systems started at l < r that forces N_l(t) to sit inside N_r(t).

Left particles are tagged LM (mirrored), LC (coupled) or BAD; right ones RM,
RC or FREE. Mirrored pairs move with opposite increments about m, coupled
pairs with identical ones. The simulation runs on a dt grid: motion, then
type changes ordered by interpolated crossing time, then branching by
per-step thinning at the end-of-step positions.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from numba import njit
from scipy.stats import binomtest, kendalltau

from ._kernels import rng_normal, rng_seed, rng_uniform, xi_eval
from .branching_law import OffspringDistribution, Nonlinearity
from .errors import ConfigError, DomainError, InfeasibleParametersError, InternalConsistencyError
from .io import write_csv
from .pde_solver import FKPP, Field, advance
from .rng import derive_seed

LM, LC, BAD = 0, 1, 2
RM, RC, FREE = 0, 1, 2
TYPE_NAMES = ("LM", "LC", "Bad", "RM", "RC", "Free")
_STREAM = 501
DEFAULT_CAP = 200_000
INVARIANT_TOL = 1e-9

# -- feasibility -------------------------------------------------------------


def sup_expression(t_prime, A, B):
    """sup over s' in [0, t') of t' + A s' - B / (t' - s')."""
    root = math.sqrt(B / A)
    if t_prime > root:
        return (1.0 + A) * t_prime - 2.0 * math.sqrt(A * B)
    return t_prime - B / t_prime


def t_window(A, delta1):
    """Open interval of t' with negative sup for B1, positive sup for B2 and t' < 1 - 5 delta1."""
    B1 = (1.0 + 4.0 * delta1) ** 2
    B2 = (1.0 + 2.0 * delta1) ** 2
    lo = 2.0 * math.sqrt(A * B2) / (1.0 + A)
    hi = min(2.0 * math.sqrt(A * B1) / (1.0 + A), 1.0 - 5.0 * delta1)
    return lo, hi


@dataclass(frozen=True)
class FeasibleParameters:
    A: float
    B1: float
    B2: float
    delta1: float
    delta2: float
    window: tuple
    t_prime: float
    negsup: float
    possup: float

    @property
    def margin(self):
        return min(-self.negsup, self.possup)


def _delta2(t_prime, ei, es, B2):
    """Half the largest d with the B2 supremum still positive when es is lowered to (1 - d) es."""

    def ok(d):
        A = ((1.0 - d) * es - ei) / ei
        return A > 0 and sup_expression(t_prime, A, B2) > 0

    lo, hi = 0.0, 1.0
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        lo, hi = (mid, hi) if ok(mid) else (lo, mid)
    return 0.5 * lo


def select_parameters(ei, es, delta1=None, n_delta=50, n_t=2001):
    """Grid search for (delta1, t') maximizing min(-negsup, possup); delta1 fixed if given."""
    if not (ei > 0 and es > 0):
        raise ConfigError("ei and es must be positive")
    A = (es - ei) / ei
    if not A > 1:
        raise InfeasibleParametersError(f"A = (es-ei)/ei = {A:g} <= 1: needs es/ei > 2")
    deltas = [float(delta1)] if delta1 is not None else list(np.linspace(0.05 / n_delta, 0.05, n_delta))
    best = None
    for d in deltas:
        if not 0 < d <= 0.05:
            raise ConfigError("delta1 must lie in (0, 0.05]")
        B1 = (1.0 + 4.0 * d) ** 2
        B2 = (1.0 + 2.0 * d) ** 2
        lo, hi = t_window(A, d)
        if not lo < hi:
            continue
        for tp in np.linspace(lo, hi, n_t)[1:-1]:
            neg = sup_expression(tp, A, B1)
            pos = sup_expression(tp, A, B2)
            score = min(-neg, pos)
            if best is None or score > best[0]:
                best = (score, d, float(tp), neg, pos, (lo, hi), B1, B2)
    if best is None:
        raise InfeasibleParametersError(f"no feasible t' for ei={ei:g}, es={es:g} on the delta1 grid")
    _, d, tp, neg, pos, win, B1, B2 = best
    return FeasibleParameters(A, B1, B2, d, _delta2(tp, ei, es, B2), win, tp, neg, pos)


# -- configuration -----------------------------------------------------------


@dataclass(frozen=True)
class CouplingConfig:
    ei: float
    es: float
    x_n: float
    phi: float
    delta1: float
    l: float
    r: float
    dt: float = 1e-3
    t_check: float = 1.0
    seed: int = 0

    def __post_init__(self):
        s = self.delta1 * self.phi
        eps = 1e-12 * max(1.0, abs(self.x_n))
        if not (self.x_n - 5 * s - eps <= self.l <= self.x_n - 4 * s + eps):
            raise ConfigError("l must lie in [x_n - 5 delta1 phi, x_n - 4 delta1 phi]")
        if not (self.x_n + s - eps <= self.r <= self.x_n + 2 * s + eps):
            raise ConfigError("r must lie in [x_n + delta1 phi, x_n + 2 delta1 phi]")
        if not (self.L < self.l < self.m < self.r < self.R):
            raise ConfigError("need L < l < m < r < R")
        if not (self.dt > 0 and self.t_check > 0):
            raise ConfigError("dt and t_check must be positive")

    @property
    def m(self):
        return 0.5 * (self.l + self.r)

    @property
    def L(self):
        return self.x_n - self.phi

    @property
    def R(self):
        return 2.0 * self.m - self.L

    @classmethod
    def from_parameters(cls, params, ei, es, x_n, phi, dt=1e-3, l_frac=0.5, r_frac=0.5, seed=0, t_check=None):
        """l and r at fractions of their admissible ranges; t_check = t' phi / sqrt(2 ei) unless given."""
        s = params.delta1 * phi
        l = x_n - (5.0 - l_frac) * s
        r = x_n + (1.0 + r_frac) * s
        tc = params.t_prime * phi / math.sqrt(2.0 * ei) if t_check is None else t_check
        return cls(ei, es, x_n, phi, params.delta1, l, r, dt, tc, seed)


# -- simulation kernel -------------------------------------------------------

# indices into the per-replicate statistics vector
(S_CAPPED, S_T_STOP, S_TOUCH, S_MIRROR, S_COLOC, S_PARTNER, S_RANGE, S_TAU, S_NEG_EXTRA, S_SUSTAINED,
 S_MIN_RIGHT_CHECK, S_LM_CHECK, S_BAD_CHECK, S_LC_CHECK, S_MEETINGS, S_DECIDED, S_FIRST_BAD, S_SETTLED) = range(18)
N_STATS = 18
FROZEN = 3  # coupled pair taken out of the dynamics (prune mode); counted as LC / RC


@njit(cache=True, nogil=True)
def _grow_f(a, n):
    out = np.empty(n)
    out[: a.shape[0]] = a
    return out


@njit(cache=True, nogil=True)
def _grow_i(a, n):
    out = np.empty(n, dtype=np.int64)
    out[: a.shape[0]] = a
    return out


@njit(cache=True, nogil=True)
def _offspring(st, ks, cum):
    u = rng_uniform(st)
    m = 0
    while m < cum.shape[0] - 1 and cum[m] < u:
        m += 1
    return ks[m]


@njit(cache=True, nogil=True)
def _audit(lpos, ltag, lpart, rpos, rtag, rpart, nl, nr, m, L, R, stats, counts):
    """Check pair identities, type ranges and the LM/Free ordering; fill the six type counts."""
    for k in range(6):
        counts[k] = 0
    right_lm = -np.inf
    left_free = np.inf
    for i in range(nl):
        tag = ltag[i]
        counts[LC if tag == FROZEN else tag] += 1
        if tag == BAD:
            if lpart[i] != -1:
                stats[S_PARTNER] += 1
            continue
        j = lpart[i]
        if j < 0 or j >= nr or rpart[j] != i or rtag[j] != tag:
            stats[S_PARTNER] += 1
            continue
        if tag == LM:
            dev = abs((m - lpos[i]) - (rpos[j] - m))
            if dev > stats[S_MIRROR]:
                stats[S_MIRROR] = dev
            if not (L < lpos[i] <= m) or not (m <= rpos[j] < R):
                stats[S_RANGE] += 1
            if lpos[i] > right_lm:
                right_lm = lpos[i]
        else:
            dev = abs(lpos[i] - rpos[j])
            if dev > stats[S_COLOC]:
                stats[S_COLOC] = dev
    for j in range(nr):
        tag = rtag[j]
        counts[3 + (RC if tag == FROZEN else tag)] += 1
        if tag == FREE:
            if rpart[j] != -1:
                stats[S_PARTNER] += 1
            if rpos[j] < left_free:
                left_free = rpos[j]
    if right_lm > left_free:
        stats[S_TAU] += 1


@njit(cache=True, nogil=True)
def _active_min(pos, tag, n):
    out = np.inf
    for i in range(n):
        if tag[i] != FROZEN and pos[i] < out:
            out = pos[i]
    return out


@njit(cache=True, nogil=True)
def _couple(kind, fp, arr, bx, by, ei, es, l, r, L, dt, n_check, n_total, sample_every, ks, cum, cap,
            seed, index, bridge, prune, sample_counts, sample_min_left, sample_min_right, stats):
    st = np.zeros(2, dtype=np.uint64)
    g = np.zeros(2)
    rng_seed(st, g, seed, index)
    m = 0.5 * (l + r)
    R = 2.0 * m - L
    size = 64
    lpos = np.empty(size)
    lprev = np.empty(size)
    ltag = np.empty(size, dtype=np.int64)
    lpart = np.empty(size, dtype=np.int64)
    rpos = np.empty(size)
    rprev = np.empty(size)
    rtag = np.empty(size, dtype=np.int64)
    rpart = np.empty(size, dtype=np.int64)
    lpos[0] = l
    ltag[0] = LM
    lpart[0] = 0
    rpos[0] = r
    rtag[0] = RM
    rpart[0] = 0
    nl = 1
    nr = 1
    for k in range(N_STATS):
        stats[k] = 0.0
    stats[S_TOUCH] = np.inf
    stats[S_DECIDED] = np.inf
    stats[S_FIRST_BAD] = np.inf
    stats[S_MIN_RIGHT_CHECK] = np.nan
    stats[S_SUSTAINED] = 1.0
    counts = np.zeros(6, dtype=np.int64)
    sig = math.sqrt(dt)
    p_prop = 1.0 - math.exp(-es * dt)
    gap = es - ei
    p_extra = 1.0 - math.exp(-gap * dt) if gap > 0 else 0.0
    coupled_tag_l = FROZEN if prune else LC
    coupled_tag_r = FROZEN if prune else RC
    ev_t = np.empty(16)
    ev_kind = np.empty(16, dtype=np.int64)
    ev_i = np.empty(16, dtype=np.int64)
    ev_k = np.empty(16, dtype=np.int64)
    cand = np.empty(16, dtype=np.int64)
    n_lm = 1
    n_bad = 0
    n_free = 0
    _audit(lpos, ltag, lpart, rpos, rtag, rpart, nl, nr, m, L, R, stats, counts)
    for k in range(6):
        sample_counts[0, k] = counts[k]
    sample_min_left[0] = l
    sample_min_right[0] = r
    sample = 1
    capped = False
    settled = False
    step = 0
    for step in range(1, n_total + 1):
        t = step * dt
        # (i) motion
        for i in range(nl):
            lprev[i] = lpos[i]
        for j in range(nr):
            rprev[j] = rpos[j]
        max_free_move = 0.0
        for i in range(nl):
            tag = ltag[i]
            if tag == FROZEN:
                continue
            z = sig * rng_normal(st, g)
            lpos[i] += z
            if tag == LM:
                rpos[lpart[i]] -= z
            elif tag == LC:
                rpos[lpart[i]] += z
        for j in range(nr):
            if rtag[j] == FREE:
                z = sig * rng_normal(st, g)
                rpos[j] += z
                if abs(z) > max_free_move:
                    max_free_move = abs(z)
        # first touch of L by a left particle, with the bridge correction inside the step
        if stats[S_TOUCH] == np.inf:
            for i in range(nl):
                if ltag[i] == FROZEN:
                    continue
                a = lprev[i] - L
                b = lpos[i] - L
                if b <= 0.0 or (2.0 * a * b / dt < 40.0 and rng_uniform(st) < math.exp(-2.0 * a * b / dt)):
                    stats[S_TOUCH] = t
                    break
        # (v) type changes: collect crossings, apply in order of interpolated time
        hi_lm = -np.inf
        for i in range(nl):
            if ltag[i] == LM:
                hi_lm = max(hi_lm, lprev[i], lpos[i])
        nc = 0
        if hi_lm > -np.inf:
            for j in range(nr):
                if rtag[j] == FREE and min(rprev[j], rpos[j]) <= hi_lm:
                    if nc == cand.shape[0]:
                        cand = _grow_i(cand, 2 * nc)
                    cand[nc] = j
                    nc += 1
        cvals = np.empty(nc)
        for c in range(nc):
            cvals[c] = rprev[cand[c]]
        order = np.argsort(cvals)
        sorted_prev = cvals[order]
        ne = 0
        for i in range(nl):
            if ltag[i] != LM:
                continue
            y0 = lprev[i]
            y1 = lpos[i]
            if ne + nc + 2 > ev_t.shape[0]:
                n2 = 2 * (ne + nc + 2)
                ev_t = _grow_f(ev_t, n2)
                ev_kind = _grow_i(ev_kind, n2)
                ev_i = _grow_i(ev_i, n2)
                ev_k = _grow_i(ev_k, n2)
            a = m - y0
            b = m - y1
            frac = -1.0
            if b <= 0.0:
                frac = a / (a - b) if a != b else 0.0
            elif bridge and 2.0 * a * b / dt < 40.0 and rng_uniform(st) < math.exp(-2.0 * a * b / dt):
                frac = a / (a + b)
            if frac >= 0.0:
                ev_t[ne] = frac
                ev_kind[ne] = 0
                ev_i[ne] = i
                ev_k[ne] = -1
                ne += 1
            a = y0 - L
            b = y1 - L
            frac = -1.0
            if b <= 0.0:
                frac = a / (a - b) if a != b else 0.0
            elif bridge and 2.0 * a * b / dt < 40.0 and rng_uniform(st) < math.exp(-2.0 * a * b / dt):
                frac = a / (a + b)
            if frac >= 0.0:
                ev_t[ne] = frac
                ev_kind[ne] = 1
                ev_i[ne] = i
                ev_k[ne] = -1
                ne += 1
            # free particles that start right of this LM and end at or left of it
            top = y1 + max_free_move
            lo_idx = np.searchsorted(sorted_prev, y0, side="right")
            for c in range(lo_idx, nc):
                j = cand[order[c]]
                if rprev[j] > top:
                    break
                d0 = rprev[j] - y0
                d1 = rpos[j] - y1
                if d0 > 0.0 and d1 <= 0.0:
                    if ne == ev_t.shape[0]:
                        n2 = 2 * ne
                        ev_t = _grow_f(ev_t, n2)
                        ev_kind = _grow_i(ev_kind, n2)
                        ev_i = _grow_i(ev_i, n2)
                        ev_k = _grow_i(ev_k, n2)
                    ev_t[ne] = d0 / (d0 - d1)
                    ev_kind[ne] = 2
                    ev_i[ne] = i
                    ev_k[ne] = j
                    ne += 1
        if ne > 0:
            eorder = np.argsort(ev_t[:ne])
            for e in eorder:
                i = ev_i[e]
                if ltag[i] != LM:
                    continue
                j = lpart[i]
                kind_e = ev_kind[e]
                if kind_e == 0:
                    # the pair meets at m: co-locate at the left particle's position
                    ltag[i] = coupled_tag_l
                    rtag[j] = coupled_tag_r
                    rpos[j] = lpos[i]
                    n_lm -= 1
                elif kind_e == 1:
                    ltag[i] = BAD
                    lpart[i] = -1
                    rtag[j] = FREE
                    rpart[j] = -1
                    n_lm -= 1
                    n_bad += 1
                    n_free += 1
                    if stats[S_FIRST_BAD] == np.inf:
                        stats[S_FIRST_BAD] = t
                else:
                    # meeting a free particle: the left particle continues on the free path
                    k = ev_k[e]
                    if rtag[k] != FREE:
                        continue
                    rtag[j] = FREE
                    rpart[j] = -1
                    ltag[i] = coupled_tag_l
                    lpart[i] = k
                    rtag[k] = coupled_tag_r
                    rpart[k] = i
                    lpos[i] = rpos[k]
                    n_lm -= 1
                    stats[S_MEETINGS] += 1
        # (ii) left branching, replicated onto partners
        nl0 = nl
        for i in range(nl0):
            tag = ltag[i]
            if tag == FROZEN or rng_uniform(st) >= p_prop:
                continue
            y = lpos[i]
            if rng_uniform(st) * es >= xi_eval(kind, fp, arr, bx, by, y):
                continue
            kids = _offspring(st, ks, cum) - 1
            if kids <= 0:
                continue
            paired = tag != BAD
            if nl + nr + kids * (2 if paired else 1) > cap:
                capped = True
                break
            while nl + kids > lpos.shape[0] or nr + kids > rpos.shape[0]:
                n2 = 2 * max(lpos.shape[0], rpos.shape[0])
                lpos = _grow_f(lpos, n2)
                lprev = _grow_f(lprev, n2)
                ltag = _grow_i(ltag, n2)
                lpart = _grow_i(lpart, n2)
                rpos = _grow_f(rpos, n2)
                rprev = _grow_f(rprev, n2)
                rtag = _grow_i(rtag, n2)
                rpart = _grow_i(rpart, n2)
            for c in range(kids):
                lpos[nl] = y
                ltag[nl] = tag
                if paired:
                    j = lpart[i]
                    rpos[nr] = rpos[j]
                    rtag[nr] = rtag[j]
                    rpart[nr] = nl
                    lpart[nl] = nr
                    nr += 1
                else:
                    lpart[nl] = -1
                nl += 1
            if tag == LM:
                n_lm += kids
            elif tag == BAD:
                n_bad += kids
        # (iii) extra branching of mirrored right particles, (iv) free branching
        if not capped:
            nr0 = nr
            for j in range(nr0):
                tag = rtag[j]
                if tag == RC or tag == FROZEN:
                    continue
                if tag == RM:
                    if p_extra == 0.0 or rng_uniform(st) >= p_extra:
                        continue
                    y = rpos[j]
                    extra = xi_eval(kind, fp, arr, bx, by, y) - xi_eval(kind, fp, arr, bx, by, lpos[rpart[j]])
                    if extra < 0.0:
                        stats[S_NEG_EXTRA] += 1
                        continue
                    if rng_uniform(st) * gap >= extra:
                        continue
                else:
                    if rng_uniform(st) >= p_prop:
                        continue
                    y = rpos[j]
                    if rng_uniform(st) * es >= xi_eval(kind, fp, arr, bx, by, y):
                        continue
                kids = _offspring(st, ks, cum) - 1
                if kids <= 0:
                    continue
                if nl + nr + kids > cap:
                    capped = True
                    break
                while nr + kids > rpos.shape[0]:
                    n2 = 2 * rpos.shape[0]
                    rpos = _grow_f(rpos, n2)
                    rprev = _grow_f(rprev, n2)
                    rtag = _grow_i(rtag, n2)
                    rpart = _grow_i(rpart, n2)
                for c in range(kids):
                    rpos[nr] = y
                    rtag[nr] = FREE
                    rpart[nr] = -1
                    nr += 1
                n_free += kids
        if capped:
            break
        if n_lm == 0 and n_bad == 0 and stats[S_DECIDED] == np.inf:
            stats[S_DECIDED] = t
        if step >= n_check and (n_lm > 0 or n_bad > 0):
            stats[S_SUSTAINED] = 0.0
        settled = prune and n_lm == 0 and n_bad == 0 and n_free == 0
        if step % sample_every == 0 or step == n_check or settled:
            _audit(lpos, ltag, lpart, rpos, rtag, rpart, nl, nr, m, L, R, stats, counts)
            if step % sample_every == 0 or settled:
                for k in range(6):
                    sample_counts[sample, k] = counts[k]
                sample_min_left[sample] = _active_min(lpos, ltag, nl)
                sample_min_right[sample] = _active_min(rpos, rtag, nr)
                sample += 1
            if step == n_check or (settled and step < n_check):
                stats[S_MIN_RIGHT_CHECK] = _active_min(rpos, rtag, nr)
                stats[S_LM_CHECK] = counts[LM]
                stats[S_BAD_CHECK] = counts[BAD]
                stats[S_LC_CHECK] = counts[LC]
        if settled:
            break
    stats[S_CAPPED] = 1.0 if capped else 0.0
    stats[S_SETTLED] = 1.0 if settled else 0.0
    stats[S_T_STOP] = (step if not capped else step - 1) * dt
    return sample, lpos[:nl].copy(), ltag[:nl].copy(), lpart[:nl].copy(), rpos[:nr].copy(), rtag[:nr].copy(), \
        rpart[:nr].copy()


# -- results -----------------------------------------------------------------


@dataclass(frozen=True)
class CouplingTrace:
    times: np.ndarray
    counts: np.ndarray  # (T, 6) in TYPE_NAMES order
    min_left: np.ndarray
    min_right: np.ndarray
    t_stop: float
    t_check: float
    first_left_touch: float
    min_right_at_check: float
    counts_at_check: dict
    L: float
    settled: bool = False
    pruned: bool = False


@dataclass(frozen=True)
class CouplingOutcome:
    replicate: int
    seed: int
    G1: bool | None
    G2: bool | None
    success: bool | None
    sustained: bool | None
    capped: bool
    trace: CouplingTrace
    diagnostics: dict
    final_left: tuple = field(repr=False, default=())
    final_right: tuple = field(repr=False, default=())

    @property
    def n_bad_max(self):
        return int(self.trace.counts[:, 2].max())

    @property
    def n_lm_final(self):
        return int(self.trace.counts[-1, 0])


def _check_monotone(pot, lo, hi):
    xs = np.linspace(lo, hi, 2001)
    vals = pot(xs)
    if np.any(np.diff(vals) < -1e-12):
        raise DomainError("potential must be non-decreasing on [L, R] (use an engineered or found stretch)")


def check_good_events(trace, t_check=None):
    """(G1, G2) at ``t_check``; None marks an event the run could not decide because it was capped."""
    t_check = trace.t_check if t_check is None else t_check
    if abs(t_check - trace.t_check) > 1e-12:
        raise DomainError("the trace records the right-system minimum only at its own t_check")
    touched = trace.first_left_touch <= t_check
    if trace.t_stop + 1e-12 < t_check and not trace.settled:
        return (False if touched else None), None
    g1, g2 = (not touched), bool(trace.min_right_at_check <= trace.L)
    if trace.pruned:
        # frozen pairs are invisible, so only the outcomes they cannot overturn are known
        return (False if touched else None), (True if g2 else None)
    return g1, g2


def run_coupling(config, pot, dist=None, replicate=0, cap=DEFAULT_CAP, horizon_factor=2.0, sample_dt=0.05,
                 check_potential=True, bridge=True, prune_coupled=False):
    """One replicate of the coupling; ``success`` is evaluated at ``config.t_check`` and
    ``sustained`` over [t_check, horizon_factor * t_check].

    Once no LM and no Bad particle remains the outcome is settled for good,
    because coupled pairs only produce coupled pairs. ``success`` therefore
    stays decided even if the population cap stops the run afterwards.
    ``prune_coupled`` freezes coupled pairs (they keep counting as LC/RC but
    stop moving and branching), which makes runs cheap; the first-touch and
    right-minimum events then only see the uncoupled particles, and G1/G2
    are reported only where frozen pairs could not change them.
    """
    dist = dist or OffspringDistribution.binary()
    if check_potential:
        _check_monotone(pot, config.L, config.R)
    n_check = max(1, int(round(config.t_check / config.dt)))
    dt = config.t_check / n_check
    n_total = max(n_check, int(round(horizon_factor * n_check)))
    every = max(1, int(round(sample_dt / dt)))
    n_samples = n_total // every + 1
    counts = np.zeros((n_samples, 6), dtype=np.int64)
    min_left = np.full(n_samples, np.nan)
    min_right = np.full(n_samples, np.nan)
    stats = np.zeros(N_STATS)
    ks = dist.ks.astype(np.int64)
    cum = np.cumsum(dist.ps)
    cum[-1] = 1.0
    kind, fp, arr, bx, by = pot.kernel()
    base = derive_seed(config.seed, _STREAM)
    used, lp, lt, lpart, rp, rt, rpart = _couple(
        kind, fp, arr, bx, by, float(config.ei), float(config.es), float(config.l), float(config.r),
        float(config.L), dt, n_check, n_total, every, ks, cum, int(cap), base, int(replicate),
        bool(bridge), bool(prune_coupled), counts, min_left, min_right, stats)
    if stats[S_MIRROR] > INVARIANT_TOL or stats[S_COLOC] > INVARIANT_TOL or stats[S_PARTNER] > 0:
        raise InternalConsistencyError(
            f"pair invariants broken in replicate {replicate} (seed {config.seed}): mirror {stats[S_MIRROR]:.3g}, "
            f"co-location {stats[S_COLOC]:.3g}, partner errors {int(stats[S_PARTNER])}")
    capped = bool(stats[S_CAPPED])
    times = np.arange(used) * every * dt
    at_check = {"LM": int(stats[S_LM_CHECK]), "LC": int(stats[S_LC_CHECK]), "Bad": int(stats[S_BAD_CHECK])}
    trace = CouplingTrace(times, counts[:used], min_left[:used], min_right[:used], float(stats[S_T_STOP]),
                          float(n_check * dt), float(stats[S_TOUCH]), float(stats[S_MIN_RIGHT_CHECK]), at_check,
                          float(config.L), bool(stats[S_SETTLED]), bool(prune_coupled))
    G1, G2 = check_good_events(trace)
    t_check = n_check * dt
    decided, first_bad = float(stats[S_DECIDED]), float(stats[S_FIRST_BAD])
    reached = trace.settled or stats[S_T_STOP] + 1e-12 >= t_check
    if decided <= t_check + 1e-12:
        success = True
    elif reached or first_bad <= t_check + 1e-12:
        success = False
    else:
        success = None
    if decided <= t_check + 1e-12:
        sustained = True
    elif first_bad < np.inf:
        # offspring counts are at least one, so a Bad particle never disappears
        sustained = False
    else:
        sustained = None if capped else bool(stats[S_SUSTAINED])
    diag = {
        "range_violations": int(stats[S_RANGE]),
        "tau_violations": int(stats[S_TAU]),
        "negative_extra_rate": int(stats[S_NEG_EXTRA]),
        "meetings": int(stats[S_MEETINGS]),
        "decided_time": decided,
        "first_bad_time": first_bad,
        "max_mirror_deviation": float(stats[S_MIRROR]),
        "max_colocation_deviation": float(stats[S_COLOC]),
        "dt": dt,
    }
    return CouplingOutcome(replicate, config.seed, G1, G2, success, sustained, capped, trace, diag,
                           (lp, lt, lpart), (rp, rt, rpart))


def run_replicates(config, pot, n_reps, dist=None, cap=DEFAULT_CAP, horizon_factor=2.0, threads=1, **kw):
    """Replicates 0..n_reps-1 in order; each owns stream (config.seed, replicate)."""
    _check_monotone(pot, config.L, config.R)

    def one(i):
        return run_coupling(config, pot, dist, i, cap, horizon_factor, check_potential=False, **kw)

    if threads and threads > 1:
        with ThreadPoolExecutor(threads) as ex:
            return list(ex.map(one, range(n_reps)))
    return [one(i) for i in range(n_reps)]


@dataclass(frozen=True)
class SubsetReport:
    ok: bool
    n_reps: int
    n_checked: int
    violations: tuple  # (replicate, seed) pairs

    @property
    def rate(self):
        return len(self.violations) / self.n_reps if self.n_reps else 0.0


def verify_subset_logic(outcomes, t_check=None):
    """On every replicate with G1 and G2, the left system must hold no Bad and no LM particle at t_check."""
    outcomes = list(outcomes)
    checked, bad = 0, []
    for o in outcomes:
        g1, g2 = check_good_events(o.trace, t_check)
        if g1 and g2:
            checked += 1
            c = o.trace.counts_at_check
            if c["Bad"] > 0 or c["LM"] > 0:
                bad.append((o.replicate, o.seed))
    return SubsetReport(not bad, len(outcomes), checked, tuple(bad))


@dataclass(frozen=True)
class SuccessSummary:
    n_reps: int
    n_determinate: int
    successes: int
    frequency: float
    ci_low: float
    ci_high: float
    capped_fraction: float


def summarize(outcomes, event="success"):
    """Frequency of ``success`` (or ``good`` = G1 and G2) over determinate replicates, Wilson 95% CI."""
    vals = []
    for o in outcomes:
        if event == "success":
            vals.append(o.success)
        elif o.G1 is False or o.G2 is False:
            vals.append(False)
        elif o.G1 is None or o.G2 is None:
            vals.append(None)
        else:
            vals.append(True)
    det = [v for v in vals if v is not None]
    n = len(outcomes)
    k = int(sum(det))
    if det:
        ci = binomtest(k, len(det)).proportion_ci(0.95, method="wilson")
        lo, hi = float(ci.low), float(ci.high)
        freq = k / len(det)
    else:
        lo, hi, freq = 0.0, 1.0, math.nan
    return SuccessSummary(n, len(det), k, freq, lo, hi, sum(o.capped for o in outcomes) / n if n else 0.0)


def trend_test(lambdas, frequencies):
    """Kendall tau of frequency against Lambda and its two-sided p-value."""
    res = kendalltau(lambdas, frequencies)
    return float(res.statistic), float(res.pvalue)


# -- exact event probabilities by PDE ----------------------------------------


@dataclass(frozen=True)
class GoodEventBounds:
    p_g1_fails: float
    p_g2: float

    @property
    def success_upper_bound(self):
        """P(G1 and G2) <= P(G2)."""
        return self.p_g2


def good_event_bounds(config, pot, dist=None, dx=0.02, pad=30.0):
    """P(some left particle reaches L before t_check) and P(some right particle is at or below L at t_check).

    Both are F-KPP solutions via the McKean representation: the first with
    w = 1 held on (-inf, L] (absorbing), the second from the indicator of
    (-inf, L]. They bound what any simulation of the good events can show.
    """
    nl = Nonlinearity(dist or OffspringDistribution.binary())
    t = config.t_check
    hi = config.R + pad
    origin = config.L + dx
    n = int(math.floor((hi - origin) / dx)) + 1
    x = origin + dx * np.arange(n)
    xi = np.ascontiguousarray(pot(x))
    dt_lim = min(0.4 * dx * dx, 0.1 / pot.es)
    steps = int(math.ceil(t / dt_lim))
    dt = t / steps
    absorbed = Field(FKPP, origin, dx, np.zeros(n))
    advance(absorbed, xi, nl, dt, steps, left=1.0, right=0.0)
    lo = config.L - pad
    origin2 = lo
    n2 = int(math.floor((hi - origin2) / dx)) + 1
    x2 = origin2 + dx * np.arange(n2)
    init = np.where(x2 < config.L, 1.0, np.where(np.isclose(x2, config.L), 0.5, 0.0))
    free = Field(FKPP, origin2, dx, init)
    advance(free, np.ascontiguousarray(pot(x2)), nl, dt, steps, left=1.0, right=0.0)
    return GoodEventBounds(float(np.interp(config.l, x, absorbed.values)),
                           float(np.interp(config.r, x2, free.values)))


# -- output ------------------------------------------------------------------

REPLICATE_COLUMNS = ("seed", "replicate", "G1", "G2", "success", "n_bad_max", "n_lm_final", "capped")
AGGREGATE_COLUMNS = ("Lambda", "delta1", "t_prime", "success_freq", "ci_low", "ci_high")


def replicate_rows(outcomes):
    return [(o.seed, o.replicate, o.G1, o.G2, o.success, o.n_bad_max, o.n_lm_final, o.capped) for o in outcomes]


def write_replicates_csv(path, outcomes):
    write_csv(path, REPLICATE_COLUMNS, replicate_rows(outcomes))


def write_aggregate_csv(path, rows):
    write_csv(path, AGGREGATE_COLUMNS, rows)
