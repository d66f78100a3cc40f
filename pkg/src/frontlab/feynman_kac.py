"""Path estimators for the linear equation and Lyapunov exponents from the FD log-field.

The compiled kernels seed one stream per path from ``(base_seed, i)``, so each path's
Brownian increments do not depend on chunking or threads. The hitting
kernel can also sum ``substeps`` fine increments into each step, which
couples runs at different ``dt`` on the same underlying path.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from ._kernels import rng_normal, rng_seed, rng_uniform, xi_eval
from .errors import BracketError, CapError, DomainError
from .parallel import run_chunks
from .pde_solver import PAM, InitialCondition, SolverConfig, log_u_at, solve
from .rng import derive_seed

_STREAM_U = 201
_STREAM_HIT = 202

OK, KILLED = 0, 1


@dataclass(frozen=True)
class PathEstimate:
    value: float
    standard_error: float
    n_paths: int
    dt: float


@dataclass(frozen=True)
class HitSamples:
    """Per-path hitting time and integral of (zeta + eta); truncated paths carry
    ``H = inf`` and ``integral = -inf`` (their weight is below the floor).
    ``log_ratio`` is the Girsanov correction when paths were drawn with a drift."""

    H: np.ndarray
    integral: np.ndarray
    zeta_integral: np.ndarray
    eta: float
    dt: float
    log_ratio: np.ndarray | float = 0.0

    @property
    def weights(self):
        return np.exp(self.integral + self.log_ratio)


@dataclass(frozen=True)
class LyapunovCurve:
    v: np.ndarray
    lam: np.ndarray
    t_used: float
    method: str = "fd-solver"
    estimator: str = "increment"


@dataclass(frozen=True)
class V0Estimate:
    v0: float
    bracket: tuple
    curve: LyapunovCurve

    @property
    def bracket_width(self):
        return self.bracket[1] - self.bracket[0]


@njit(cache=True, nogil=True)
def _fk_paths(kind, fp, arr, bx, by, x0, n_steps, dt, n_paths, base_seed, offset, ends, integrals, lows, highs):
    sq = math.sqrt(dt)
    st = np.zeros(2, dtype=np.uint64)
    g = np.zeros(2)
    for i in range(n_paths):
        rng_seed(st, g, base_seed, offset + i)
        x = x0
        prev = xi_eval(kind, fp, arr, bx, by, x)
        acc = 0.0
        lo = x
        hi = x
        for _ in range(n_steps):
            x += sq * rng_normal(st, g)
            lo = min(lo, x)
            hi = max(hi, x)
            cur = xi_eval(kind, fp, arr, bx, by, x)
            acc += 0.5 * (prev + cur) * dt
            prev = cur
        ends[i] = x
        integrals[i] = acc
        lows[i] = lo
        highs[i] = hi


@njit(cache=True, nogil=True)
def _hit_paths(kind, fp, arr, bx, by, shift, x0, target, dt, substeps, bridge, drift, n_paths, base_seed, offset,
               eta_kill, log_floor, time_cap, H, Iz, status, extremes):
    sq = math.sqrt(dt / substeps)
    step_drift = drift * dt
    st = np.zeros(2, dtype=np.uint64)
    g = np.zeros(2)
    for i in range(n_paths):
        rng_seed(st, g, base_seed, offset + i)
        x = x0
        t = 0.0
        acc = 0.0
        zprev = xi_eval(kind, fp, arr, bx, by, x) - shift
        hi = x
        status[i] = OK
        while True:
            inc = 0.0
            for _ in range(substeps):
                inc += rng_normal(st, g)
            y = x - step_drift + sq * inc
            a = x - target
            b = y - target
            q = 2.0 * a * b / dt
            if b <= 0.0:
                frac = a / (a - b)
            elif bridge and q < 40.0 and rng_uniform(st) < math.exp(-q):
                frac = a / (a + b)
            else:
                frac = -1.0
            if frac >= 0.0:
                ztar = xi_eval(kind, fp, arr, bx, by, target) - shift
                acc += 0.5 * (zprev + ztar) * frac * dt
                t += frac * dt
                break
            z = xi_eval(kind, fp, arr, bx, by, y) - shift
            acc += 0.5 * (zprev + z) * dt
            zprev = z
            x = y
            t += dt
            if x > hi:
                hi = x
            if acc + eta_kill * t < log_floor:
                status[i] = KILLED
                break
            if t > time_cap:
                status[i] = 2
                break
        H[i] = t
        Iz[i] = acc
        extremes[i] = hi


def _check_window(pot, lo, hi):
    a, b = pot.window
    if lo < a or hi > b:
        raise DomainError(f"paths left the potential window [{a}, {b}]; enlarge it")


def estimate_u_mc(pot, t, x, u0=None, n_paths=100_000, dt=1e-2, seed=0, threads=1):
    """Monte Carlo E_x[exp(int_0^t xi(B_s) ds) u0(B_t)] with a trapezoid time integral."""
    if not t > 0:
        raise DomainError("t must be positive")
    if dt > 1e-2:
        raise DomainError("dt must be at most 1e-2")
    u0 = u0 or InitialCondition()
    n_steps = max(1, int(round(t / dt)))
    dt = t / n_steps
    kind, fp, arr, bx, by = pot.kernel()
    ends = np.empty(n_paths)
    integ = np.empty(n_paths)
    lows = np.empty(n_paths)
    highs = np.empty(n_paths)
    base = derive_seed(seed, _STREAM_U)

    def work(lo, hi):
        _fk_paths(kind, fp, arr, bx, by, float(x), n_steps, dt, hi - lo, base, lo, ends[lo:hi], integ[lo:hi],
                  lows[lo:hi], highs[lo:hi])

    run_chunks(work, n_paths, threads)
    _check_window(pot, float(lows.min()), float(highs.max()))
    vals = np.exp(integ) * u0(ends)
    return PathEstimate(float(vals.mean()), float(vals.std(ddof=1) / math.sqrt(n_paths)), n_paths, dt)


def default_log_floor(zeta_pot, x, eta, margin=25.0):
    """Weights below exp(floor) are at least e^-margin times the smallest possible mean
    exp(-sqrt(2(|eta| + es - ei)) * x), so truncating them is negligible."""
    spread = zeta_pot.es - zeta_pot.ei
    return -math.sqrt(2.0 * (abs(eta) + spread)) * x - margin


def simulate_until_hit(zeta_pot, x, eta, dt=1e-3, seed=0, n_paths=1, target=0.0, bridge=True,
                       substeps=1, eta_kill=None, log_floor=None, time_cap=1e6, threads=1, drift=0.0):
    """Brownian paths from ``x`` until they first reach ``target``.

    ``zeta_pot`` is either a shifted potential (with a ``base`` attribute)
    or a base potential; the kernel integrates xi - es along the path.
    Paths whose log-weight under ``eta_kill`` (default ``eta``) drops below
    ``log_floor`` stop early with zero weight.

    With ``drift = mu > 0`` the paths are drawn from Brownian motion with
    velocity -mu and ``log_ratio = -mu (x - target) + mu^2 H / 2`` restores
    the driftless law. Killing is then off unless a floor is given.
    """
    if not x > target:
        raise DomainError("start must lie above the target level")
    if not eta < 0:
        raise DomainError("eta must be negative")
    if drift < 0:
        raise DomainError("drift must be non-negative")
    zeta_pot = getattr(zeta_pot, "base", zeta_pot)
    eta_kill = eta if eta_kill is None else eta_kill
    if log_floor is None:
        log_floor = -math.inf if drift > 0 else default_log_floor(zeta_pot, x - target, eta_kill)
    kind, fp, arr, bx, by = zeta_pot.kernel()
    H = np.empty(n_paths)
    Iz = np.empty(n_paths)
    status = np.empty(n_paths, dtype=np.int64)
    ext = np.empty(n_paths)
    base = derive_seed(seed, _STREAM_HIT)

    def work(lo, hi):
        _hit_paths(kind, fp, arr, bx, by, float(zeta_pot.es), float(x), float(target), float(dt),
                   int(substeps), bool(bridge), float(drift), hi - lo, base, lo, float(eta_kill), float(log_floor),
                   float(time_cap), H[lo:hi], Iz[lo:hi], status[lo:hi], ext[lo:hi])

    run_chunks(work, n_paths, threads)
    if np.any(status == 2):
        raise CapError(f"a path exceeded the time cap {time_cap:g}")
    _check_window(zeta_pot, target, float(ext.max()))
    killed = status == KILLED
    H = np.where(killed, np.inf, H)
    Iz = np.where(killed, -np.inf, Iz)
    with np.errstate(invalid="ignore"):
        integral = np.where(killed, -np.inf, Iz + eta * H)
    log_ratio = -drift * (x - target) + 0.5 * drift * drift * H if drift > 0 else 0.0
    return HitSamples(H, integral, Iz, float(eta), float(dt), log_ratio)


def _lyapunov_window(pot, v_max, t, pad):
    """Wide enough for the queried rays and for the front itself, whose speed is at most sqrt(2 es)."""
    return (-pad, max(v_max, math.sqrt(2.0 * pot.es)) * t + pad)


def pam_log_field(pot, t, v_max, init=None, dx=0.05, pad=30.0, snapshot_times=()):
    cfg = SolverConfig(dx=dx, window=_lyapunov_window(pot, v_max, t, pad), observe_dt=max(t / 50, 0.1),
                       snapshot_times=tuple(snapshot_times))
    return solve(pot, init or InitialCondition(), t, cfg, kind=PAM)


def estimate_lyapunov(pot, v_grid, t=30.0, init=None, dx=0.05, estimator="increment", lag=0.2, pad=30.0):
    """Lambda(v) from the FD log-field.

    ``estimator='ratio'`` returns ln u(t, vt) / t. The default ``'increment'``
    returns [ln u(t, vt) - ln u(s, vs)] / (t - s) with s = (1 - lag) t, which
    cancels the O(ln t / t) prefactor bias of the ratio.
    """
    v = np.asarray(v_grid, dtype=float)
    s = (1.0 - lag) * t
    sol = pam_log_field(pot, t, float(v.max()), init, dx, pad, snapshot_times=(s,) if estimator == "increment" else ())
    late = log_u_at(sol.final, v * t)
    if estimator == "ratio":
        lam = late / t
    elif estimator == "increment":
        early = log_u_at(sol.snapshots[s], v * s)
        lam = (late - early) / (t - s)
    else:
        raise ValueError(f"unknown estimator {estimator!r}")
    return LyapunovCurve(v, lam, t, "fd-solver", estimator)


def default_v0_horizon(es, t=30.0, log_budget=600.0):
    """Keep es*t within the dynamic range of a single global log scale."""
    return min(t, log_budget / es)


def estimate_v0(pot, t=None, init=None, dx=0.05, estimator="increment", lag=0.2, n_grid=41, tol=1e-4):
    """Root of the Lyapunov curve by bisection on the interpolated log-field."""
    t = default_v0_horizon(pot.es) if t is None else t
    v_hi = 1.1 * math.sqrt(2.0 * pot.es)
    s = (1.0 - lag) * t
    sol = pam_log_field(pot, t, v_hi, init, dx, snapshot_times=(s,) if estimator == "increment" else ())

    def lam(vv):
        # an underflow lies ~700 below the peak while es * t <= 600, so ln u(t, vt) < 0 there
        vv = np.atleast_1d(vv)
        late = log_u_at(sol.final, vv * t, allow_underflow=True)
        if estimator == "ratio":
            return late / t
        early = log_u_at(sol.snapshots[s], vv * s, allow_underflow=True)
        with np.errstate(invalid="ignore"):
            return np.where(np.isfinite(late), (late - early) / (t - s), -np.inf)

    grid = np.linspace(0.0, v_hi, n_grid)
    curve = LyapunovCurve(grid, lam(grid), t, "fd-solver", estimator)
    sign = np.sign(curve.lam)
    change = np.flatnonzero((sign[:-1] > 0) & (sign[1:] <= 0))
    if change.size == 0:
        raise BracketError("Lyapunov curve has no sign change on the sampled grid", curve)
    lo, hi = grid[change[0]], grid[change[0] + 1]
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if lam(mid)[0] > 0:
            lo = mid
        else:
            hi = mid
    return V0Estimate(0.5 * (lo + hi), (lo, hi), curve)
