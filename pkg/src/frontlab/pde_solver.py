"""Explicit finite differences for u_t = u_xx/2 + xi*u and w_t = w_xx/2 + xi*F(w).

PAM fields keep a global log scale so that exp(es*t) growth never
overflows; F-KPP fields are clamped to [0, 1]. Grids are aligned to integer
multiples of ``dx`` so a moving window only ever shifts by whole cells.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from numba import njit

from .branching_law import Nonlinearity, OffspringDistribution
from .errors import ConfigError, InsufficientResolutionError, NumericalInstabilityError, WindowEscapeError
from .io import write_csv

PAM, FKPP = "PAM", "FKPP"
_NEUMANN = math.nan
EDGE_LEVEL = 1e-3


@dataclass
class Field:
    kind: str
    origin: float
    dx: float
    values: np.ndarray
    log_scale: float = 0.0
    time: float = 0.0

    @property
    def x(self):
        return self.origin + self.dx * np.arange(self.values.size)

    def log_values(self):
        with np.errstate(divide="ignore"):
            return np.log(self.values) + self.log_scale

    def copy(self):
        return replace(self, values=self.values.copy())


@dataclass(frozen=True)
class InitialCondition:
    """``heaviside``: 1 on (-inf, 0]; ``pam_class``: delta on [-delta, 0], C elsewhere on
    (-inf, -delta); ``custom``: callable of x."""

    kind: str = "heaviside"
    delta: float = 0.5
    C: float = 2.0
    func: object = None

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        if self.kind == "heaviside":
            return np.where(x < 0, 1.0, np.where(x == 0, 0.5, 0.0))
        if self.kind == "pam_class":
            if not (0 < self.delta <= self.C):
                raise ConfigError("pam_class needs 0 < delta <= C")
            return np.where(x < -self.delta, self.C, np.where(x <= 0, self.delta, 0.0))
        if self.kind == "custom":
            return np.asarray(self.func(x), dtype=float)
        raise ConfigError(f"unknown initial condition {self.kind!r}")


@dataclass(frozen=True)
class SolverConfig:
    dx: float = 0.05
    dt: float | None = None
    margin: float | None = None
    window: tuple | None = None  # fixed window; None means a moving window
    observe_dt: float = 0.1
    snapshot_times: tuple = ()
    eps: float = 0.1
    M: float = 10.0

    def resolved_dt(self, es):
        limit = min(0.4 * self.dx**2, 0.1 / es if es > 0 else math.inf)
        dt = limit if self.dt is None else self.dt
        if dt > limit * (1 + 1e-12):
            raise ConfigError(f"dt={dt} violates dt <= 0.4*dx^2 and dt <= 0.1/es (limit {limit})")
        if not self.dx > 0 or not dt > 0:
            raise ConfigError("dx and dt must be positive")
        return dt

    def resolved_margin(self, t_end):
        return self.margin if self.margin is not None else 30.0 + 10.0 * math.sqrt(t_end)


@dataclass(frozen=True)
class FrontReport:
    """Front positions at one time.

    F-KPP: ``m_eps`` is sup{w >= eps}, ``m_eps_minus`` is inf{x >= 0: w <= 1-eps}.
    PAM: ``m_eps`` is sup{u >= eps}, ``mbar_M`` is sup{u >= M}, ``mbar_M_minus`` is
    inf{x >= 0: u <= M}. Unused entries are NaN.
    """

    t: float
    m_eps: float = math.nan
    m_eps_minus: float = math.nan
    mbar_M: float = math.nan
    mbar_M_minus: float = math.nan
    width_fkpp: float = math.nan
    width_pam: float = math.nan

    def row(self):
        return [self.t, self.m_eps, self.m_eps_minus, self.mbar_M, self.mbar_M_minus,
                self.width_fkpp, self.width_pam]


FRONT_COLUMNS = ["t", "m_eps", "m_eps_minus", "mbar_M", "mbar_M_minus", "width_fkpp", "width_pam"]


@dataclass
class Solution:
    fronts: list
    snapshots: dict = field(default_factory=dict)
    final: Field | None = None
    shifts: int = 0


@njit(cache=True, nogil=True)
def _advance(v, xi, coef, pam, dt, dx, nsteps, left, right):
    n = v.shape[0]
    r = 0.5 * dt / (dx * dx)
    new = np.empty_like(v)
    log_gain = 0.0
    for _ in range(nsteps):
        for j in range(n):
            vl = v[j - 1] if j > 0 else (v[0] if math.isnan(left) else left)
            vr = v[j + 1] if j < n - 1 else (v[n - 1] if math.isnan(right) else right)
            if pam:
                react = xi[j] * v[j]
            else:
                s = 1.0 - v[j]
                c = 0.0
                for k in range(coef.shape[0] - 1, -1, -1):
                    c = c * s + coef[k]
                react = xi[j] * v[j] * c
            new[j] = v[j] + r * (vl - 2.0 * v[j] + vr) + dt * react
        if pam:
            mx = 0.0
            mn = 0.0
            for j in range(n):
                if new[j] > mx:
                    mx = new[j]
                if new[j] < mn:
                    mn = new[j]
            if not (mx > 0.0 and mx < 1e300) or mn < -1e-12 * mx:
                for j in range(n):
                    v[j] = new[j]
                return log_gain, False
            if mx > 2.0 or mx < 0.5:
                for j in range(n):
                    new[j] /= mx
                log_gain += math.log(mx)
                if not math.isnan(left):
                    left /= mx
        else:
            for j in range(n):
                x = new[j]
                if not (x > -1e-9 and x < 1.0 + 1e-9):
                    v[j] = x
                    return log_gain, False
                new[j] = 0.0 if x < 0.0 else (1.0 if x > 1.0 else x)
        for j in range(n):
            v[j] = new[j]
    return log_gain, True


def _xi_array(lattice_pot, n):
    xi = np.asarray(getattr(lattice_pot, "values", lattice_pot), dtype=float)
    if xi.shape != (n,):
        raise ConfigError("potential grid does not match the field grid")
    return np.ascontiguousarray(xi)


def advance(fld, xi, nl, dt, nsteps=1, left=None, right=None):
    """Advance ``fld`` in place by ``nsteps`` explicit Euler steps.

    ``left``/``right`` are ghost values beyond the grid ends; ``None`` means
    zero flux. For PAM a Dirichlet ghost is given in absolute units.
    """
    pam = fld.kind == PAM
    coef = nl.dist.c_coefficients if nl is not None else np.zeros(2)
    lg = _NEUMANN if left is None else (left * math.exp(-fld.log_scale) if pam else left)
    rg = _NEUMANN if right is None else (right * math.exp(-fld.log_scale) if pam else right)
    gain, ok = _advance(fld.values, xi, coef, pam, dt, fld.dx, int(nsteps), lg, rg)
    if not ok or not np.all(np.isfinite(fld.values)):
        raise NumericalInstabilityError(
            "field left its admissible range (negative, above 1 or non-finite); "
            "check dt <= 0.4*dx^2 and dt <= 0.1*es^-1")
    fld.log_scale += gain
    fld.time += nsteps * dt
    return fld


def step(fld, lattice_pot, nl, dt):
    """One explicit Euler step with zero-flux ends; returns a new field."""
    out = fld.copy()
    return advance(out, _xi_array(lattice_pot, fld.values.size), nl, dt)


def _crossing_sup(x, y, level):
    above = np.flatnonzero(y >= level)
    if above.size == 0:
        return -math.inf
    i = above[-1]
    if i == y.size - 1:
        return float(x[i])
    return float(x[i] + (x[i + 1] - x[i]) * (y[i] - level) / (y[i] - y[i + 1]))


def _crossing_inf_right_of_zero(x, y, level):
    start = int(np.searchsorted(x, 0.0, side="left"))
    if start >= x.size:
        return math.inf
    below = np.flatnonzero(y[start:] <= level)
    if below.size == 0:
        return math.inf
    j = start + int(below[0])
    if j == 0 or y[j - 1] <= level:
        return float(x[j])
    pos = x[j - 1] + (x[j] - x[j - 1]) * (y[j - 1] - level) / (y[j - 1] - y[j])
    return float(max(pos, 0.0))


def front_positions(fld, eps=0.1, M=10.0):
    x = fld.x
    if fld.kind == FKPP:
        if not 0 < eps < 1:
            raise ConfigError("eps must lie in (0, 1)")
        m = _crossing_sup(x, fld.values, eps)
        mm = _crossing_inf_right_of_zero(x, fld.values, 1 - eps)
        return FrontReport(fld.time, m_eps=m, m_eps_minus=mm, width_fkpp=m - mm)
    if not 0 < eps < M:
        raise ConfigError("need 0 < eps < M")
    lv = fld.log_values()
    m = _crossing_sup(x, lv, math.log(eps))
    mM = _crossing_sup(x, lv, math.log(M))
    mMm = _crossing_inf_right_of_zero(x, lv, math.log(M))
    return FrontReport(fld.time, m_eps=m, mbar_M=mM, mbar_M_minus=mMm, width_pam=m - mMm)


def _half_front(fld, log_ref=0.0):
    """Level-1/2 front; for PAM the level is relative to ``exp(log_ref)`` so window
    placement does not depend on the scale of the initial data."""
    if fld.kind == FKPP:
        return _crossing_sup(fld.x, fld.values, 0.5)
    return _crossing_sup(fld.x, fld.log_values(), math.log(0.5) + log_ref)


def initial_field(kind, init, origin, dx, n):
    x = origin + dx * np.arange(n)
    vals = np.asarray(init(x), dtype=float).copy()
    fld = Field(kind, origin, dx, vals)
    if kind == PAM:
        mx = vals.max()
        if not mx > 0:
            raise ConfigError("initial condition vanishes on the window")
        fld.values /= mx
        fld.log_scale = math.log(mx)
    elif np.any(vals < 0) or np.any(vals > 1):
        raise ConfigError("F-KPP initial data must lie in [0, 1]")
    return fld


def solve(pot, init, t_end, config=SolverConfig(), kind=FKPP, nl=None):
    """Integrate to ``t_end``; fronts recorded every ``config.observe_dt``.

    Moving-window mode keeps the level-1/2 front at least ``margin`` from both
    edges by shifting whole cells. Either mode raises when the front (for
    F-KPP, the level ``EDGE_LEVEL`` front) gets within one cell of the right edge.
    """
    if not t_end > 0:
        raise ConfigError("t_end must be positive")
    if kind not in (PAM, FKPP):
        raise ConfigError(f"unknown equation kind {kind!r}")
    nl = nl or Nonlinearity(OffspringDistribution.binary())
    dx = config.dx
    dt = config.resolved_dt(pot.es)
    margin = config.resolved_margin(t_end)
    moving = config.window is None
    if moving:
        k0 = int(math.floor(-margin / dx))
        n = int(math.ceil(2 * margin / dx)) + 1
    else:
        a, b = config.window
        k0 = int(math.floor(a / dx))
        n = int(math.floor(b / dx)) - k0 + 1
    fld = initial_field(kind, init, k0 * dx, dx, n)
    xi = np.ascontiguousarray(pot(fld.x), dtype=float)
    log_ref = fld.log_scale
    left = 1.0 if kind == FKPP else None
    right = 0.0

    sol = Solution(fronts=[front_positions(fld, config.eps, config.M)])
    snaps = sorted(float(s) for s in config.snapshot_times)
    steps_per_obs = max(1, int(round(config.observe_dt / dt)))
    total = int(math.ceil(t_end / dt - 1e-9))
    done = 0
    while done < total:
        todo = min(steps_per_obs, total - done)
        if snaps and snaps[0] > fld.time:
            todo = max(1, min(todo, int(round((snaps[0] - fld.time) / dt))))
        advance(fld, xi, nl, dt, todo, left, right)
        done += todo
        while snaps and fld.time >= snaps[0] - 0.5 * dt:
            sol.snapshots[snaps.pop(0)] = fld.copy()
        sol.fronts.append(front_positions(fld, config.eps, config.M))
        front = _half_front(fld, log_ref)
        x_lo, x_hi = fld.origin, fld.origin + dx * (fld.values.size - 1)
        # the pinned right boundary stalls the level-1/2 front, so F-KPP watches a low level instead
        edge = _crossing_sup(fld.x, fld.values, EDGE_LEVEL) if kind == FKPP else front
        if edge >= x_hi - dx:
            raise WindowEscapeError(
                f"front {front:.3f} reached the window edge {x_hi:.3f} at t={fld.time:.3f}; "
                "use a larger margin or window")
        if moving and math.isfinite(front) and front > x_hi - margin:
            shift = int(math.ceil((front - 0.5 * (x_lo + x_hi)) / dx))
            _shift_field(fld, shift, kind)
            xi = np.ascontiguousarray(np.concatenate([xi[shift:], pot(fld.x[-shift:])]))
            sol.shifts += shift
    sol.final = fld
    return sol


def _shift_field(fld, shift, kind):
    fill = 0.0
    fld.values = np.concatenate([fld.values[shift:], np.full(shift, fill)])
    fld.origin += shift * fld.dx
    if kind == PAM:
        mx = fld.values.max()
        if not mx > 0:
            raise NumericalInstabilityError("PAM field vanished after window shift")
        fld.values /= mx
        fld.log_scale += math.log(mx)


def log_u_at(fld, xs, allow_underflow=False):
    """Linear interpolation of ln u at the given points (must be inside the grid).

    With ``allow_underflow`` a point below the normalized mantissa's range
    yields -inf instead of an error.
    """
    xs = np.asarray(xs, dtype=float)
    x = fld.x
    if np.any(xs < x[0]) or np.any(xs > x[-1]):
        raise WindowEscapeError("query point outside the solver window")
    lv = fld.log_values()
    out = np.interp(xs, x, lv)
    if not allow_underflow and np.any(~np.isfinite(out)):
        raise InsufficientResolutionError("u underflows the window floor at a query point")
    return out


@dataclass(frozen=True)
class PerturbationReport:
    h: np.ndarray
    log_ratio: np.ndarray
    rates: np.ndarray
    C: float
    ok: bool


def smallest_sandwich_constant(h, log_ratio):
    """Smallest C >= 1 with -ln C - C h <= log_ratio <= ln C - h / C for all h > 0."""
    h = np.asarray(h, dtype=float)
    lr = np.asarray(log_ratio, dtype=float)

    def feasible(C):
        lnC = math.log(C)
        return bool(np.all(lr >= -lnC - C * h - 1e-12) and np.all(lr <= lnC - h / C + 1e-12))

    lo, hi = 1.0, 2.0
    if feasible(lo):
        return 1.0
    while not feasible(hi):
        hi *= 2
        if hi > 1e12:
            return math.inf
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        lo, hi = (lo, mid) if feasible(mid) else (mid, hi)
        if hi - lo < 1e-10 * hi:
            break
    return hi


def check_space_perturbation(fld, v, h_list, t=None, C_max=20.0):
    """Ratio u(t, vt+h)/u(t, vt) on an h-grid and the smallest sandwich constant."""
    t = fld.time if t is None else t
    h = np.asarray([hh for hh in h_list if hh != 0], dtype=float)
    base = log_u_at(fld, [v * t])[0]
    lr = log_u_at(fld, v * t + h) - base
    C = smallest_sandwich_constant(h, lr)
    return PerturbationReport(h, lr, lr / (-h), C, bool(C <= C_max))


def solver_config_from_section(sec):
    kw = {}
    for key in ("dx", "dt", "margin", "observe_dt", "eps", "M"):
        if key in sec:
            kw[key] = float(sec[key])
    if "window" in sec:
        a, b = (float(s) for s in sec["window"].split(","))
        kw["window"] = (a, b)
    if "snapshot_times" in sec and sec["snapshot_times"].strip():
        kw["snapshot_times"] = tuple(float(s) for s in sec["snapshot_times"].split(","))
    return SolverConfig(**kw)


SNAPSHOT_COLUMNS = ["t", "x", "value", "log_exponent"]


def write_fronts_csv(path, fronts):
    write_csv(path, FRONT_COLUMNS, [f.row() for f in fronts])


def snapshot_rows(fld):
    """PAM rows hold the normalized value; the true field is value * exp(log_exponent)."""
    return [(fld.time, x, v, fld.log_scale) for x, v in zip(fld.x, fld.values)]


def write_snapshot_csv(path, fields):
    rows = []
    for fld in fields:
        rows.extend(snapshot_rows(fld))
    write_csv(path, SNAPSHOT_COLUMNS, rows)
