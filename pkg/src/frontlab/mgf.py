"""Log moment generating functions of hitting-time functionals and the velocity quantities built on them.

All estimators share one device. The hitting path from ``x`` down to ``0``
is cut at the integers into unit crossings; by the strong Markov property
``ln E_x[exp(int_0^H (zeta + eta))]`` is the sum of the per-unit values, and
the tilted law factorizes the same way. Each unit is sampled from Brownian
motion with drift ``-mu`` and reweighted by the Girsanov factor, with
``mu = sqrt(2 |eta|)`` (the exact tilt when ``zeta = 0``). A bank of such
samples can be reweighted to nearby ``eta`` in closed form, which makes
the estimated L convex and its slope monotone in ``eta`` for a fixed bank.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq
from scipy.special import logsumexp

from . import feynman_kac
from .errors import (BracketError, DomainError, ExtrapolationWarning, InconsistencyError,
                     SubcriticalVelocityError, VarianceWarning)
from .io import write_csv
from .rng import derive_seed

_STREAM_UNITS = 301
ETA_RANGE = (-50.0, -1e-3)
VC_ETAS = (-0.4, -0.2, -0.1, -0.05, -0.025)
MIN_ESS = 100.0


@dataclass(frozen=True)
class ShiftedPotential:
    """zeta = xi - es, which takes values in [ei - es, 0]."""

    base: object

    @property
    def es(self):
        return self.base.es

    @property
    def ei(self):
        return self.base.ei

    @property
    def lower(self):
        return self.base.ei - self.base.es

    @property
    def window(self):
        return self.base.window

    def __call__(self, x):
        return self.base(x) - self.base.es

    def kernel(self):
        return self.base.kernel()


def _base(pot):
    return pot.base if isinstance(pot, ShiftedPotential) else pot


@dataclass(frozen=True)
class MgfEstimate:
    eta: float
    x: float
    value: float
    standard_error: float
    n_paths: int
    variant: str
    min_ess: float
    warning: str | None = None


@dataclass(frozen=True)
class LPrimeEstimate:
    eta: float
    method_a: float
    se_a: float
    method_b: float
    se_b: float
    step: float

    @property
    def discrepancy(self):
        return self.method_a - self.method_b

    @property
    def joint_se(self):
        return math.hypot(self.se_a, self.se_b)


@dataclass(frozen=True)
class RootEstimate:
    value: float
    v: float
    x: float
    iterations: int
    last_change: float


@dataclass(frozen=True)
class SEstimate:
    value: float
    standard_error: float


@dataclass(frozen=True)
class VcEstimate:
    v_c: float
    intercept: float
    slope: float
    standard_error: float
    residual: float
    etas: tuple
    inverse_slopes: tuple
    warning: str | None = None


@dataclass(frozen=True)
class VelocityReport:
    scale: float
    vc: VcEstimate
    v0: object
    vel_ok: bool
    margin: float
    eta_bar: tuple = field(default=())  # ((v, eta_bar(v)), ...)

    @property
    def v_c(self):
        return self.vc.v_c

    @property
    def v_0(self):
        return self.v0.v0


def unit_lengths(x):
    """Lengths of the crossings [j, j+1] (j = 0, 1, ...) that tile [0, x]; the top one may be short."""
    full = int(math.floor(x + 1e-12))
    lengths = [1.0] * full
    rest = x - full
    if rest > 1e-12:
        lengths.append(rest)
    return np.array(lengths)


@dataclass
class UnitBank:
    """Hitting samples for every unit crossing of every realization: arrays shaped (R, K, n)."""

    H: np.ndarray
    Iz: np.ndarray
    lengths: np.ndarray
    drift: float
    dt: float

    @property
    def x(self):
        return float(self.lengths.sum())

    @property
    def n_paths(self):
        return self.H.shape[2]

    def log_weights(self, eta):
        mu = self.drift
        return self.Iz + (eta + 0.5 * mu * mu) * self.H - mu * self.lengths[None, :, None]

    def unit_stats(self, eta):
        lw = self.log_weights(eta)
        n = lw.shape[2]
        top = lw.max(axis=2, keepdims=True)
        p = np.exp(lw - top)
        s1 = p.sum(axis=2)
        s2 = (p * p).sum(axis=2)
        mean_p = s1 / n
        log_mean = np.log(mean_p) + top[..., 0]
        se_log = np.sqrt(np.maximum(s2 / n - mean_p**2, 0.0) / (n - 1)) / mean_p
        hbar = (p * self.H).sum(axis=2) / s1
        dev = self.H - hbar[..., None]
        var_h = (p * dev * dev).sum(axis=2) / s1
        se_h = np.sqrt((p * p * dev * dev).sum(axis=2)) / s1
        ess = s1 * s1 / s2
        return log_mean, se_log, hbar, se_h, var_h, ess

    def averaged(self, eta):
        """Per-realization (1/x) ln E_x, its MC standard error and the smallest unit ESS."""
        log_mean, se_log, _, _, _, ess = self.unit_stats(eta)
        x = self.x
        return log_mean.sum(axis=1) / x, np.sqrt((se_log**2).sum(axis=1)) / x, float(ess.min())

    def slope(self, eta):
        """Per-realization tilted mean hitting time per unit distance and its MC standard error."""
        _, _, hbar, se_h, _, _ = self.unit_stats(eta)
        x = self.x
        return hbar.sum(axis=1) / x, np.sqrt((se_h**2).sum(axis=1)) / x

    def curvature(self, eta):
        _, _, _, _, var_h, _ = self.unit_stats(eta)
        return var_h.sum(axis=1) / self.x

    def finite_difference(self, eta, step):
        """Central difference of the averaged log-MGF with a delta-method standard error."""
        lp, lm = self.log_weights(eta + step), self.log_weights(eta - step)
        n = lp.shape[2]
        lmp = logsumexp(lp, axis=2) - math.log(n)
        lmm = logsumexp(lm, axis=2) - math.log(n)
        ratio = np.exp(lp - lmp[..., None]) - np.exp(lm - lmm[..., None])
        var = ratio.var(axis=2, ddof=1) / n
        x = self.x
        d = (lmp - lmm).sum(axis=1) / (2 * step * x)
        se = np.sqrt(var.sum(axis=1)) / (2 * step * x)
        return d, se


def drift_for(eta):
    return math.sqrt(2.0 * abs(eta))


def build_bank(pot, x, eta_ref, n_paths=2000, dt=1e-2, seed=0, realizations=1, drift=None, threads=1):
    """Simulate every unit crossing of [0, x] for ``realizations`` copies of the potential.

    Unit j (covering [j, j+1]) of realization r always uses the stream
    ``(seed, r, j)``, so banks for different ``x`` or drifts share randomness.
    """
    if not x > 0:
        raise DomainError("x must be positive")
    if n_paths < 2:
        raise DomainError("need at least two paths per unit")
    base = _base(pot)
    pots = base.realizations(realizations, seed) if realizations > 1 else [base]
    mu = drift_for(eta_ref) if drift is None else float(drift)
    lengths = unit_lengths(x)
    R, K = len(pots), lengths.size
    H = np.empty((R, K, n_paths))
    Iz = np.empty((R, K, n_paths))
    for r, p in enumerate(pots):
        bottom = 0.0
        for k, d in enumerate(lengths):
            s = feynman_kac.simulate_until_hit(p, bottom + d, eta_ref, dt=dt, seed=derive_seed(seed, _STREAM_UNITS, r, k),
                                               n_paths=n_paths, target=bottom, drift=mu, threads=threads)
            H[r, k] = s.H
            Iz[r, k] = s.zeta_integral
            bottom += d
    return UnitBank(H, Iz, lengths, mu, dt)


def _check_eta(eta):
    if not eta < -1e-3:
        raise DomainError("eta must be below -1e-3; the limit eta -> 0 is handled by estimate_vc")


def _variance_note(ess):
    if ess < MIN_ESS:
        msg = f"effective sample size {ess:.1f} below {MIN_ESS:g}: weights are degenerate"
        warnings.warn(msg, VarianceWarning, stacklevel=3)
        return msg
    return None


def estimate_L(pot, eta, x_max=20.0, n_paths=2000, dt=1e-2, seed=0, variant="ensemble", realizations=10,
               method="decomposed", drift=None, threads=1):
    """Estimate the per-unit log-MGF.

    variant ``unit``: ln E_x[exp(int_0^{H_{x-1}}(zeta+eta))] at x = x_max.
    variant ``averaged``: (1/x_max) ln E_{x_max}[exp(int_0^{H_0}(zeta+eta))] for ``pot`` itself;
    ``method='direct'`` uses whole paths from x_max instead of unit crossings.
    variant ``ensemble``: the averaged value over ``realizations`` independent potentials.
    """
    _check_eta(eta)
    if x_max < 20:
        raise DomainError("x_max must be at least 20")
    mu = drift_for(eta) if drift is None else float(drift)
    if variant == "unit":
        s = feynman_kac.simulate_until_hit(_base(pot), x_max, eta, dt=dt, seed=derive_seed(seed, _STREAM_UNITS + 1),
                                           n_paths=n_paths, target=x_max - 1.0, drift=mu, threads=threads)
        bank = UnitBank(s.H[None, None], s.zeta_integral[None, None], np.array([1.0]), mu, dt)
        vals, ses, ess = bank.averaged(eta)
        return MgfEstimate(eta, x_max, float(vals[0]), float(ses[0]), n_paths, "unit", ess, _variance_note(ess))
    if variant not in ("averaged", "ensemble"):
        raise ValueError(f"unknown variant {variant!r}")
    if method == "direct":
        if variant != "averaged":
            raise ValueError("the direct method applies to the averaged variant only")
        s = feynman_kac.simulate_until_hit(_base(pot), x_max, eta, dt=dt, seed=derive_seed(seed, _STREAM_UNITS + 2),
                                           n_paths=n_paths, drift=mu, threads=threads)
        lw = s.integral + s.log_ratio
        lm = logsumexp(lw) - math.log(n_paths)
        p = np.exp(lw - lw.max())
        ess = float(p.sum() ** 2 / (p * p).sum())
        se = float(p.std(ddof=1) / math.sqrt(n_paths) / p.mean()) / x_max
        return MgfEstimate(eta, x_max, float(lm / x_max), se, n_paths, "averaged", ess, _variance_note(ess))
    reps = realizations if variant == "ensemble" else 1
    bank = build_bank(pot, x_max, eta, n_paths, dt, seed, reps, mu, threads)
    vals, ses, ess = bank.averaged(eta)
    if vals.size >= 2:
        se = float(vals.std(ddof=1) / math.sqrt(vals.size))
    else:
        se = float(ses[0])
    return MgfEstimate(eta, x_max, float(vals.mean()), se, n_paths, variant, ess, _variance_note(ess))


def estimate_L_prime(pot, eta, x_max=20.0, n_paths=2000, dt=1e-2, seed=0, realizations=10, rel_step=1e-2,
                     check=True, threads=1, bank=None):
    """L' by the self-normalized tilted mean of H (method A) and a central difference of L (method B).

    Both use the same bank of paths, so their gap isolates the bias of the
    difference quotient and any inconsistency in the weights.
    """
    _check_eta(eta)
    if bank is None:
        if x_max < 20:
            raise DomainError("x_max must be at least 20")
        bank = build_bank(pot, x_max, eta, n_paths, dt, seed, realizations, threads=threads)
    step = rel_step * abs(eta)
    a, sa = bank.slope(eta)
    b, sb = bank.finite_difference(eta, step)
    R = a.size
    est = LPrimeEstimate(eta, float(a.mean()), float(np.sqrt((sa**2).sum()) / R),
                         float(b.mean()), float(np.sqrt((sb**2).sum()) / R), step)
    if check and abs(est.discrepancy) > 3.0 * est.joint_se:
        raise InconsistencyError(
            f"L' methods disagree at eta={eta:g}: {est.method_a:.6g} vs {est.method_b:.6g} "
            f"(joint SE {est.joint_se:.3g})")
    return est


def _solve_slope(make_bank, target, start, tol, max_iter, eta_range, what, recenter=0.05):
    """Find eta with bank slope = target (to ``tol``), re-centering the proposal drift
    until the root lies within a relative ``recenter`` of the bank's reference eta."""
    lo, hi = eta_range
    eta = min(max(start, lo), hi)
    change = math.inf
    new = eta
    for it in range(1, max_iter + 1):
        bank = make_bank(eta)

        def g(e):
            return float(bank.slope(e)[0].mean()) - target

        if g(hi) < 0:
            if eta >= hi:
                raise SubcriticalVelocityError(
                    f"{what}: tilted mean time stays below x/v up to eta={hi:g}; v is not above v_c")
            new = hi
        elif g(lo) > 0:
            if eta <= lo:
                raise BracketError(f"{what}: no root above eta={lo:g}; v is too large for the search range")
            new = lo
        else:
            new = brentq(g, lo, hi, xtol=tol / 20)
        change = abs(new - eta)
        eta = new
        # reweighting is accurate close to the proposal drift; the root on this bank is final
        if change <= max(tol, recenter * abs(eta)):
            return RootEstimate(float(eta), 0.0, 0.0, it, change)
    return RootEstimate(float(eta), 0.0, 0.0, max_iter, change)


def solve_eta_bar(pot, v, x_max=20.0, n_paths=2000, dt=1e-2, seed=0, realizations=10, tol=1e-3, max_iter=10,
                  vc=None, eta_range=ETA_RANGE, threads=1):
    """eta_bar(v): root of L'(eta) = 1/v for the ensemble log-MGF."""
    if not v > 0:
        raise DomainError("v must be positive")
    if vc is not None and not v > 1.05 * vc:
        raise SubcriticalVelocityError(f"v={v:g} is not above 1.05 * v_c = {1.05 * vc:g}")

    def make(eta):
        return build_bank(pot, x_max, eta, n_paths, dt, seed, realizations, threads=threads)

    r = _solve_slope(make, 1.0 / v, -0.5 * v * v, tol, max_iter, eta_range, "eta_bar")
    return RootEstimate(r.value, float(v), float(x_max), r.iterations, r.last_change)


def solve_eta_x(pot, x, v, n_paths=2000, dt=1e-2, seed=0, tol=1e-3, max_iter=10, vc=None,
                eta_range=ETA_RANGE, threads=1):
    """eta_x(v): root of E_x^{zeta,eta}[H_0] = x / v for the quenched potential ``pot``."""
    if x < 10:
        raise DomainError("x must be at least 10")
    if not v > 0:
        raise DomainError("v must be positive")
    if vc is not None and not v > 1.05 * vc:
        raise SubcriticalVelocityError(f"v={v:g} is not above 1.05 * v_c = {1.05 * vc:g}")

    def make(eta):
        return build_bank(pot, x, eta, n_paths, dt, seed, 1, threads=threads)

    r = _solve_slope(make, 1.0 / v, -0.5 * v * v, tol, max_iter, eta_range, "eta_x")
    return RootEstimate(r.value, float(v), float(x), r.iterations, r.last_change)


def compute_S(pot, x, v, eta, n_paths=2000, dt=1e-2, seed=0, threads=1, bank=None):
    """x (eta / v - Lbar_x(eta)) with the MC standard error of Lbar_x propagated."""
    if not eta < 0:
        raise DomainError("eta must be negative")
    if not x > 0:
        raise DomainError("x must be positive")
    bank = bank or build_bank(pot, x, eta, n_paths, dt, seed, 1, threads=threads)
    vals, ses, _ = bank.averaged(eta)
    return SEstimate(float(x * (eta / v - vals[0])), float(x * ses[0]))


def estimate_vc(pot, etas=VC_ETAS, x_max=20.0, n_paths=2000, dt=1e-2, seed=0, realizations=10, threads=1):
    """Extrapolate 1/L'(eta) = v_c + a sqrt|eta| to eta -> 0-, by weighted least squares.

    The reported ``v_c`` is the intercept clipped at 0; ``residual`` is the
    weighted RMS misfit, and a warning is attached when it exceeds 10% of
    max(v_c, 0.05).
    """
    etas = tuple(float(e) for e in etas)
    inv, inv_se = [], []
    for e in etas:
        bank = build_bank(pot, x_max, e, n_paths, dt, seed, realizations, threads=threads)
        a, sa = bank.slope(e)
        mean = float(a.mean())
        se = float(a.std(ddof=1) / math.sqrt(a.size)) if a.size >= 2 else float(sa[0])
        inv.append(1.0 / mean)
        inv_se.append(max(se, 1e-12) / mean**2)
    inv = np.array(inv)
    w = 1.0 / np.maximum(np.array(inv_se), 1e-9 * np.abs(inv).max())
    design = np.column_stack([np.ones(len(etas)), np.sqrt(np.abs(etas))])
    coef, *_ = np.linalg.lstsq(design * w[:, None], inv * w, rcond=None)
    fitted = design @ coef
    residual = float(np.sqrt(np.mean((inv - fitted) ** 2)))
    dof = max(len(etas) - 2, 1)
    scale = max(float(np.sum(((inv - fitted) * w) ** 2)) / dof, 1.0)
    cov = np.linalg.inv((design * w[:, None]).T @ (design * w[:, None])) * scale
    v_c = max(float(coef[0]), 0.0)
    note = None
    if residual > 0.1 * max(v_c, 0.05):
        note = f"extrapolation residual {residual:.3g} exceeds 10% of v_c"
        warnings.warn(note, ExtrapolationWarning, stacklevel=2)
    return VcEstimate(v_c, float(coef[0]), float(coef[1]), float(math.sqrt(cov[0, 0])), residual, etas,
                      tuple(float(v) for v in inv), note)


def check_vel(pot, scalings=(1.0, 2.0, 4.0, 8.0), v0_uncertainty=0.05, v_factors=(0.8, 1.0, 1.2),
              vc_kwargs=None, v0_kwargs=None, eta_kwargs=None):
    """Velocity condition per scaling C: v_0(C xi) against v_c(C xi).

    ``vel_ok`` requires v_0 - v_c > 3 * hypot(SE(v_c), v0_uncertainty), where
    v0_uncertainty is the validated accuracy of the Lyapunov root finder.
    """
    reports = []
    for C in scalings:
        scaled = _base(pot).scaled(C)
        vc = estimate_vc(scaled, **(vc_kwargs or {}))
        v0 = feynman_kac.estimate_v0(scaled, **(v0_kwargs or {}))
        margin = 3.0 * math.hypot(vc.standard_error, v0_uncertainty)
        grid = []
        for f in v_factors:
            v = f * v0.v0
            if v > 1.05 * vc.v_c:
                grid.append((v, solve_eta_bar(scaled, v, vc=vc.v_c, **(eta_kwargs or {})).value))
        reports.append(VelocityReport(float(C), vc, v0, bool(v0.v0 - vc.v_c > margin), margin, tuple(grid)))
    return reports


L_COLUMNS = ("eta", "L_hat", "L_prime_hat", "se", "method")
ETA_COLUMNS = ("v", "eta_bar", "eta_x", "x")
VEL_COLUMNS = ("C", "v_c", "v_c_se", "v_c_residual", "v_0", "v_0_bracket_width", "margin", "vel_ok")


def write_L_csv(path, rows):
    write_csv(path, L_COLUMNS, rows)


def write_eta_csv(path, rows):
    write_csv(path, ETA_COLUMNS, rows)


def velocity_rows(reports):
    return [(r.scale, r.v_c, r.vc.standard_error, r.vc.residual, r.v_0, r.v0.bracket_width, r.margin, r.vel_ok)
            for r in reports]


def write_velocity_csv(path, reports):
    write_csv(path, VEL_COLUMNS, velocity_rows(reports))
