"""Batch drivers that reproduce the qualitative front phenomena at desk scale.

Each driver takes an :class:`~frontlab.config.ExperimentConfig`, computes its
tables and a verdict, and returns an :class:`ExperimentResult`.
:func:`run_experiment` writes the tables as CSV plus a manifest. Verdicts
are finite-scale surrogates for asymptotic statements and the CSV headers
say so.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.stats import kendalltau

from . import coupling, mgf, pde_solver
from .branching_law import Nonlinearity
from .config import RunManifest, body_digest, config_hash, module_versions
from .environment import ConstantPotential, engineer_stretch_potential, find_stretches
from .errors import ConfigError, DomainError, PreconditionError
from .io import write_csv
from .pde_solver import FKPP, FRONT_COLUMNS, PAM, InitialCondition, SolverConfig

SURROGATE_NOTE = "finite-scale surrogate of an asymptotic statement"
WITNESS_COLUMNS = ("t", "l", "r", "w_l", "w_r", "r_minus_l")
VERDICT_COLUMNS = ("quantity", "value")
COUPLING_DIAG_COLUMNS = ("Lambda", "n_reps", "n_determinate", "events", "capped_fraction", "p_g2_bound",
                         "p_g1_fails")


@dataclass
class ExperimentResult:
    name: str
    verdict: bool | None  # None: precondition failed and the run was forced
    supported: bool
    tables: dict = field(default_factory=dict)  # file name -> (header, rows)
    summary: dict = field(default_factory=dict)


@dataclass(frozen=True)
class Stretch:
    center: float
    half_length: float

    @property
    def span(self):
        return self.center - 2 * self.half_length, self.center + 2 * self.half_length


# -- helpers -----------------------------------------------------------------


def _verdict_rows(summary):
    return [(k, v) for k, v in summary.items()]


def _stretch_of(cfg, pot):
    """Engineered placement, a found stretch, or None for the homogeneous control."""
    if isinstance(pot, ConstantPotential):
        return None
    if getattr(pot, "engineered", None) is not None:
        c, lam = pot.engineered
        return Stretch(float(c), float(lam))
    c0 = cfg.get_float("experiment", "stretch_c0")
    ns = cfg.get_floats("experiment", "stretch_n")
    if c0 is None or not ns:
        raise DomainError("no stretch given; set stretch_c0 and stretch_n, or use engineer_stretch_potential "
                          "(potential kind = engineered)")
    for rep in find_stretches(pot, c0, [int(n) for n in ns]):
        if rep.monotone_ok:
            return Stretch(rep.x_n, c0 * math.log(rep.n))
    raise DomainError("no monotone stretch found in the potential; use engineer_stretch_potential instead")


def _solver_for(cfg, pot, default_window):
    sc = cfg.solver()
    if sc.window is None and not isinstance(pot, ConstantPotential):
        sc = SolverConfig(sc.dx, sc.dt, sc.margin, default_window, sc.observe_dt, sc.snapshot_times, sc.eps, sc.M)
    return sc


def _kendall_increasing(ts, ws):
    """One-sided p-value for an increasing trend; constant series count as trend-free."""
    if len(ws) < 3 or np.ptp(ws) == 0:
        return 0.0, 1.0
    res = kendalltau(ts, ws, alternative="greater")
    return float(res.statistic), float(res.pvalue)


def boundedness_verdict(times, widths, burn_in=5.0, trend_dt=1.0, ratio=1.2, alpha=0.05):
    """Last-quarter mean width at most ``ratio`` times the first-quarter mean after ``burn_in``,
    and no increasing Kendall trend on the series thinned to one point per ``trend_dt``."""
    times = np.asarray(times, dtype=float)
    widths = np.asarray(widths, dtype=float)
    keep = (times >= burn_in) & np.isfinite(widths)
    t, w = times[keep], widths[keep]
    if t.size < 8:
        raise DomainError("too few width samples after burn-in; increase t_end or reduce observe_dt")
    q = t.size // 4
    first, last = float(w[:q].mean()), float(w[-q:].mean())
    stride = max(1, int(round(trend_dt / np.median(np.diff(t)))))
    tau, p = _kendall_increasing(t[::stride], w[::stride])
    ok = bool(last <= ratio * first and p > alpha)
    return ok, {"first_quarter_mean": first, "last_quarter_mean": last, "kendall_tau": tau, "kendall_p": p}


def _velocity_kwargs(cfg):
    seed = cfg.seed
    vc_kw = {"n_paths": cfg.get_int("mc", "n_paths", 2000), "dt": cfg.get_float("mc", "dt", 1e-2),
             "realizations": cfg.get_int("mc", "realizations", 10), "x_max": cfg.get_float("mc", "x_max", 20.0),
             "seed": seed}
    v0_kw = {}
    if cfg.get_float("mc", "v0_t") is not None:
        v0_kw["t"] = cfg.get_float("mc", "v0_t")
    if cfg.get_float("mc", "v0_dx") is not None:
        v0_kw["dx"] = cfg.get_float("mc", "v0_dx")
    return vc_kw, v0_kw


# -- PAM width ---------------------------------------------------------------


def exp_pam_width(cfg, force=False, threads=1):
    pot = cfg.potential()
    if isinstance(pot, ConstantPotential):
        vel_ok, vel_note = True, "constant potential: v_c = 0 < sqrt(2c) = v_0"
    else:
        vc_kw, v0_kw = _velocity_kwargs(cfg)
        vc_kw["threads"] = threads
        rep = mgf.check_vel(pot, scalings=(1.0,), v_factors=(), vc_kwargs=vc_kw, v0_kwargs=v0_kw)[0]
        vel_ok = rep.vel_ok
        vel_note = f"v_c = {rep.v_c:.4g}, v_0 = {rep.v_0:.4g}, margin {rep.margin:.3g}"
    if not vel_ok and not force:
        raise PreconditionError(f"velocity condition fails ({vel_note}); rerun with --force to compute anyway")
    t_end = cfg.get_float("experiment", "t_end", 40.0)
    window = None if isinstance(pot, ConstantPotential) else (max(pot.window[0], -40.0), pot.window[1])
    sc = _solver_for(cfg, pot, window)
    init = InitialCondition("pam_class", cfg.get_float("experiment", "init_delta", 0.5),
                            cfg.get_float("experiment", "init_C", 2.0))
    sol = pde_solver.solve(pot, init, t_end, sc, kind=PAM)
    times = [f.t for f in sol.fronts]
    widths = [f.width_pam for f in sol.fronts]
    ok, stats = boundedness_verdict(times, widths, cfg.get_float("experiment", "burn_in", 5.0),
                                    cfg.get_float("experiment", "trend_dt", 1.0))
    summary = {"verdict_bounded": ok if vel_ok else None, "width_checks_pass": ok, "vel_ok": vel_ok, **stats,
               "max_width": float(np.nanmax(widths)), "t_end": t_end}
    tables = {
        "pam_width.csv": (FRONT_COLUMNS, [f.row() for f in sol.fronts]),
        "pam_width_verdict.csv": (VERDICT_COLUMNS, _verdict_rows(summary)),
    }
    return ExperimentResult("pam_width", ok if vel_ok else None, vel_ok, tables, summary)


# -- F-KPP width and non-monotonicity -----------------------------------------


def _contrast_precondition(pot):
    if pot.es / pot.ei <= 2 and not isinstance(pot, ConstantPotential):
        raise PreconditionError("F-KPP widening needs es/ei > 2")


def _fkpp_run(cfg, pot, stretch):
    if stretch is not None:
        # homogeneous-speed time to pass the far end; the stretch itself only speeds the front up
        default_t = (stretch.span[1] + 10) / math.sqrt(2 * pot.ei)
        window = (max(pot.window[0], min(-40.0, stretch.span[0] - 20)), pot.window[1])
    else:
        default_t = 40.0
        window = None
    t_end = cfg.get_float("experiment", "t_end", default_t)
    sc = _solver_for(cfg, pot, window)
    if isinstance(pot, ConstantPotential) and sc.window is None:
        sc = SolverConfig(sc.dx, sc.dt, sc.margin, (-40.0, 40.0 + 1.5 * t_end), sc.observe_dt, (), sc.eps, sc.M)
    n_obs = int(math.floor(t_end / sc.observe_dt + 1e-9))
    snaps = tuple(sc.observe_dt * k for k in range(1, n_obs + 1))
    sc = SolverConfig(sc.dx, sc.dt, sc.margin, sc.window, sc.observe_dt, snaps, sc.eps, sc.M)
    nl = Nonlinearity(cfg.offspring())
    return pde_solver.solve(pot, InitialCondition("heaviside"), t_end, sc, kind=FKPP, nl=nl), t_end


def exp_fkpp_width(cfg, force=False, threads=1):
    pot = cfg.potential()
    _contrast_precondition(pot)
    stretch = _stretch_of(cfg, pot)
    sol, t_end = _fkpp_run(cfg, pot, stretch)
    fronts = sol.fronts
    t = np.array([f.t for f in fronts])
    w = np.array([f.width_fkpp for f in fronts])
    front = np.array([f.m_eps for f in fronts])
    back = np.array([f.m_eps_minus for f in fronts])
    burn_in = cfg.get_float("experiment", "burn_in", 5.0)
    valid = (t >= burn_in) & np.isfinite(w)
    summary = {"stretch_center": math.nan, "stretch_half_length": math.nan}
    if stretch is None:
        on = np.zeros_like(valid)
    else:
        a, b = stretch.span
        on = valid & (front >= a) & (front <= b)
        summary.update(stretch_center=stretch.center, stretch_half_length=stretch.half_length)
    off = valid & ~on
    max_on = float(w[on].max()) if on.any() else math.nan
    med_off = float(np.median(w[off])) if off.any() else math.nan
    widening = bool(on.any() and off.any() and max_on >= 2 * med_off)
    i_max = int(np.nanargmax(np.where(valid, w, -np.inf)))
    location = 0.5 * (front[i_max] + back[i_max])
    summary.update(max_width_on_stretch=max_on, median_width_off_stretch=med_off, verdict_widening=widening,
                   width_max_time=float(t[i_max]), width_max_location=float(location))
    if stretch is not None:
        a, b = stretch.span
        summary["width_max_localized"] = bool(a <= location <= b)
        level = cfg.get_float("experiment", "delta", 0.5)
        eps = cfg.get_float("experiment", "eps", 0.05)
        params = coupling.select_parameters(pot.ei, pot.es)
        s = params.delta1 * stretch.half_length
        l_pt, r_pt = stretch.center - 4.5 * s, stretch.center + 1.5 * s
        t_n = math.nan
        wl = wr = math.nan
        for tt in sorted(sol.snapshots):
            fld = sol.snapshots[tt]
            wx = float(np.interp(stretch.center, fld.x, fld.values))
            if wx >= level:
                t_n = tt
                wl = float(np.interp(l_pt, fld.x, fld.values))
                wr = float(np.interp(r_pt, fld.x, fld.values))
                break
        summary.update(passage_level=level, passage_time=t_n, l=l_pt, r=r_pt, w_l=wl, w_r=wr,
                       inequality_holds=bool(wl <= wr + eps) if math.isfinite(wl) else False)
    tables = {
        "fkpp_width.csv": (FRONT_COLUMNS, [f.row() for f in fronts]),
        "fkpp_width_verdict.csv": (VERDICT_COLUMNS, _verdict_rows(summary)),
    }
    return ExperimentResult("fkpp_width", widening, True, tables, summary)


def find_witnesses(x, w, eps=0.05):
    """Best pair l < r with w(l) <= w(r) - eps, or None.

    "Best" maximizes w(r) - min_{l<r} w(l); among minimizers the rightmost l is kept.
    """
    x = np.asarray(x)
    w = np.asarray(w)
    if w.size < 2:
        return None
    prefix = np.minimum.accumulate(w[:-1])
    gaps = w[1:] - prefix
    j = int(np.argmax(gaps))
    if gaps[j] < eps:
        return None
    r_idx = j + 1
    l_idx = int(np.flatnonzero(w[:r_idx] == prefix[j])[-1])
    return float(x[l_idx]), float(x[r_idx]), float(w[l_idx]), float(w[r_idx])


def exp_nonmonotone(cfg, force=False, threads=1):
    pot = cfg.potential()
    _contrast_precondition(pot)
    stretch = _stretch_of(cfg, pot)
    sol, _ = _fkpp_run(cfg, pot, stretch)
    eps = cfg.get_float("experiment", "eps", 0.05)
    rows = []
    for tt in sorted(sol.snapshots):
        fld = sol.snapshots[tt]
        wit = find_witnesses(fld.x, fld.values, eps)
        if wit is not None:
            l_pt, r_pt, wl, wr = wit
            rows.append((tt, l_pt, r_pt, wl, wr, r_pt - l_pt))
    summary = {"n_witnesses": len(rows), "eps": eps}
    if stretch is not None:
        lam = stretch.half_length
        summary["n_in_range"] = sum(1 for r in rows if 2 <= r[5] <= 2 * lam)
    tables = {
        "nonmonotone_witnesses.csv": (WITNESS_COLUMNS, rows),
        "nonmonotone_verdict.csv": (VERDICT_COLUMNS, _verdict_rows(summary)),
    }
    return ExperimentResult("nonmonotone", bool(rows), True, tables, summary)


# -- velocity scan -----------------------------------------------------------


def exp_vel_scan(cfg, force=False, threads=1):
    pot = cfg.potential()
    scalings = cfg.get_floats("experiment", "scalings", (1.0, 2.0, 4.0, 8.0))
    if not scalings:
        raise ConfigError("scalings must be non-empty")
    vc_kw, v0_kw = _velocity_kwargs(cfg)
    vc_kw["threads"] = threads
    eta_kw = {k: vc_kw[k] for k in ("n_paths", "dt", "realizations", "x_max", "seed")}
    eta_kw["threads"] = threads
    factors = cfg.get_floats("experiment", "v_factors", (0.8, 1.0, 1.2))
    reports = mgf.check_vel(pot, scalings=scalings, v_factors=factors, vc_kwargs=vc_kw, v0_kwargs=v0_kw,
                            eta_kwargs=eta_kw)
    v0s = [r.v_0 for r in reports]
    increasing = bool(all(b > a for a, b in zip(v0s, v0s[1:])))
    summary = {"vel_ok_at_max_C": reports[-1].vel_ok, "v0_strictly_increasing": increasing}
    eta_rows = [(r.scale, v, eb) for r in reports for v, eb in r.eta_bar]
    tables = {
        "vel_scan.csv": (mgf.VEL_COLUMNS, mgf.velocity_rows(reports)),
        "vel_scan_eta_bar.csv": (("C", "v", "eta_bar"), eta_rows),
        "vel_scan_verdict.csv": (VERDICT_COLUMNS, _verdict_rows(summary)),
    }
    return ExperimentResult("vel_scan", bool(reports[-1].vel_ok and increasing), True, tables, summary)


# -- coupling ----------------------------------------------------------------


def coupling_setup(cfg, lam):
    """Engineered medium, parameters and coupling config for one Lambda."""
    base = cfg.potential()
    ei, es = base.ei, base.es
    center = cfg.get_float("coupling", "center", 0.0)
    pad = 4 * lam + 40
    pot = engineer_stretch_potential(ei, es, lam, center, window=(center - pad, center + pad))
    delta1 = cfg.get_float("coupling", "delta1")
    params = coupling.select_parameters(ei, es, delta1)
    ccfg = coupling.CouplingConfig.from_parameters(
        params, ei, es, center, lam, dt=cfg.get_float("coupling", "dt", 1e-3),
        l_frac=cfg.get_float("coupling", "l_frac", 0.5), r_frac=cfg.get_float("coupling", "r_frac", 0.5),
        seed=cfg.seed, t_check=cfg.get_float("coupling", "t_check"))
    return pot, params, ccfg


def exp_coupling(cfg, force=False, threads=1):
    base = cfg.potential()
    if not base.es / base.ei > 2:
        coupling.select_parameters(base.ei, base.es)  # raises the infeasibility error
    lambdas = cfg.get_floats("coupling", "lambdas", (10.0, 15.0, 20.0))
    n_reps = cfg.get_int("coupling", "n_reps", 200)
    cap = cfg.get_int("coupling", "cap", coupling.DEFAULT_CAP)
    horizon = cfg.get_float("coupling", "horizon_factor", 2.0)
    prune = cfg.get_bool("coupling", "prune", False)
    event = cfg.section("coupling").get("event", "success").strip()
    if event not in ("success", "good"):
        raise ConfigError("[coupling] event must be 'success' or 'good'")
    target = cfg.get_float("coupling", "target", 0.7)
    dist = cfg.offspring()
    agg, diag, tables = [], [], {}
    freqs = []
    for lam in lambdas:
        pot, params, ccfg = coupling_setup(cfg, lam)
        outs = coupling.run_replicates(ccfg, pot, n_reps, dist, cap, horizon, threads, prune_coupled=prune)
        s = coupling.summarize(outs, event)
        # undecided replicates count against the event, so the frequency is a lower bound
        freq = s.successes / s.n_reps
        freqs.append(freq)
        agg.append((lam, params.delta1, params.t_prime, freq, s.ci_low, s.ci_high))
        bounds = coupling.good_event_bounds(ccfg, pot, dist)
        diag.append((lam, s.n_reps, s.n_determinate, s.successes, s.capped_fraction, bounds.p_g2,
                     bounds.p_g1_fails))
        tables[f"coupling_replicates_L{lam:g}.csv"] = (coupling.REPLICATE_COLUMNS, coupling.replicate_rows(outs))
    tau, p = coupling.trend_test(lambdas, freqs) if len(lambdas) > 1 else (math.nan, math.nan)
    reached = all(f >= target for f in freqs)
    summary = {"event": event, "target": target, "all_above_target": reached, "kendall_tau": tau, "kendall_p": p}
    tables["coupling_aggregate.csv"] = (coupling.AGGREGATE_COLUMNS, agg)
    tables["coupling_diagnostics.csv"] = (COUPLING_DIAG_COLUMNS, diag)
    tables["coupling_verdict.csv"] = (VERDICT_COLUMNS, _verdict_rows(summary))
    return ExperimentResult("coupling", bool(reached and not (tau < 0)), True, tables, summary)


DRIVERS = {
    "pam_width": exp_pam_width,
    "fkpp_width": exp_fkpp_width,
    "nonmonotone": exp_nonmonotone,
    "vel_scan": exp_vel_scan,
    "coupling": exp_coupling,
}


def run_experiment(cfg, out_dir=None, force=False, threads=1):
    """Validate, run, write every table plus ``manifest.json``; returns (result, manifest)."""
    cfg.validate()
    name = cfg.name
    if name not in DRIVERS:
        raise ConfigError(f"unknown experiment {name!r}")
    out = Path(out_dir or cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    started = time.time()
    result = DRIVERS[name](cfg, force=force, threads=threads)
    outputs = {}
    for fname, (header, rows) in sorted(result.tables.items()):
        path = out / fname
        write_csv(path, header, rows, comments=(f"experiment {name}: {SURROGATE_NOTE}",))
        outputs[fname] = body_digest(path)
    wall = {"started_unix": started, "seconds": time.time() - started}
    manifest = RunManifest(cfg.to_text(), config_hash(cfg), cfg.seeds, module_versions(), wall, outputs,
                           result.verdict)
    manifest.write(out)
    return result, manifest


def rerun_manifest(manifest, out_dir, threads=1, force=False):
    """Run the manifest's config again into ``out_dir``; returns the outputs whose bodies differ."""
    cfg = manifest.config()
    run_experiment(cfg, out_dir, force=force, threads=threads)
    return manifest.compare(out_dir)


__all__ = ["DRIVERS", "ExperimentResult", "boundedness_verdict", "coupling_setup", "exp_coupling",
           "exp_fkpp_width", "exp_nonmonotone", "exp_pam_width", "exp_vel_scan", "find_witnesses",
           "rerun_manifest", "run_experiment"]
