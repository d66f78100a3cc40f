"""Command-line entry point ``frontlab``.

Exit codes: 0 success, 2 configuration or input error, 3 numerical
failure, 4 failed precondition, 5 negative verdict.
"""
from __future__ import annotations

import argparse
import math
import sys
from pathlib import Path

from . import bbmre, coupling, experiments, feynman_kac, mgf, pde_solver
from .config import ExperimentConfig, RunManifest
from .environment import ConstantPotential, discretize, find_stretches
from .errors import ConfigError, DomainError, FrontlabError, NumericalError, PreconditionError
from .io import write_csv

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_PRECONDITION, EXIT_VERDICT = 0, 2, 3, 4, 5


def _floats(text):
    try:
        return [float(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _load_config(args):
    cfg = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
    if getattr(args, "constant", None) is not None:
        cfg.sections["potential"] = {"kind": "constant", "value": repr(float(args.constant))}
    if args.seed is not None:
        cfg.set("experiment", "seeds", args.seed)
    cfg.validate()
    return cfg


def _potential(cfg):
    if "potential" not in cfg.sections:
        raise ConfigError("no potential: pass --config with a [potential] section or --constant VALUE")
    return cfg.potential()


def _out_dir(args, cfg):
    out = Path(args.out or cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _say(msg):
    print(msg, file=sys.stdout)


# -- subcommands -------------------------------------------------------------


def cmd_potential(args):
    cfg = _load_config(args)
    pot = _potential(cfg)
    out = _out_dir(args, cfg)
    if isinstance(pot, ConstantPotential) and not math.isfinite(pot.window[0]):
        raise ConfigError("a constant potential needs a finite window to be tabulated")
    lat = discretize(pot, args.dx)
    lat.to_csv(out / "potential.csv")
    _say(f"wrote {out / 'potential.csv'} ({lat.values.size} points)")
    if args.stretch_c0 is not None:
        ns = [int(n) for n in args.stretch_n]
        reps = find_stretches(pot, args.stretch_c0, ns)
        rows = [(r.n, r.x_n, r.c0, r.low_interval[0], r.low_interval[1], r.high_interval[0], r.high_interval[1],
                 r.monotone_ok) for r in reps]
        write_csv(out / "stretches.csv", ("n", "x_n", "c0", "low_start", "low_end", "high_start", "high_end",
                                          "monotone_ok"), rows)
        _say(f"found {len(rows)} stretches")
    return EXIT_OK


def _solve(args, cfg):
    pot = _potential(cfg)
    kind = args.equation.upper()
    if kind not in (pde_solver.PAM, pde_solver.FKPP):
        raise ConfigError("equation must be PAM or FKPP")
    init = pde_solver.InitialCondition(args.init)
    nl = None
    if kind == pde_solver.FKPP:
        nl = pde_solver.Nonlinearity(cfg.offspring())
    return pde_solver.solve(pot, init, args.t_end, cfg.solver(), kind=kind, nl=nl)


def cmd_solve(args):
    cfg = _load_config(args)
    sol = _solve(args, cfg)
    out = _out_dir(args, cfg)
    fields = [sol.snapshots[t] for t in sorted(sol.snapshots)] + [sol.final]
    pde_solver.write_snapshot_csv(out / "snapshots.csv", fields)
    pde_solver.write_fronts_csv(out / "fronts.csv", sol.fronts)
    _say(f"t={sol.final.time:g}: wrote snapshots.csv and fronts.csv to {out}")
    return EXIT_OK


def cmd_fronts(args):
    cfg = _load_config(args)
    sol = _solve(args, cfg)
    out = _out_dir(args, cfg)
    pde_solver.write_fronts_csv(out / "fronts.csv", sol.fronts)
    last = sol.fronts[-1]
    _say(f"t={last.t:g}: m_eps={last.m_eps:.6g} width_fkpp={last.width_fkpp:.6g} width_pam={last.width_pam:.6g}")
    return EXIT_OK


def cmd_mc_u(args):
    cfg = _load_config(args)
    pot = _potential(cfg)
    n_paths = args.n_paths or cfg.get_int("mc", "n_paths", 100_000)
    rows = []
    for x in args.x:
        est = feynman_kac.estimate_u_mc(pot, args.t, x, n_paths=n_paths, dt=args.dt, seed=cfg.seed,
                                        threads=args.threads)
        rows.append((args.t, x, est.value, est.standard_error, est.n_paths, est.dt))
        _say(f"u({args.t:g}, {x:g}) = {est.value:.6g} +- {est.standard_error:.2g}")
    write_csv(_out_dir(args, cfg) / "mc_u.csv", ("t", "x", "u_hat", "se", "n_paths", "dt"), rows)
    return EXIT_OK


def cmd_lyapunov(args):
    cfg = _load_config(args)
    pot = _potential(cfg)
    curve = feynman_kac.estimate_lyapunov(pot, args.v, t=args.t, dx=args.dx)
    out = _out_dir(args, cfg)
    write_csv(out / "lyapunov.csv", ("v", "lambda"), list(zip(curve.v, curve.lam)))
    if args.v0:
        est = feynman_kac.estimate_v0(pot, dx=args.dx)
        write_csv(out / "v0.csv", ("v_0", "bracket_low", "bracket_high"), [(est.v0, *est.bracket)])
        _say(f"v_0 = {est.v0:.6g}")
    return EXIT_OK


def cmd_mgf(args):
    cfg = _load_config(args)
    pot = _potential(cfg)
    kw = {"n_paths": args.n_paths or cfg.get_int("mc", "n_paths", 2000), "dt": cfg.get_float("mc", "dt", 1e-2),
          "seed": cfg.seed, "realizations": cfg.get_int("mc", "realizations", 10),
          "x_max": cfg.get_float("mc", "x_max", 20.0), "threads": args.threads}
    out = _out_dir(args, cfg)
    rows = []
    for eta in args.eta:
        L = mgf.estimate_L(pot, eta, **kw)
        d = mgf.estimate_L_prime(pot, eta, **kw)
        rows.append((eta, L.value, d.method_a, d.se_a, "A"))
        rows.append((eta, L.value, d.method_b, d.se_b, "B"))
        _say(f"L({eta:g}) = {L.value:.6g} +- {L.standard_error:.2g}, L' = {d.method_a:.6g} (A) {d.method_b:.6g} (B)")
    if rows:
        mgf.write_L_csv(out / "mgf_L.csv", rows)
    eta_rows = []
    for v in args.v:
        root = mgf.solve_eta_bar(pot, v, **kw)
        eta_rows.append((v, root.value, math.nan, kw["x_max"]))
        _say(f"eta_bar({v:g}) = {root.value:.6g}")
    if eta_rows:
        mgf.write_eta_csv(out / "mgf_eta.csv", eta_rows)
    return EXIT_OK


def cmd_bbmre_w(args):
    cfg = _load_config(args)
    pot = _potential(cfg)
    if len(args.x) != len(args.t):
        raise ConfigError("--x and --t need the same number of entries")
    n_reps = args.n_reps or cfg.get_int("mc", "n_reps", 10_000)
    cap = args.cap or cfg.get_int("mc", "cap", bbmre.DEFAULT_CAP)
    ests = []
    for x, t in zip(args.x, args.t):
        e = bbmre.estimate_w(pot, x, t, cfg.offspring(), n_reps, cap, cfg.seed, threads=args.threads)
        ests.append(e)
        _say(f"w({t:g}, {x:g}) = {e.w_hat:.6g} +- {e.standard_error:.2g}")
    bbmre.write_w_csv(_out_dir(args, cfg) / "bbmre_w.csv", ests)
    return EXIT_OK


def cmd_couple(args):
    cfg = _load_config(args)
    _potential(cfg)
    if args.lam is not None:
        cfg.set("coupling", "lambdas", args.lam)
    lam = cfg.get_floats("coupling", "lambdas", (15.0,))[0]
    pot, params, ccfg = experiments.coupling_setup(cfg, lam)
    n_reps = args.n_reps or cfg.get_int("coupling", "n_reps", 200)
    cap = cfg.get_int("coupling", "cap", coupling.DEFAULT_CAP)
    outs = coupling.run_replicates(ccfg, pot, n_reps, cfg.offspring(), cap,
                                   cfg.get_float("coupling", "horizon_factor", 2.0), args.threads,
                                   prune_coupled=cfg.get_bool("coupling", "prune", False))
    out = _out_dir(args, cfg)
    coupling.write_replicates_csv(out / "coupling_replicates.csv", outs)
    s = coupling.summarize(outs, cfg.section("coupling").get("event", "success").strip())
    freq = s.successes / s.n_reps
    coupling.write_aggregate_csv(out / "coupling_aggregate.csv",
                                 [(lam, params.delta1, params.t_prime, freq, s.ci_low, s.ci_high)])
    _say(f"Lambda={lam:g}: {s.successes}/{s.n_reps} events ({s.n_determinate} decided), "
         f"95% CI on decided [{s.ci_low:.3f}, {s.ci_high:.3f}]")
    return EXIT_OK


def cmd_exp(args):
    if args.rerun:
        manifest = RunManifest.load(args.rerun)
        out = Path(args.out or Path(args.rerun).parent / "rerun")
        bad = experiments.rerun_manifest(manifest, out, threads=args.threads, force=args.force)
        if bad:
            _say(f"rerun differs in: {', '.join(bad)}")
            return EXIT_VERDICT
        _say(f"rerun into {out} reproduced all {len(manifest.outputs)} CSV bodies")
        return EXIT_OK
    cfg = _load_config(args)
    if args.name:
        cfg.set("experiment", "name", args.name)
    if not cfg.name:
        raise ConfigError("name the experiment: frontlab exp <name> or [experiment] name")
    cfg.validate()
    result, _ = experiments.run_experiment(cfg, args.out, force=args.force, threads=args.threads)
    for k, v in result.summary.items():
        _say(f"{k}: {v}")
    if result.verdict is None:
        _say("verdict: unsupported (precondition failed, run forced)")
        return EXIT_PRECONDITION
    _say(f"verdict: {result.verdict}")
    return EXIT_OK if result.verdict else EXIT_VERDICT


# -- parser ------------------------------------------------------------------


def build_parser():
    def global_flags(suppress):
        # flags are accepted before and after the subcommand; the subcommand copy must not reset them
        g = argparse.ArgumentParser(add_help=False)
        kw = {"default": argparse.SUPPRESS} if suppress else {}
        g.add_argument("--config", help="sectioned config file", **kw)
        g.add_argument("--seed", type=int, help="overrides [experiment] seeds", **kw)
        g.add_argument("--out", help="output directory (default: [experiment] output_dir)", **kw)
        g.add_argument("--threads", type=int, **({"default": 1} if not suppress else kw))
        g.add_argument("--force", action="store_true", help="run even if a precondition fails", **kw)
        return g

    common = global_flags(True)
    p = argparse.ArgumentParser(prog="frontlab", description="Fronts of F-KPP and PAM in random media.",
                                parents=[global_flags(False)])
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, func, help_text):
        sp = sub.add_parser(name, parents=[common], help=help_text)
        sp.set_defaults(func=func)
        sp.add_argument("--constant", type=float, help="use xi = CONSTANT instead of the config potential")
        return sp

    sp = add("potential", cmd_potential, "tabulate the potential and optionally search for stretches")
    sp.add_argument("--dx", type=float, default=0.05)
    sp.add_argument("--stretch-c0", type=float)
    sp.add_argument("--stretch-n", type=_floats, default=[])

    for name, func, text in (("solve", cmd_solve, "integrate PAM or F-KPP; write snapshots and fronts"),
                             ("fronts", cmd_fronts, "integrate and write only the front trajectory")):
        sp = add(name, func, text)
        sp.add_argument("--equation", default="FKPP")
        sp.add_argument("--t-end", type=float, default=10.0)
        sp.add_argument("--init", default="heaviside", choices=("heaviside", "pam_class"))

    sp = add("mc-u", cmd_mc_u, "Feynman-Kac Monte Carlo value of the PAM solution")
    sp.add_argument("--t", type=float, required=True)
    sp.add_argument("--x", type=_floats, required=True)
    sp.add_argument("--n-paths", type=int)
    sp.add_argument("--dt", type=float, default=1e-2)

    sp = add("lyapunov", cmd_lyapunov, "Lyapunov curve and optionally its root v_0")
    sp.add_argument("--v", type=_floats, required=True)
    sp.add_argument("--t", type=float, default=30.0)
    sp.add_argument("--dx", type=float, default=0.05)
    sp.add_argument("--v0", action="store_true")

    sp = add("mgf", cmd_mgf, "hitting-time log-MGF, its slope, and eta_bar(v)")
    sp.add_argument("--eta", type=_floats, default=[])
    sp.add_argument("--v", type=_floats, default=[])
    sp.add_argument("--n-paths", type=int)

    sp = add("bbmre-w", cmd_bbmre_w, "McKean estimate of w(t, x) from branching particles")
    sp.add_argument("--x", type=_floats, required=True)
    sp.add_argument("--t", type=_floats, required=True)
    sp.add_argument("--n-reps", type=int)
    sp.add_argument("--cap", type=int)

    sp = add("couple", cmd_couple, "coupling replicates on an engineered stretch")
    sp.add_argument("--lam", type=float)
    sp.add_argument("--n-reps", type=int)

    sp = add("exp", cmd_exp, "run a named experiment or rerun a manifest")
    sp.add_argument("name", nargs="?", choices=experiments.DRIVERS.keys())
    sp.add_argument("--rerun", help="manifest.json (or its directory) to reproduce")
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, DomainError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except PreconditionError as exc:
        print(f"precondition failed: {exc}", file=sys.stderr)
        return EXIT_PRECONDITION
    except NumericalError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except FrontlabError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
