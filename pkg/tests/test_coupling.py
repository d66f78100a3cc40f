import math

import numpy as np
import pytest

from frontlab.coupling import (
    REPLICATE_COLUMNS,
    CouplingConfig,
    CouplingTrace,
    good_event_bounds,
    check_good_events,
    run_coupling,
    run_replicates,
    select_parameters,
    summarize,
    sup_expression,
    trend_test,
    verify_subset_logic,
    write_replicates_csv,
)
from frontlab.bbmre import run_replicates as bbm_replicates
from frontlab.environment import ConstantPotential, engineer_stretch_potential, poisson_potential
from frontlab.errors import ConfigError, DomainError, InfeasibleParametersError
from frontlab.io import read_csv


# -- feasibility -------------------------------------------------------------

def brute_sup(t_prime, A, B, n=20001):
    s = np.linspace(0, t_prime, n, endpoint=False)
    return float(np.max(t_prime + A * s - B / (t_prime - s)))


def window_oracle(ei, es, delta1, n=4001):
    """Feasible t' by direct evaluation of both suprema on a fine grid."""
    A = (es - ei) / ei
    B1, B2 = (1 + 4 * delta1) ** 2, (1 + 2 * delta1) ** 2
    ts = np.linspace(0.5, 1 - 5 * delta1, n, endpoint=False)
    ok = [t for t in ts if brute_sup(t, A, B1, 4001) < 0 < brute_sup(t, A, B2, 4001)]
    step = ts[1] - ts[0]
    return min(ok), max(ok), step


def test_sup_expression_matches_brute_force():
    for t in (0.3, 0.8, 0.95):
        for A, B in ((4.0, 1.1), (2.0, 1.02), (1.5, 1.3)):
            assert sup_expression(t, A, B) == pytest.approx(brute_sup(t, A, B), abs=1e-3)


def test_ratio_two_is_infeasible():
    with pytest.raises(InfeasibleParametersError):
        select_parameters(1.0, 2.0)
    with pytest.raises(InfeasibleParametersError):
        select_parameters(2.0, 3.5)


@pytest.mark.parametrize("ei, es, delta1, approx", [(1.0, 5.0, 0.01, (0.816, 0.832)),
                                                    (1.0, 3.0, 0.005, (0.952, 0.962))])
def test_window_against_oracle(ei, es, delta1, approx):
    p = select_parameters(ei, es, delta1=delta1)
    lo, hi, step = window_oracle(ei, es, delta1)
    assert abs(p.window[0] - lo) <= max(1e-3, step)
    assert abs(p.window[1] - hi) <= max(1e-3, step)
    assert p.window == pytest.approx(approx, abs=2e-3)
    assert p.window[1] < 1 - 5 * delta1


@pytest.mark.parametrize("ei, es", [(1.0, 3.0), (1.0, 5.0), (0.5, 2.0)])
def test_selected_parameters_are_feasible(ei, es):
    p = select_parameters(ei, es)
    assert p.A > 1
    assert p.window[0] < p.t_prime < p.window[1] <= 1 - 5 * p.delta1
    assert p.t_prime < 1 - 5 * p.delta1
    assert p.negsup < 0 < p.possup
    assert brute_sup(p.t_prime, p.A, p.B1) < 0 < brute_sup(p.t_prime, p.A, p.B2)
    assert 0 < p.delta2 < 1
    assert 0 < p.delta1 <= 0.05


def test_config_validation():
    with pytest.raises(ConfigError):
        CouplingConfig(1.0, 5.0, 40.0, 10.0, 0.01, l=40.0, r=40.15)
    with pytest.raises(ConfigError):
        CouplingConfig(1.0, 5.0, 40.0, 10.0, 0.01, l=39.55, r=40.5)
    cfg = CouplingConfig(1.0, 5.0, 40.0, 10.0, 0.01, l=39.55, r=40.15)
    assert cfg.L < cfg.l < cfg.m < cfg.r < cfg.R
    assert cfg.R - cfg.m == pytest.approx(cfg.m - cfg.L)


# -- simulation on the engineered medium -------------------------------------

@pytest.fixture(scope="module")
def small_setup():
    lam = 4.0
    params = select_parameters(1.0, 5.0)
    pot = engineer_stretch_potential(1.0, 5.0, lam, 40.0, window=(-60, 200))
    cfg = CouplingConfig.from_parameters(params, 1.0, 5.0, 40.0, lam, t_check=1.0)
    return pot, cfg


@pytest.fixture(scope="module")
def small_runs(small_setup):
    pot, cfg = small_setup
    return run_replicates(cfg, pot, 60, cap=50_000, sample_dt=0.01)


def test_initial_state(small_runs, small_setup):
    _, cfg = small_setup
    tr = small_runs[0].trace
    assert list(tr.counts[0]) == [1, 0, 0, 1, 0, 0]
    assert tr.min_left[0] == cfg.l and tr.min_right[0] == cfg.r
    assert cfg.m - cfg.l == pytest.approx(cfg.r - cfg.m)


def test_pair_invariants_hold_exactly(small_runs):
    for o in small_runs:
        c = o.trace.counts
        assert np.array_equal(c[:, 0], c[:, 3])  # |LM| = |RM|
        assert np.array_equal(c[:, 1], c[:, 4])  # |LC| = |RC|
        assert o.diagnostics["max_mirror_deviation"] <= 1e-12
        assert o.diagnostics["max_colocation_deviation"] <= 1e-12
        assert o.diagnostics["range_violations"] == 0


def test_ordering_violations_are_rare(small_runs):
    bad = sum(o.diagnostics["tau_violations"] > 0 for o in small_runs)
    assert bad / len(small_runs) < 0.01


def test_runs_are_nontrivial(small_runs):
    assert any(o.trace.counts[:, 1].max() > 0 for o in small_runs)
    assert any(o.trace.counts[:, 5].max() > 0 for o in small_runs)


def test_outcome_logic(small_runs):
    for o in small_runs:
        c = o.trace.counts_at_check
        if o.success is True and not o.trace.pruned:
            assert c["LM"] == 0 and c["Bad"] == 0
        if o.success is False:
            assert c["LM"] > 0 or c["Bad"] > 0 or o.diagnostics["first_bad_time"] <= o.trace.t_check
    rep = verify_subset_logic(small_runs)
    assert rep.n_reps == len(small_runs)
    assert rep.ok == (not rep.violations)


def test_replicates_are_reproducible(small_setup):
    pot, cfg = small_setup
    a = run_coupling(cfg, pot, replicate=5, cap=50_000)
    b = run_coupling(cfg, pot, replicate=5, cap=50_000)
    assert np.array_equal(a.trace.counts, b.trace.counts)
    assert a.G1 == b.G1 and a.G2 == b.G2 and a.success == b.success


def test_prune_mode_preserves_success_law(small_setup):
    # frozen pairs stop drawing random numbers, so streams diverge and only the laws can be compared
    pot, cfg = small_setup
    full = summarize(run_replicates(cfg, pot, 150, cap=50_000, horizon_factor=1.0))
    pruned = summarize(run_replicates(cfg, pot, 150, cap=50_000, horizon_factor=1.0, prune_coupled=True))
    assert full.n_determinate == pruned.n_determinate == 150
    pool = (full.successes + pruned.successes) / 300
    se = math.sqrt(2 * pool * (1 - pool) / 150)
    assert abs(full.frequency - pruned.frequency) <= 3 * se


def test_non_monotone_medium_rejected():
    params = select_parameters(1.0, 5.0)
    cfg = CouplingConfig.from_parameters(params, 1.0, 5.0, 40.0, 4.0)
    pot = poisson_potential(1.0, 5.0, (0, 80), 3)
    with pytest.raises(DomainError):
        run_coupling(cfg, pot)


def _totals(outcomes):
    left = np.array([o.trace.counts[-1, :3].sum() for o in outcomes])
    right = np.array([o.trace.counts[-1, 3:].sum() for o in outcomes])
    return left, right


def test_marginals_on_constant_medium():
    c, t = 1.0, 2.0
    cfg = CouplingConfig(c, c, 0.0, 10.0, 0.05, l=-2.25, r=0.75, t_check=t)
    outs = run_replicates(cfg, ConstantPotential(c), 3000, horizon_factor=1.0)
    for n in _totals(outs):
        assert abs(n.mean() - math.exp(c * t)) <= 3 * n.std(ddof=1) / math.sqrt(n.size)


def test_marginals_match_free_branching_on_stretch(small_setup):
    pot, cfg = small_setup
    t = 0.8
    cfg2 = CouplingConfig(cfg.ei, cfg.es, cfg.x_n, cfg.phi, cfg.delta1, cfg.l, cfg.r, t_check=t)
    outs = run_replicates(cfg2, pot, 2000, horizon_factor=1.0, cap=50_000)
    left, right = _totals(outs)
    for start, coupled in ((cfg.l, left), (cfg.r, right)):
        ref = bbm_replicates(pot, start, t, 4000, seed=21).count
        se = math.hypot(coupled.std(ddof=1) / math.sqrt(coupled.size), ref.std(ddof=1) / math.sqrt(ref.size))
        assert abs(coupled.mean() - ref.mean()) <= 3 * se


def test_good_event_frequencies_match_pde_probabilities():
    lam = 3.0
    params = select_parameters(1.0, 5.0)
    pot = engineer_stretch_potential(1.0, 5.0, lam, 40.0, window=(-60, 200))
    cfg = CouplingConfig.from_parameters(params, 1.0, 5.0, 40.0, lam, t_check=2.5)
    bounds = good_event_bounds(cfg, pot)
    outs = run_replicates(cfg, pot, 400, horizon_factor=1.0)
    assert not any(o.capped for o in outs)
    n = len(outs)
    g1_fail = sum(o.G1 is False for o in outs) / n
    g2 = sum(o.G2 is True for o in outs) / n
    for freq, p in ((g1_fail, bounds.p_g1_fails), (g2, bounds.p_g2)):
        assert abs(freq - p) <= 3 * math.sqrt(p * (1 - p) / n) + 0.01


# -- event bookkeeping on synthetic traces -----------------------------------

def synthetic_trace(first_touch=math.inf, min_right=5.0, lm=0, bad=0, t_stop=2.0, settled=False, pruned=False):
    return CouplingTrace(np.array([0.0, 1.0]), np.zeros((2, 6), dtype=int), np.array([1.0, 1.0]),
                         np.array([2.0, min_right]), t_stop, 1.0, first_touch, min_right,
                         {"LM": lm, "LC": 1, "Bad": bad}, 0.0, settled, pruned)


class _Outcome:
    def __init__(self, trace, replicate=0, seed=0, capped=False):
        self.trace, self.replicate, self.seed, self.capped = trace, replicate, seed, capped
        self.G1, self.G2 = check_good_events(trace)
        self.success = None


def test_no_touch_gives_first_event():
    assert check_good_events(synthetic_trace())[0] is True


def test_right_particle_below_level_gives_second_event():
    assert check_good_events(synthetic_trace(min_right=-0.1))[1] is True
    assert check_good_events(synthetic_trace(min_right=0.1))[1] is False


def test_touch_before_check_fails_first_event():
    assert check_good_events(synthetic_trace(first_touch=0.5))[0] is False
    assert check_good_events(synthetic_trace(first_touch=1.5))[0] is True


def test_capped_trace_is_undecided():
    g1, g2 = check_good_events(synthetic_trace(t_stop=0.5))
    assert g1 is None and g2 is None
    g1, _ = check_good_events(synthetic_trace(t_stop=0.5, first_touch=0.2))
    assert g1 is False


def test_pruned_trace_reports_only_safe_outcomes():
    assert check_good_events(synthetic_trace(pruned=True)) == (None, None)
    assert check_good_events(synthetic_trace(pruned=True, first_touch=0.3, min_right=-1.0)) == (False, True)


def test_subset_logic_flags_violations():
    good = _Outcome(synthetic_trace(min_right=-1.0), replicate=0)
    broken = _Outcome(synthetic_trace(min_right=-1.0, lm=2), replicate=1, seed=9)
    exempt = _Outcome(synthetic_trace(min_right=-1.0, first_touch=0.2, bad=3), replicate=2)
    rep = verify_subset_logic([good, broken, exempt])
    assert rep.n_checked == 2
    assert rep.violations == ((1, 9),)
    assert not rep.ok
    assert rep.rate == pytest.approx(1 / 3)
    assert verify_subset_logic([good, exempt]).ok


def test_summary_wilson_interval():
    outs = [_Outcome(synthetic_trace()) for _ in range(10)]
    for i, o in enumerate(outs):
        o.success = i < 7 if i < 9 else None
    s = summarize(outs)
    assert s.n_determinate == 9 and s.successes == 7
    assert s.ci_low < 7 / 9 < s.ci_high


def test_trend_test_direction():
    tau, p = trend_test([10, 15, 20], [0.1, 0.2, 0.3])
    assert tau == pytest.approx(1.0)
    assert 0 <= p <= 1


def test_replicate_csv(tmp_path, small_runs):
    path = tmp_path / "replicates.csv"
    write_replicates_csv(path, small_runs[:5])
    header, rows = read_csv(path)
    assert header == list(REPLICATE_COLUMNS) and len(rows) == 5
