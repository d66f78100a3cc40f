"""How likely are the good events of the coupling at desk scale?

Run: python demos/coupling_bounds.py   (under a minute)

The parameters (delta1, t') come from a feasibility search. For each stretch
half-length Lambda, the probability that a right particle sits below L at the
check time is computed exactly from the nonlinear equation. That probability
bounds the joint good-event frequency from above. A short simulation at the
smallest Lambda shows the estimate landing on the computed values.
"""
from frontlab import coupling
from frontlab.environment import engineer_stretch_potential

params = coupling.select_parameters(1.0, 5.0)
print(f"delta1 = {params.delta1:.3f}, t' = {params.t_prime:.4f}, feasible window "
      f"({params.window[0]:.4f}, {params.window[1]:.4f})")

for lam in (3.0, 5.0, 10.0, 15.0):
    pot = engineer_stretch_potential(1.0, 5.0, lam, 40.0, window=(-60, 200))
    cfg = coupling.CouplingConfig.from_parameters(params, 1.0, 5.0, 40.0, lam)
    b = coupling.good_event_bounds(cfg, pot)
    print(f"Lambda = {lam:4.0f}: t_check = {cfg.t_check:6.2f}, P(left touches L) = {b.p_g1_fails:.3e}, "
          f"P(right below L) = {b.p_g2:.3e}")

lam = 3.0
pot = engineer_stretch_potential(1.0, 5.0, lam, 40.0, window=(-60, 200))
cfg = coupling.CouplingConfig.from_parameters(params, 1.0, 5.0, 40.0, lam, t_check=2.5)
b = coupling.good_event_bounds(cfg, pot)
outs = coupling.run_replicates(cfg, pot, 400, horizon_factor=1.0)
g1_fail = sum(o.G1 is False for o in outs) / len(outs)
g2 = sum(o.G2 is True for o in outs) / len(outs)
print(f"\nLambda = 3, t_check = 2.5, 400 coupled runs:")
print(f"  left touches L: simulated {g1_fail:.3f}, computed {b.p_g1_fails:.3f}")
print(f"  right below L:  simulated {g2:.3f}, computed {b.p_g2:.3f}")
s = coupling.summarize(outs)
print(f"  coupling success {s.successes}/{s.n_determinate}, 95% CI [{s.ci_low:.3f}, {s.ci_high:.3f}]")
print(f"  subset logic: {coupling.verify_subset_logic(outs)}")
