import math
import warnings

import numpy as np
import pytest

from frontlab.environment import ConstantPotential, poisson_potential
from frontlab.errors import DomainError, SubcriticalVelocityError, VarianceWarning
from frontlab.mgf import (
    ShiftedPotential,
    build_bank,
    check_vel,
    compute_S,
    estimate_L,
    estimate_L_prime,
    estimate_vc,
    solve_eta_bar,
    solve_eta_x,
    unit_lengths,
)

FLAT = ConstantPotential(0.0)


@pytest.fixture(scope="module")
def medium():
    return poisson_potential(1.0, 3.0, (-10, 400), 7)


# -- zero potential closed forms -------------------------------------------

@pytest.mark.parametrize("eta, expected", [(-2.0, -2.0), (-0.5, -1.0)])
@pytest.mark.parametrize("variant", ["ensemble", "averaged", "unit"])
def test_L_closed_form(eta, expected, variant):
    est = estimate_L(FLAT, eta, variant=variant, n_paths=1000)
    assert est.value == pytest.approx(expected, rel=0.02)
    assert est.standard_error >= 0


def test_L_direct_whole_paths_with_mismatched_drift():
    est = estimate_L(FLAT, -2.0, variant="averaged", method="direct", n_paths=4000, drift=1.5)
    assert est.value == pytest.approx(-2.0, rel=0.02)


def test_L_prime_closed_form():
    est = estimate_L_prime(FLAT, -2.0, n_paths=2000)
    assert est.method_a == pytest.approx(0.5, rel=0.03)
    assert est.method_b == pytest.approx(0.5, rel=0.03)


@pytest.mark.parametrize("v, expected, tol", [(2.0, -2.0, 0.05), (1.0, -0.5, 0.02)])
def test_eta_bar_closed_form(v, expected, tol):
    assert abs(solve_eta_bar(FLAT, v).value - expected) <= tol


@pytest.mark.parametrize("x", [10.0, 25.0])
def test_eta_x_closed_form(x):
    assert abs(solve_eta_x(FLAT, x, 2.0).value + 2.0) <= 0.05


def test_S_closed_form_and_linear_in_x():
    s10 = compute_S(FLAT, 10.0, 2.0, -2.0)
    assert abs(s10.value - 10.0) <= 0.4
    s20 = compute_S(FLAT, 20.0, 2.0, -2.0)
    assert s20.value == pytest.approx(2 * s10.value, rel=1e-12)


def test_vc_zero_potential():
    vc = estimate_vc(FLAT, n_paths=1000)
    assert abs(vc.v_c) <= 0.05
    assert vc.v_c >= 0


# -- random medium ---------------------------------------------------------

def test_shifted_potential_range(medium):
    z = ShiftedPotential(medium)
    vals = z(np.linspace(0, 300, 20001))
    assert vals.min() >= medium.ei - medium.es and vals.max() <= 0


def test_L_monotone_in_eta(medium):
    a = estimate_L(medium, -1.0, realizations=4, n_paths=1000)
    b = estimate_L(medium, -2.0, realizations=4, n_paths=1000)
    assert a.value > b.value
    assert a.value < 0 and b.value < 0


@pytest.mark.parametrize("eta", [-3.0, -1.0, -0.3])
def test_L_sandwiched_by_constant_media(medium, eta):
    # zeta in [ei - es, 0] makes the integrand monotone between the two constant cases
    bank = build_bank(medium, 20.0, eta, n_paths=1000)
    val = bank.averaged(eta)[0][0]
    spread = medium.es - medium.ei
    assert -math.sqrt(2 * (abs(eta) + spread)) <= val <= -math.sqrt(2 * abs(eta))
    assert bank.slope(eta)[0][0] > 0
    assert bank.curvature(eta)[0] > 0


def test_L_convex_along_eta_grid(medium):
    bank = build_bank(medium, 20.0, -1.0, n_paths=1000)
    etas = np.linspace(-1.3, -0.7, 7)
    L = np.array([bank.averaged(e)[0][0] for e in etas])
    assert np.all(np.diff(L, 2) > 0)


def test_L_prime_methods_agree(medium):
    est = estimate_L_prime(medium, -1.0, realizations=4, n_paths=1000)
    assert abs(est.discrepancy) <= 3 * est.joint_se
    assert est.method_a > 0 and est.method_b > 0


def test_unit_decomposition_matches_whole_paths(medium):
    whole = estimate_L(medium, -1.0, variant="averaged", method="direct", n_paths=4000)
    units = estimate_L(medium, -1.0, variant="averaged", n_paths=2000)
    assert abs(whole.value - units.value) <= 3 * math.hypot(whole.standard_error, units.standard_error)


def test_variance_warning_on_tiny_samples(medium):
    with pytest.warns(VarianceWarning):
        est = estimate_L(medium, -1.0, variant="averaged", n_paths=50)
    assert est.warning is not None


def test_argument_checks(medium):
    with pytest.raises(DomainError):
        estimate_L(medium, -1e-4)
    with pytest.raises(DomainError):
        estimate_L(medium, -1.0, x_max=10.0)
    with pytest.raises(DomainError):
        solve_eta_x(medium, 5.0, 2.0)
    with pytest.raises(SubcriticalVelocityError):
        solve_eta_bar(medium, 1.0, vc=1.0)


def test_unit_lengths_tile_the_interval():
    assert list(unit_lengths(3.0)) == [1.0, 1.0, 1.0]
    assert unit_lengths(2.5).sum() == pytest.approx(2.5)


@pytest.mark.slow
def test_eta_bar_decreasing_in_v(medium):
    vals = [solve_eta_bar(medium, v, realizations=4, n_paths=1000).value for v in (1.0, 1.5, 2.0, 3.0)]
    assert all(v < 0 for v in vals)
    assert np.all(np.diff(vals) < 0)


@pytest.mark.slow
def test_S_stationary_at_eta_x(medium):
    x, v = 20.0, 2.0
    eta = solve_eta_x(medium, x, v).value
    bank = build_bank(medium, x, eta, n_paths=2000)
    d, se = bank.finite_difference(eta, 0.01 * abs(eta))
    s_prime = x * (1 / v - d[0])
    assert abs(s_prime) <= 3 * x * se[0]
    lo = compute_S(medium, x, v, eta - 0.05, bank=bank).value
    mid = compute_S(medium, x, v, eta, bank=bank).value
    hi = compute_S(medium, x, v, eta + 0.05, bank=bank).value
    assert mid > lo and mid > hi  # S is concave in eta with its maximum at eta_x


@pytest.mark.slow
def test_eta_x_concentrates_on_eta_bar():
    v = 2.0
    pots = [poisson_potential(1.0, 3.0, (-10, 400), s) for s in range(3)]
    eta_bar = solve_eta_bar(pots[0], v, realizations=10, n_paths=1000).value
    gaps = []
    for x in (10.0, 40.0, 160.0):
        gaps.append(np.mean([abs(solve_eta_x(p, x, v, n_paths=1000).value - eta_bar) for p in pots]))
    assert gaps[0] > gaps[1] > gaps[2]


@pytest.mark.slow
def test_eta_x_lipschitz_in_x(medium):
    x, v = 40.0, 2.0
    base = solve_eta_x(medium, x, v, n_paths=1000).value
    hs = np.array([5.0, 10.0, 20.0])
    diffs = np.array([abs(solve_eta_x(medium, x + h, v, n_paths=1000).value - base) for h in hs])
    C = float(np.max(diffs * x / hs))
    assert math.isfinite(C)
    assert np.all(diffs <= C * hs / x + 1e-12)


@pytest.mark.slow
def test_vc_extrapolation_stable_under_grid_refinement(medium):
    coarse = estimate_vc(medium, realizations=4, n_paths=1000)
    fine = estimate_vc(medium, etas=(-0.4, -0.2, -0.1, -0.05, -0.025, -0.0125), realizations=4, n_paths=1000)
    assert coarse.v_c >= 0 and math.isfinite(coarse.v_c)
    assert coarse.residual >= 0
    assert abs(coarse.v_c - fine.v_c) <= 3 * math.hypot(coarse.standard_error, fine.standard_error)


def test_vel_on_constant_potential():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        (rep,) = check_vel(ConstantPotential(1.0), scalings=(1.0,), v_factors=(1.0,),
                           vc_kwargs={"n_paths": 500})
    assert abs(rep.v_c) <= 0.05
    assert abs(rep.v_0 - math.sqrt(2)) <= 0.05
    assert rep.vel_ok
    (v, eta_bar), = rep.eta_bar
    assert eta_bar == pytest.approx(-v * v / 2, abs=0.05)
