import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from frontlab.environment import (
    BumpProfile,
    ConstantPotential,
    LatticePotential,
    PoissonBumpPotential,
    discretize,
    engineer_stretch_potential,
    evaluate_potential,
    find_stretches,
    poisson_potential,
    potential_from_section,
    sample_poisson_points,
)
from frontlab.errors import ConfigError, DomainError


def single_point(distance, ei=1.0, es=3.0):
    return PoissonBumpPotential(ei, es, np.array([0.0]), (-10.0, 10.0))


# -- profile ---------------------------------------------------------------

def test_default_profile_shape():
    prof = BumpProfile()
    d = np.linspace(0, 5, 5001)
    expected = np.clip(3 - 2 * d, 0, 1)
    assert np.allclose(prof(d), expected, atol=1e-15)


@st.composite
def profiles(draw):
    inner = sorted(draw(st.lists(st.floats(1.01, 1.99), max_size=4, unique=True)))
    end = draw(st.floats(1.01, 2.0).filter(lambda e: not inner or e > inner[-1] + 1e-6))
    mids = sorted(draw(st.lists(st.floats(0.0, 1.0), min_size=len(inner), max_size=len(inner))), reverse=True)
    return ((1.0, 1.0), *zip(inner, mids), (end, 0.0))


@given(profiles())
def test_profile_invariants(bp):
    prof = BumpProfile(bp)
    d = np.linspace(0, 3, 3001)
    v = prof(d)
    assert np.all(v[d <= 1] == 1.0)
    assert np.all(v[d >= 2] == 0.0)
    assert np.all(np.diff(v) <= 0)
    assert v.min() >= 0 and v.max() <= 1


@pytest.mark.parametrize("bp", [((0.5, 1.0), (1.5, 0.0)), ((1.0, 1.0), (2.5, 0.0)), ((1.0, 1.0), (1.5, 0.2))])
def test_invalid_profiles_rejected(bp):
    with pytest.raises(ConfigError):
        BumpProfile(bp)


# -- sampling --------------------------------------------------------------

def test_zero_intensity_gives_no_points():
    assert sample_poisson_points(0.0, (0, 1000), 3).size == 0


def test_point_count_concentration():
    inside = 0
    for seed in range(200):
        n = sample_poisson_points(1.0, (0, 1000), seed).size
        inside += abs(n - 1004) <= 3 * math.sqrt(1004)
    assert inside / 200 >= 0.99


def test_sampling_is_deterministic_and_sorted():
    a = sample_poisson_points(1.0, (-50, 50), 77)
    b = sample_poisson_points(1.0, (-50, 50), 77)
    assert a.tobytes() == b.tobytes()
    assert np.all(np.diff(a) >= 0)
    assert a.min() >= -52 and a.max() <= 52


def test_invalid_window_rejected():
    with pytest.raises(ConfigError):
        sample_poisson_points(1.0, (3, 3), 0)


# -- evaluation ------------------------------------------------------------

def test_far_point_gives_lower_bound():
    assert evaluate_potential(single_point(0), 2.5) == 1.0


def test_near_point_gives_upper_bound():
    assert evaluate_potential(single_point(0), 0.7) == 3.0


def test_profile_midpoint_value():
    assert evaluate_potential(single_point(0), 1.25) == pytest.approx(2.0, abs=1e-15)


def test_outside_window_is_domain_error():
    with pytest.raises(DomainError):
        evaluate_potential(single_point(0), 11.0)


def brute_force(pot, x):
    """Direct sup over all points, no neighbour search."""
    d = np.abs(np.asarray(x)[:, None] - pot.points[None, :])
    return pot.ei + (pot.es - pot.ei) * np.max(np.clip(3 - 2 * d, 0, 1), axis=1, initial=0.0)


def test_matches_brute_force_sup():
    pot = poisson_potential(1.0, 3.0, (-100, 100), seed=5)
    x = np.random.default_rng(0).uniform(-100, 100, 5000)
    assert np.allclose(pot(x), brute_force(pot, x), atol=1e-14)


def test_bounds_on_many_points():
    pot = poisson_potential(1.0, 3.0, (-500, 500), seed=9)
    x = np.random.default_rng(1).uniform(-500, 500, 100_000)
    v = pot(x)
    assert v.min() >= 1.0 and v.max() <= 3.0


def test_saturation_rules():
    pot = poisson_potential(1.0, 3.0, (-200, 200), seed=2)
    x = np.random.default_rng(2).uniform(-200, 200, 20_000)
    dist = np.min(np.abs(x[:, None] - pot.points[None, :]), axis=1)
    v = pot(x)
    assert np.all(v[dist <= 1] == 3.0)
    assert np.all(v[dist > 2] == 1.0)


def test_lipschitz_on_random_pairs():
    pot = poisson_potential(1.0, 3.0, (-200, 200), seed=4)
    g = np.random.default_rng(3)
    x = g.uniform(-199, 199, 10_000)
    y = x + g.uniform(-1, 1, 10_000)
    assert pot.lipschitz == pytest.approx(4.0)
    assert np.all(np.abs(pot(x) - pot(y)) <= pot.lipschitz * np.abs(x - y) + 1e-12)


def _values_across_seeds(xs, n_seeds=10_000):
    out = np.empty((n_seeds, len(xs)))
    for s in range(n_seeds):
        out[s] = poisson_potential(1.0, 3.0, (-3, 21), seed=s)(np.array(xs))
    return out


@pytest.fixture(scope="module")
def ensemble():
    return _values_across_seeds([0.0, 0.5, 17.3, 5.0, 8.0, 12.0])


@pytest.mark.parametrize("col", [1, 2])
def test_stationarity_ks(ensemble, col):
    assert stats.ks_2samp(ensemble[:, 0], ensemble[:, col]).pvalue > 0.01


@pytest.mark.parametrize("col", [3, 4, 5])
def test_decorrelation(ensemble, col):
    assert abs(np.corrcoef(ensemble[:, 0], ensemble[:, col])[0, 1]) <= 0.05


# -- discretization --------------------------------------------------------

def test_discretize_constant():
    lat = discretize(ConstantPotential(2.5), 0.1, (0, 3))
    assert np.all(lat.values == 2.5)
    assert lat.values.size == 31


def test_discretize_nesting():
    pot = poisson_potential(1.0, 3.0, (-20, 20), seed=1)
    coarse = discretize(pot, 0.1)
    fine = discretize(pot, 0.05)
    assert np.array_equal(fine.values[::2], coarse.values)


def test_discretize_engineered_pointwise():
    pot = engineer_stretch_potential(1.0, 5.0, 6.0, 0.0)
    lat = discretize(pot, 0.01)
    assert np.array_equal(lat.values, pot(lat.x))
    assert lat.values.size == int(math.floor((lat.window[1] - lat.window[0]) / 0.01 + 1e-9)) + 1


@pytest.mark.parametrize("dx", [0.0, -0.1])
def test_discretize_rejects_bad_step(dx):
    with pytest.raises(ConfigError):
        discretize(ConstantPotential(1.0), dx, (0, 1))


def test_lattice_needs_three_values():
    with pytest.raises(ConfigError):
        LatticePotential(0.0, 0.1, np.array([1.0, 2.0]))


# -- engineered stretches --------------------------------------------------

@pytest.mark.parametrize("lam", [4.5, 6.0, 15.0])
def test_engineered_low_and_high_intervals(lam):
    c = 40.0
    pot = engineer_stretch_potential(1.0, 5.0, lam, c)
    assert pot(c - lam) == 1.0
    assert pot(c + lam) == 5.0
    lo = np.linspace(c - 2 * lam, c, 2001)
    hi = np.linspace(c + 2, c + 2 * lam - 2, 2001)
    joint = np.linspace(c - 2 * lam, c + 2 * lam - 2, 20001)
    assert np.all(pot(lo) == 1.0)
    assert np.all(pot(hi) == 5.0)
    assert np.all(np.diff(pot(joint)) >= 0)


def test_engineered_rejects_short_stretch():
    with pytest.raises(ConfigError):
        engineer_stretch_potential(1.0, 5.0, 2.0, 0.0)


def scan_oracle(pot, n, phi, dx=0.025):
    """Leftmost grid point in [n, 2n] meeting the stretch conditions, by direct evaluation."""
    for k in range(int(math.ceil(n / dx)), int(math.floor(2 * n / dx)) + 1):
        x = k * dx
        low = pot(np.arange(x - 2 * phi, x + 1e-9, dx))
        if np.any(low != pot.ei):
            continue
        high = pot(np.arange(x + 2, x + 2 * phi - 2 + 1e-9, dx))
        if high.size and np.any(high != pot.es):
            continue
        if np.any(np.diff(pot(np.arange(x - 2 * phi, x + 2 * phi - 2 + 1e-9, dx))) < 0):
            continue
        return x
    return None


def test_find_stretches_homogeneous_upper_value():
    assert find_stretches(ConstantPotential(5.0, (0, 200)), 1.0, [20, 30]) == []
    saturated = PoissonBumpPotential(1.0, 5.0, np.arange(-5.0, 206.0, 1.0), (0, 200))
    assert np.all(saturated(np.linspace(0, 200, 4001)) == 5.0)
    assert find_stretches(saturated, 1.0, [20, 30]) == []


def test_find_stretches_engineered_center():
    n = 60
    c0 = 4.0
    phi = c0 * math.log(n)
    center = 80.0
    window = (n - 2 * phi - 5, 2 * n + 4 * phi + 5)
    pot = engineer_stretch_potential(1.0, 3.0, phi, center, window)
    reports = find_stretches(pot, c0, [n])
    assert len(reports) == 1
    r = reports[0]
    assert r.x_n == pytest.approx(center, abs=1e-9)
    assert r.x_n == pytest.approx(scan_oracle(pot, n, phi), abs=1e-9)
    assert r.monotone_ok
    assert r.low_interval == pytest.approx((center - 2 * phi, center))


def test_find_stretches_inserted_gap_with_filled_surroundings():
    # saturated everywhere except one gap; the gap is followed by a saturated cluster
    n = 50
    c0 = 3.0
    phi = c0 * math.log(n)
    gap_right = 70.0
    window = (n - 2 * phi - 5, 2 * n + 4 * phi + 5)
    left = np.arange(window[0] - 2, gap_right - 2 * phi - 1.5 + 1e-9, 1.0)
    right = np.arange(gap_right + 3, window[1] + 2, 1.0)
    pot = PoissonBumpPotential(1.0, 3.0, np.concatenate([left, right]), window)
    reports = find_stretches(pot, c0, [n])
    assert len(reports) == 1
    assert reports[0].x_n == pytest.approx(scan_oracle(pot, n, phi), abs=1e-9)
    assert reports[0].x_n == pytest.approx(gap_right, abs=0.03)


def test_find_stretches_matches_scan_on_random_fields():
    c0 = 0.3
    checked = 0
    for seed in range(8):
        pot = poisson_potential(1.0, 3.0, (0, 100), seed)
        found = {rep.n: rep.x_n for rep in find_stretches(pot, c0, [20, 30, 40])}
        for n in (20, 30, 40):
            expected = scan_oracle(pot, n, c0 * math.log(n))
            if expected is None:
                assert n not in found
            else:
                assert found[n] == pytest.approx(expected, abs=1e-9)
                checked += 1
    assert checked >= 1


def test_find_stretches_window_too_small():
    pot = poisson_potential(1.0, 3.0, (0, 100), 0)
    with pytest.raises(DomainError):
        find_stretches(pot, 0.2, [200, 210])


STRETCH_NS = list(range(200, 401, 20))


def gap_oracle(n, c0):
    """Probability of a qualifying stretch in [n, 2n] from Poisson gap statistics.

    With c0 ln n < 2 the high interval is empty, so a stretch needs a point-free
    gap of length 2 c0 ln n + 3 whose right end falls in a window of length n.
    Gaps are separated by unit-rate points, so the count of such gaps is Poisson.
    """
    return 1 - math.exp(-n * math.exp(-(2 * c0 * math.log(n) + 3)))


@pytest.fixture(scope="module")
def stretch_frequencies():
    c0 = 0.2
    hits = np.zeros(len(STRETCH_NS))
    seeds = range(50)
    for s in seeds:
        pot = poisson_potential(1.0, 3.0, (150, 810), s)
        found = {r.n for r in find_stretches(pot, c0, STRETCH_NS)}
        hits += [n in found for n in STRETCH_NS]
    return hits / len(seeds)


def test_stretch_frequency_matches_gap_oracle(stretch_frequencies):
    oracle = np.mean([gap_oracle(n, 0.2) for n in STRETCH_NS])
    freq = stretch_frequencies.mean()
    se = math.sqrt(oracle * (1 - oracle) / 50)
    assert abs(freq - oracle) <= 3 * se


@pytest.mark.xfail(strict=True, reason="finite-n success rate is about 0.8; see decisions ledger")
def test_stretch_found_for_most_n(stretch_frequencies):
    freq = stretch_frequencies.mean()
    lower = freq - 1.96 * math.sqrt(freq * (1 - freq) / 50)
    assert lower >= 0.9


# -- config sections -------------------------------------------------------

@pytest.mark.parametrize("pot", [
    ConstantPotential(2.0),
    poisson_potential(1.0, 3.0, (-10, 10), 4),
    engineer_stretch_potential(1.0, 5.0, 15.0, 40.0),
])
def test_section_round_trip(pot):
    back = potential_from_section(pot.to_section())
    x = np.linspace(-5, 5, 101) + (40 if getattr(pot, "engineered", None) else 0)
    assert np.array_equal(back(x), pot(x))
    assert back.to_section() == pot.to_section()


def test_unknown_kind_rejected():
    with pytest.raises(ConfigError):
        potential_from_section({"kind": "gaussian", "ei": "1", "es": "2", "window": "0,1"})


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_realizations_are_reproducible(seed):
    pot = poisson_potential(1.0, 3.0, (-10, 10), 0)
    a = pot.realizations(3, seed)
    b = pot.realizations(3, seed)
    assert all(np.array_equal(p.points, q.points) for p, q in zip(a, b))
