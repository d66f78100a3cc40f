import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from frontlab.branching_law import (
    Nonlinearity,
    OffspringDistribution,
    eval_c,
    eval_F,
    sample_offspring,
)
from frontlab.errors import ConfigError, DomainError

BINARY = Nonlinearity(OffspringDistribution.binary())
ONE_THREE = Nonlinearity(OffspringDistribution(((1, 0.5), (3, 0.5))))


@st.composite
def laws(draw):
    """Mean-2 laws on {1, 2, k}: weight p2 on 2, the rest split so the mean stays 2."""
    high = draw(st.integers(3, 8))
    p2 = draw(st.floats(0.0, 1.0))
    rest = 1.0 - p2
    p_high = rest / (high - 1)
    pairs = {k: p for k, p in ((2, p2), (1, rest - p_high), (high, p_high)) if p > 0}
    return Nonlinearity(OffspringDistribution(tuple(pairs.items())))


def direct_F(dist, u):
    return (1 - u) - sum(p * (1 - u) ** k for k, p in dist.probs)


def test_binary_F():
    assert eval_F(BINARY, 0.5) == 0.25
    u = np.linspace(0, 1, 101)
    assert np.allclose(eval_F(BINARY, u), u - u**2, atol=1e-15)


def test_two_point_law_F():
    assert eval_F(ONE_THREE, 0.5) == pytest.approx(0.1875, abs=1e-15)


def test_binary_c():
    assert eval_c(BINARY, 0.3) == pytest.approx(0.7, abs=1e-15)


@settings(max_examples=50, deadline=None)
@given(laws())
def test_endpoints_and_c_limits(nl):
    assert eval_F(nl, 0.0) == 0.0
    assert abs(eval_F(nl, 1.0)) <= 1e-15
    assert eval_c(nl, 0.0) == pytest.approx(1.0, abs=1e-12)
    assert abs(eval_c(nl, 1.0)) <= 1e-15


@settings(max_examples=50, deadline=None)
@given(laws())
def test_F_matches_generating_function(nl):
    u = np.linspace(0, 1, 257)
    assert np.allclose(eval_F(nl, u), direct_F(nl.dist, u), atol=1e-13)
    w = u[1:]
    assert np.allclose(eval_c(nl, w), direct_F(nl.dist, w) / w, atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(laws())
def test_F_nonnegative_and_c_decreasing(nl):
    u = np.linspace(0, 1, 10_001)
    F = eval_F(nl, u)
    assert F.min() >= -1e-15 and F.max() <= 1
    c = eval_c(nl, u)
    assert np.all(np.diff(c) < 0)
    slope = np.max(np.abs(np.diff(c) / np.diff(u)))
    assert np.isfinite(slope)
    # H is (m2 - 2) / 2 for mean-2 laws: the derivative of c at 0
    assert slope <= (nl.dist.second_moment - nl.dist.mean) / 2 + 1e-6


@settings(max_examples=30, deadline=None)
@given(laws())
def test_derivative_at_zero_is_one(nl):
    h = 1e-3
    d1 = eval_F(nl, h) / h
    d2 = eval_F(nl, h / 2) / (h / 2)
    assert abs(2 * d2 - d1 - 1.0) < 1e-5
    assert abs(2 * d2 - d1 - 1.0) < abs(d1 - 1.0)


@pytest.mark.parametrize("u", [-0.1, 1.1, float("nan")])
def test_domain_errors(u):
    with pytest.raises(DomainError):
        eval_F(BINARY, u)
    with pytest.raises(DomainError):
        eval_c(BINARY, u)


@pytest.mark.parametrize("pairs", [
    ((2, 0.9),),
    ((1, 0.5), (2, 0.5)),
    ((0, 0.5), (4, 0.5)),
    ((2, 1.2), (3, -0.2)),
])
def test_invalid_laws_rejected(pairs):
    with pytest.raises(ConfigError):
        OffspringDistribution(pairs)


def test_text_round_trip():
    d = OffspringDistribution(((1, 0.5), (3, 0.5)))
    assert OffspringDistribution.from_text(d.to_text()) == d
    assert OffspringDistribution.from_text("binary") == OffspringDistribution.binary()


def test_binary_sampling_always_two():
    draws = sample_offspring(OffspringDistribution.binary(), np.random.default_rng(0), 1000)
    assert np.all(draws == 2)


def test_sampling_moments():
    draws = sample_offspring(ONE_THREE.dist, np.random.default_rng(1), 1_000_000)
    assert abs(draws.mean() - 2) <= 0.01
    assert abs(draws.var() - 1) <= 0.01


def test_sampling_deterministic():
    a = sample_offspring(ONE_THREE.dist, np.random.default_rng(7), 100)
    b = sample_offspring(ONE_THREE.dist, np.random.default_rng(7), 100)
    assert np.array_equal(a, b)
