"""Offspring laws and the reaction term they induce.

With s = 1 - u the reaction is F(u) = s - sum_k p_k s^k, and the ratio
c(u) = F(u)/u expands as sum_k p_k (s + s^2 + ... + s^(k-1)), which is
evaluated directly so c(0) = 1 needs no limit.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DomainError


@dataclass(frozen=True)
class OffspringDistribution:
    probs: tuple  # ((k, p_k), ...) sorted by k

    def __post_init__(self):
        items = sorted((int(k), float(p)) for k, p in dict(self.probs).items())
        object.__setattr__(self, "probs", tuple(items))
        if not items:
            raise ConfigError("empty offspring law")
        ks = np.array([k for k, _ in items])
        ps = np.array([p for _, p in items])
        if np.any(ks < 1):
            raise ConfigError("offspring counts must be >= 1")
        if np.any(ps < 0):
            raise ConfigError("negative offspring probability")
        if abs(ps.sum() - 1.0) > 1e-12:
            raise ConfigError(f"offspring probabilities sum to {ps.sum()!r}, not 1")
        if abs((ks * ps).sum() - 2.0) > 1e-10:
            raise ConfigError(f"offspring mean is {(ks * ps).sum()!r}, must be 2")

    @classmethod
    def binary(cls):
        return cls(((2, 1.0),))

    @property
    def ks(self):
        return np.array([k for k, _ in self.probs])

    @property
    def ps(self):
        return np.array([p for _, p in self.probs])

    @property
    def mean(self):
        return float((self.ks * self.ps).sum())

    @property
    def second_moment(self):
        return float((self.ks**2 * self.ps).sum())

    @property
    def c_coefficients(self):
        """a_j with c(u) = sum_{j>=1} a_j (1-u)^j; a_0 is 0."""
        kmax = int(self.ks.max())
        a = np.zeros(max(kmax, 2))
        for k, p in self.probs:
            a[1:k] += p
        return a

    def to_text(self):
        return ",".join(f"{k}:{p!r}" for k, p in self.probs)

    @classmethod
    def from_text(cls, text):
        text = text.strip()
        if text in ("", "binary"):
            return cls.binary()
        pairs = []
        try:
            for item in text.split(","):
                k, p = item.split(":")
                pairs.append((int(k), float(p)))
        except ValueError:
            raise ConfigError(f"offspring law must look like '1:0.2, 2:0.8' or 'binary', got {text!r}") from None
        return cls(tuple(pairs))


@dataclass(frozen=True)
class Nonlinearity:
    dist: OffspringDistribution

    def F(self, u):
        return eval_F(self, u)

    def c(self, w):
        return eval_c(self, w)


def _check_unit(u):
    u = np.asarray(u, dtype=float)
    if np.any(np.isnan(u)) or np.any(u < 0) or np.any(u > 1):
        raise DomainError("argument must lie in [0, 1]")
    return u


def eval_c(nl, w):
    w = _check_unit(w)
    s = 1.0 - w
    out = np.zeros_like(s)
    for a in nl.dist.c_coefficients[::-1]:
        out = out * s + a
    return out if out.ndim else float(out)


def eval_F(nl, u):
    u = _check_unit(u)
    out = u * eval_c(nl, u)
    return out if np.ndim(out) else float(out)


def sample_offspring(dist, rng, size=None):
    return rng.choice(dist.ks, size=size, p=dist.ps)
