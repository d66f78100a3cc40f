"""Random potentials: Poisson bump fields, engineered stretches, lattice samples.

A potential is any object with attributes ``ei`` (lower bound), ``es`` (upper
bound), ``window`` and a vectorised ``__call__``. The classes below also expose
``kernel()``, a plain-array description consumed by the compiled path and
particle simulators, and ``to_section()`` for the plain-text config format.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .errors import ConfigError, DomainError
from .rng import derive_seed, stream

POINTS_STREAM = 101
ENSEMBLE_STREAM = 102


@dataclass(frozen=True)
class BumpProfile:
    """Piecewise-linear bump shape, constant beyond its first and last breakpoints."""

    breakpoints: tuple = ((1.0, 1.0), (1.5, 0.0))

    def __post_init__(self):
        bp = tuple((float(a), float(v)) for a, v in self.breakpoints)
        object.__setattr__(self, "breakpoints", bp)
        if len(bp) < 1:
            raise ConfigError("bump profile needs at least one breakpoint")
        xs = np.array([a for a, _ in bp])
        vs = np.array([v for _, v in bp])
        if np.any(xs < 0) or np.any(np.diff(xs) <= 0):
            raise ConfigError("profile abscissae must be non-negative and strictly increasing")
        if np.any(vs < 0) or np.any(vs > 1) or np.any(np.diff(vs) > 0):
            raise ConfigError("profile values must lie in [0,1] and be non-increasing")
        if vs[0] != 1.0 or np.interp(1.0, xs, vs) != 1.0:
            raise ConfigError("profile must equal 1 on [0,1]")
        if vs[-1] != 0.0 or xs[-1] > 2.0:
            raise ConfigError("profile must vanish on [2, inf)")

    @property
    def xs(self):
        return np.array([a for a, _ in self.breakpoints])

    @property
    def values(self):
        return np.array([v for _, v in self.breakpoints])

    @property
    def support(self):
        return float(self.breakpoints[-1][0])

    @property
    def max_slope(self):
        xs, vs = self.xs, self.values
        if len(xs) < 2:
            return 0.0
        return float(np.max(np.abs(np.diff(vs) / np.diff(xs))))

    def __call__(self, d):
        return np.interp(np.abs(np.asarray(d, dtype=float)), self.xs, self.values)

    def to_text(self):
        return ",".join(f"{a!r}:{v!r}" for a, v in self.breakpoints)

    @classmethod
    def from_text(cls, text):
        pairs = []
        for item in text.split(","):
            a, v = item.split(":")
            pairs.append((float(a), float(v)))
        return cls(tuple(pairs))


def _check_window(window):
    a, b = float(window[0]), float(window[1])
    if not a < b:
        raise ConfigError(f"invalid window [{a}, {b}]")
    return a, b


def _require_inside(x, window):
    x = np.asarray(x, dtype=float)
    a, b = window
    if x.size and (np.nanmin(x) < a or np.nanmax(x) > b or np.isnan(x).any()):
        raise DomainError(f"evaluation outside the potential window [{a}, {b}]")
    return x


@dataclass(frozen=True)
class ConstantPotential:
    value: float
    window: tuple = (-math.inf, math.inf)

    @property
    def ei(self):
        return float(self.value)

    @property
    def es(self):
        return float(self.value)

    def __call__(self, x):
        x = _require_inside(x, self.window)
        return np.full(x.shape, float(self.value))

    def kernel(self):
        bx, by = _kernels.empty_breakpoints()
        return (_kernels.CONSTANT, np.array([float(self.value)]), np.zeros(1), bx, by)

    def scaled(self, factor):
        return ConstantPotential(self.value * factor, self.window)

    def realizations(self, count, seed):
        return [self]

    def to_section(self):
        sec = {"kind": "constant", "value": repr(float(self.value))}
        if math.isfinite(self.window[0]) or math.isfinite(self.window[1]):
            sec["window"] = f"{self.window[0]!r},{self.window[1]!r}"
        return sec


@dataclass(frozen=True, eq=False)
class PoissonBumpPotential:
    """ei + (es-ei) * max_i profile(|x - point_i|) on a bounded window."""

    ei: float
    es: float
    points: np.ndarray
    window: tuple
    profile: BumpProfile = field(default_factory=BumpProfile)
    intensity: float = 1.0
    seed: int | None = None
    engineered: tuple | None = None  # (center, half_length) for explicit placements

    def __post_init__(self):
        if not (self.ei > 0 and self.es >= self.ei):
            raise ConfigError("need 0 < ei <= es")
        object.__setattr__(self, "window", _check_window(self.window))
        pts = np.sort(np.asarray(self.points, dtype=float))
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    def __call__(self, x):
        x = _require_inside(x, self.window)
        flat = np.atleast_1d(x).ravel()
        pts = self.points
        best = np.zeros(flat.shape)
        if pts.size:
            reach = self.profile.support
            lo = np.searchsorted(pts, flat - reach, side="left")
            hi = np.searchsorted(pts, flat + reach, side="right")
            for k in range(int(np.max(hi - lo, initial=0))):
                j = lo + k
                live = j < hi
                d = np.abs(flat[live] - pts[j[live]])
                best[live] = np.maximum(best[live], self.profile(d))
        out = self.ei + (self.es - self.ei) * best
        return out.reshape(np.shape(x)) if np.ndim(x) else float(out[0])

    @property
    def lipschitz(self):
        return (self.es - self.ei) * self.profile.max_slope

    def kernel(self):
        fp = np.array([self.ei, self.es, self.profile.support])
        return (_kernels.BUMP, fp, np.ascontiguousarray(self.points), self.profile.xs, self.profile.values)

    def scaled(self, factor):
        return PoissonBumpPotential(self.ei * factor, self.es * factor, self.points, self.window,
                                    self.profile, self.intensity, self.seed, self.engineered)

    def realizations(self, count, seed):
        """Independent copies of the same random field; fixed placements return themselves."""
        if self.seed is None or self.engineered is not None:
            return [self]
        out = []
        for i in range(count):
            s = derive_seed(seed, ENSEMBLE_STREAM, i)
            pts = sample_poisson_points(self.intensity, self.window, s)
            out.append(PoissonBumpPotential(self.ei, self.es, pts, self.window, self.profile,
                                            self.intensity, s))
        return out

    def to_section(self):
        sec = {
            "ei": repr(float(self.ei)),
            "es": repr(float(self.es)),
            "window": f"{self.window[0]!r},{self.window[1]!r}",
            "profile": self.profile.to_text(),
        }
        if self.engineered is not None:
            sec["kind"] = "engineered"
            sec["center"] = repr(float(self.engineered[0]))
            sec["half_length"] = repr(float(self.engineered[1]))
        else:
            sec["kind"] = "poisson"
            sec["intensity"] = repr(float(self.intensity))
            sec["seed"] = str(self.seed)
        return dict(sorted(sec.items()))


@dataclass(frozen=True, eq=False)
class LatticePotential:
    origin: float
    dx: float
    values: np.ndarray

    def __post_init__(self):
        if not self.dx > 0:
            raise ConfigError("lattice spacing must be positive")
        vals = np.array(self.values, dtype=float)
        if vals.ndim != 1 or vals.size < 3:
            raise ConfigError("lattice potential needs at least 3 values")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    @property
    def ei(self):
        return float(self.values.min())

    @property
    def es(self):
        return float(self.values.max())

    @property
    def x(self):
        return self.origin + self.dx * np.arange(self.values.size)

    @property
    def window(self):
        return (self.origin, self.origin + self.dx * (self.values.size - 1))

    def __call__(self, x):
        x = _require_inside(x, self.window)
        return np.interp(x, self.x, self.values)

    def kernel(self):
        bx, by = _kernels.empty_breakpoints()
        return (_kernels.LATTICE, np.array([self.origin, self.dx]),
                np.ascontiguousarray(self.values), bx, by)

    def scaled(self, factor):
        return LatticePotential(self.origin, self.dx, self.values * factor)

    def realizations(self, count, seed):
        return [self]

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["x", "xi"])
            for xv, v in zip(self.x, self.values):
                w.writerow([f"{xv:.17g}", f"{v:.17g}"])


@dataclass(frozen=True)
class StretchReport:
    n: int
    x_n: float
    c0: float
    low_interval: tuple
    high_interval: tuple
    monotone_ok: bool


def sample_poisson_points(intensity, window, seed):
    """Sorted Poisson points on the window widened by 2 on both sides."""
    a, b = _check_window(window)
    if intensity < 0:
        raise ConfigError("intensity must be non-negative")
    rng = stream(seed, POINTS_STREAM)
    lo, hi = a - 2.0, b + 2.0
    count = rng.poisson(intensity * (hi - lo)) if intensity > 0 else 0
    return np.sort(rng.uniform(lo, hi, count))


def poisson_potential(ei, es, window, seed, intensity=1.0, profile=None):
    profile = profile or BumpProfile()
    pts = sample_poisson_points(intensity, window, seed)
    return PoissonBumpPotential(ei, es, pts, window, profile, intensity, int(seed))


def evaluate_potential(pot, x):
    return pot(x)


def discretize(pot, dx, window=None):
    if not dx > 0:
        raise ConfigError("dx must be positive")
    a, b = _check_window(window if window is not None else pot.window)
    if not (math.isfinite(a) and math.isfinite(b)):
        raise ConfigError("discretization needs a finite window")
    n = int(math.floor((b - a) / dx + 1e-9)) + 1
    return LatticePotential(a, dx, pot(a + dx * np.arange(n)))


def engineer_stretch_potential(ei, es, half_length, center, window=None, profile=None):
    """Explicit bump placement: ei on [c-2L, c], es on [c+2, c+2L-2], non-decreasing in between.

    Points sit at c+3, c+4, ... up to c+2L-3 (spacing 1 keeps the covered set
    saturated); the first one is 3 away from c so the profile tail never
    reaches the low side.
    """
    lam = float(half_length)
    if not lam > 2:
        raise ConfigError("half_length must exceed 2")
    profile = profile or BumpProfile()
    c = float(center)
    last = c + 2 * lam - 3
    pts = list(np.arange(c + 3, last + 1e-9, 1.0))
    if not pts or pts[-1] < last - 1e-12:
        pts.append(max(last, c + 3))
    if window is None:
        window = (c - 2 * lam - 2, c + 2 * lam + 2)
    a, b = _check_window(window)
    if a > c - 2 * lam - 2 or b < c + 2 * lam + 2:
        raise ConfigError("window must contain [center-2L-2, center+2L+2]")
    return PoissonBumpPotential(ei, es, np.array(pts), (a, b), profile, 1.0, None, (c, lam))


def find_stretches(pot, c0, n_range, dx=0.025, tol=1e-12):
    """Leftmost x_n in [n, 2n] with an ei run of length 2*c0*ln(n) ending at x_n,
    an es run on [x_n+2, x_n+2*c0*ln(n)-2] and a non-decreasing profile across.
    """
    if dx > 0.05:
        raise ConfigError("stretch verification needs dx <= 0.05")
    ns = list(range(n_range[0], n_range[1] + 1)) if isinstance(n_range, tuple) else list(n_range)
    if not ns or min(ns) < 2:
        raise ConfigError("n values must be integers >= 2")
    n_min, n_max = min(ns), max(ns)
    lo_need = n_min - 2 * c0 * math.log(n_min)
    hi_need = 2 * n_max + 4 * c0 * math.log(n_max)
    a, b = pot.window
    if a > lo_need or b < hi_need:
        raise DomainError(f"potential window must cover [{lo_need:.3f}, {hi_need:.3f}]")
    if not pot.es > pot.ei:
        return []  # no contrast, so no low run next to a high run
    k0 = int(math.ceil(lo_need / dx - 1e-9))
    k1 = int(math.floor(hi_need / dx + 1e-9))
    ks = np.arange(k0, k1 + 1)
    vals = pot(ks * dx)
    bad_low = np.concatenate([[0], np.cumsum(np.abs(vals - pot.ei) > tol)])
    bad_high = np.concatenate([[0], np.cumsum(np.abs(vals - pot.es) > tol)])
    drops = np.concatenate([[0], np.cumsum(np.diff(vals) < -tol)])

    reports = []
    for n in ns:
        phi = c0 * math.log(n)
        n_low = int(math.floor(2 * phi / dx + 1e-9))
        h_start = int(math.ceil(2 / dx - 1e-9))
        h_end = int(math.floor((2 * phi - 2) / dx + 1e-9))
        c_lo = max(int(math.ceil(n / dx - 1e-9)), k0 + n_low)
        c_hi = min(int(math.floor(2 * n / dx + 1e-9)), k1 - max(h_end, 0))
        if c_hi < c_lo:
            continue
        cand = np.arange(c_lo, c_hi + 1) - k0
        ok = bad_low[cand + 1] - bad_low[cand - n_low] == 0
        if h_end >= h_start:
            ok &= bad_high[cand + h_end + 1] - bad_high[cand + h_start] == 0
        ok &= drops[cand + h_end] - drops[cand - n_low] == 0
        hits = np.flatnonzero(ok)
        if hits.size == 0:
            continue
        x_n = float((cand[hits[0]] + k0) * dx)
        fine = np.linspace(x_n - 2 * phi, x_n + 2 * phi - 2, int(math.ceil((4 * phi - 2) / (dx / 4))) + 1)
        mono = bool(np.all(np.diff(pot(fine)) >= -tol))
        reports.append(StretchReport(n, x_n, c0, (x_n - 2 * phi, x_n), (x_n + 2, x_n + 2 * phi - 2), mono))
    return reports


def potential_from_section(sec):
    """Build a potential from a config mapping (see ``to_section``)."""
    kind = sec.get("kind", "poisson").strip()
    if kind not in ("constant", "engineered", "poisson"):
        raise ConfigError(f"unknown potential kind {kind!r}")
    try:
        if kind == "constant":
            window = _parse_window(sec["window"]) if "window" in sec else (-math.inf, math.inf)
            return ConstantPotential(float(sec["value"]), window)
        ei, es = float(sec["ei"]), float(sec["es"])
        window = _parse_window(sec["window"])
        profile = BumpProfile.from_text(sec["profile"]) if "profile" in sec else BumpProfile()
        if kind == "engineered":
            return engineer_stretch_potential(ei, es, float(sec["half_length"]), float(sec["center"]),
                                              window, profile)
        if kind == "poisson":
            return poisson_potential(ei, es, window, int(sec["seed"]), float(sec.get("intensity", 1.0)),
                                     profile)
    except KeyError as exc:
        raise ConfigError(f"potential section missing key {exc}") from None


def _parse_window(text):
    a, b = (float(t) for t in text.split(","))
    return _check_window((a, b))
