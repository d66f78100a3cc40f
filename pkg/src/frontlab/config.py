"""Sectioned plain-text experiment configs and reproducibility manifests."""
from __future__ import annotations

import configparser
import hashlib
import json
import platform
from dataclasses import dataclass, field
from importlib import metadata
from pathlib import Path

from .branching_law import OffspringDistribution
from .environment import potential_from_section
from .errors import ConfigError, FrontlabError
from .pde_solver import solver_config_from_section

SECTION_ORDER = ("experiment", "potential", "offspring", "solver", "mc", "coupling")
EXPERIMENTS = ("pam_width", "fkpp_width", "nonmonotone", "vel_scan", "coupling")
MANIFEST_NAME = "manifest.json"

_MC_INT = ("n_paths", "realizations", "n_reps", "cap", "n_delta")
_MC_FLOAT = ("dt", "x_max", "lag", "v0_t", "v0_dx")
_COUPLING_INT = ("n_reps", "cap")
_COUPLING_FLOAT = ("dt", "l_frac", "r_frac", "horizon_factor", "center", "delta1", "t_check", "target")


def _parser():
    p = configparser.ConfigParser(interpolation=None, delimiters=("=",), comment_prefixes=("#", ";"))
    p.optionxform = str
    return p


def _floats(text):
    return tuple(float(s) for s in text.split(",") if s.strip())


@dataclass
class ExperimentConfig:
    """Raw string sections; typed views are built on demand and checked by ``validate``."""

    sections: dict = field(default_factory=dict)

    @classmethod
    def from_text(cls, text):
        p = _parser()
        try:
            p.read_string(text)
        except configparser.Error as exc:
            raise ConfigError(f"malformed config: {exc}") from None
        unknown = [s for s in p.sections() if s not in SECTION_ORDER]
        if unknown:
            raise ConfigError(f"unknown config sections {unknown}; expected a subset of {list(SECTION_ORDER)}")
        return cls({s: dict(p[s]) for s in p.sections()})

    @classmethod
    def load(cls, path):
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        return cls.from_text(text)

    def to_text(self):
        out = []
        for name in SECTION_ORDER:
            if name in self.sections:
                out.append(f"[{name}]")
                out.extend(f"{k} = {v}" for k, v in self.sections[name].items())
                out.append("")
        return "\n".join(out)

    def section(self, name):
        return self.sections.get(name, {})

    def set(self, section, key, value):
        self.sections.setdefault(section, {})[key] = str(value)

    @property
    def name(self):
        return self.section("experiment").get("name", "").strip()

    @property
    def seeds(self):
        text = self.section("experiment").get("seeds", "0")
        try:
            seeds = tuple(int(s) for s in text.split(",") if s.strip())
        except ValueError:
            raise ConfigError(f"seeds must be comma-separated integers, got {text!r}") from None
        if not seeds or min(seeds) < 0:
            raise ConfigError("need at least one non-negative seed")
        return seeds

    @property
    def seed(self):
        return self.seeds[0]

    @property
    def output_dir(self):
        return self.section("experiment").get("output_dir", "out").strip()

    def get_float(self, section, key, default=None):
        val = self.section(section).get(key)
        if val is None or not val.strip():
            return default
        try:
            return float(val)
        except ValueError:
            raise ConfigError(f"[{section}] {key} must be a number, got {val!r}") from None

    def get_int(self, section, key, default=None):
        val = self.get_float(section, key)
        if val is None:
            return default
        if val != int(val):
            raise ConfigError(f"[{section}] {key} must be an integer")
        return int(val)

    def get_floats(self, section, key, default=()):
        val = self.section(section).get(key)
        if val is None:
            return tuple(default)
        try:
            return _floats(val)
        except ValueError:
            raise ConfigError(f"[{section}] {key} must be a comma-separated list of numbers") from None

    def get_bool(self, section, key, default=False):
        val = self.section(section).get(key)
        if val is None:
            return default
        low = val.strip().lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"[{section}] {key} must be a boolean, got {val!r}")

    def potential(self):
        if "potential" not in self.sections:
            raise ConfigError("config has no [potential] section")
        return potential_from_section(self.sections["potential"])

    def offspring(self):
        return OffspringDistribution.from_text(self.section("offspring").get("law", "binary"))

    def solver(self):
        try:
            return solver_config_from_section(self.section("solver"))
        except (TypeError, ValueError) as exc:
            if isinstance(exc, FrontlabError):
                raise
            raise ConfigError(f"bad [solver] section: {exc}") from None

    def validate(self):
        """Build every referenced object once so that errors surface before any run."""
        if self.name and self.name not in EXPERIMENTS:
            raise ConfigError(f"unknown experiment {self.name!r}; choose from {list(EXPERIMENTS)}")
        self.seeds
        if "potential" in self.sections:
            self.potential()
        self.offspring()
        solver = self.solver()
        if solver.dx <= 0 or solver.observe_dt <= 0:
            raise ConfigError("[solver] dx and observe_dt must be positive")
        for key in _MC_INT:
            v = self.get_int("mc", key)
            if v is not None and v < 1:
                raise ConfigError(f"[mc] {key} must be positive")
        for key in _MC_FLOAT:
            v = self.get_float("mc", key)
            if v is not None and not v > 0:
                raise ConfigError(f"[mc] {key} must be positive")
        for key in _COUPLING_INT:
            v = self.get_int("coupling", key)
            if v is not None and v < 1:
                raise ConfigError(f"[coupling] {key} must be positive")
        for key in _COUPLING_FLOAT:
            self.get_float("coupling", key)
        lams = self.get_floats("coupling", "lambdas")
        if any(lam <= 2 for lam in lams):
            raise ConfigError("[coupling] lambdas must exceed 2")
        equation = self.section("experiment").get("equation", "").strip().upper()
        expected = {"pam_width": "PAM", "fkpp_width": "FKPP", "nonmonotone": "FKPP"}.get(self.name)
        if equation and expected and equation != expected:
            raise ConfigError(f"experiment {self.name} integrates {expected}, but the config asks for {equation}")
        if self.name in ("fkpp_width", "nonmonotone", "coupling", "vel_scan", "pam_width") and \
                "potential" not in self.sections:
            raise ConfigError(f"experiment {self.name} needs a [potential] section")
        return self


def config_hash(config):
    return hashlib.sha256(config.to_text().encode()).hexdigest()


def csv_body(path):
    """File content without ``#`` comment lines; the part that must reproduce byte for byte."""
    with open(path, "rb") as fh:
        return b"".join(ln for ln in fh if not ln.startswith(b"#"))


def body_digest(path):
    return hashlib.sha256(csv_body(path)).hexdigest()


def module_versions():
    out = {"python": platform.python_version()}
    for pkg in ("frontlab", "numpy", "scipy", "numba"):
        try:
            out[pkg] = metadata.version(pkg)
        except metadata.PackageNotFoundError:
            out[pkg] = "unknown"
    return out


@dataclass
class RunManifest:
    """Everything needed to rerun an experiment; wall-clock data lives here and never in CSVs."""

    config_text: str
    config_hash: str
    seeds: tuple
    versions: dict
    wall_clock: dict
    outputs: dict  # file name -> sha256 of the CSV body
    verdict: object = None

    def to_json(self):
        return json.dumps({
            "config_hash": self.config_hash,
            "seeds": list(self.seeds),
            "versions": self.versions,
            "wall_clock": self.wall_clock,
            "outputs": self.outputs,
            "verdict": self.verdict,
            "config": self.config_text,
        }, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text):
        d = json.loads(text)
        return cls(d["config"], d["config_hash"], tuple(d["seeds"]), d["versions"], d["wall_clock"],
                   d["outputs"], d.get("verdict"))

    def write(self, directory):
        path = Path(directory) / MANIFEST_NAME
        path.write_text(self.to_json() + "\n")
        return path

    @classmethod
    def load(cls, path):
        path = Path(path)
        if path.is_dir():
            path = path / MANIFEST_NAME
        try:
            return cls.from_json(path.read_text())
        except (OSError, KeyError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read manifest {path}: {exc}") from None

    def config(self):
        cfg = ExperimentConfig.from_text(self.config_text)
        if config_hash(cfg) != self.config_hash:
            raise ConfigError("manifest config does not match its recorded hash")
        return cfg

    def compare(self, directory):
        """Names of recorded outputs whose body differs (or is missing) in ``directory``."""
        bad = []
        for name, digest in sorted(self.outputs.items()):
            p = Path(directory) / name
            if not p.exists() or body_digest(p) != digest:
                bad.append(name)
        return bad
