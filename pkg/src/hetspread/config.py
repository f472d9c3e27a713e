"""Experiment configuration files.

A config is a YAML mapping with a ``schema`` version. Unknown keys are
rejected so a typo cannot silently fall back to a default.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .profile import CORRELATIONS, FAMILIES, ProfileError, ProfileSpec

SCHEMA_VERSION = 1
EXPERIMENTS = ("trajectory", "k_sweep", "mc_validate", "oracle_validate", "allocation", "timing_sweep")
DEFAULT_K_GRID = (0.05, 0.1, 0.2, 0.5, 1.0, 2.0, 5.0, 10.0)
PROFILE_KEYS = ("family", "sigma", "iota", "shape", "scale", "correlation", "atoms")


class ConfigError(ValueError):
    """Config failed validation; ``field`` names the offending key."""

    def __init__(self, field: str, reason: str):
        super().__init__(f"{field}: {reason}")
        self.field = field
        self.reason = reason


@dataclass
class ExperimentConfig:
    experiment: str
    schema: int = SCHEMA_VERSION
    seed: int = 0
    threads: int = 1
    out_dir: str = "out"
    decimate: int | None = None
    n0: int = 1_000_000
    r0: float = 3.0
    atom_count: int = 1000
    correlation: str = "equal"
    overshoot: float = 0.1
    # single population for trajectory / mc_validate; k_grid drives the sweeps
    profile: dict | None = None
    k_grid: list[float] = field(default_factory=lambda: list(DEFAULT_K_GRID))
    mlrp_pairs: int = 100
    long_range_pairs: int = 10
    replicas: int = 1000
    steps: int | None = None
    traces: int = 0
    populations: int = 20
    max_nodes: int = 8
    supplies: list[int] = field(default_factory=lambda: [100_000, 1_000_000])
    granularity: int | None = None
    timing: int = 0
    vaccine_fraction: float = 0.1
    timing_fractions: list[float] = field(default_factory=lambda: [0.0, 0.05, 0.1, 0.2])

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def dump(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=True)

    def profile_spec(self, **overrides) -> ProfileSpec:
        """ProfileSpec for this config's population (gamma of ``shape`` when
        ``overrides`` name one), calibrated to ``r0``."""
        base = {"family": "gamma", "correlation": self.correlation}
        base.update(self.profile or {})
        base.update(overrides)
        atoms = base.get("atoms")
        if atoms is not None:
            base["atoms"] = tuple(tuple(float(x) for x in a) for a in atoms)
        return ProfileSpec(
            n0=self.n0, target_r0=self.r0, atom_count=self.atom_count, **base
        )

    @property
    def output_decimation(self) -> int:
        if self.decimate is not None:
            return self.decimate
        return 1000 if self.n0 >= 100_000 else 1


def _check(cond, name, reason):
    if not cond:
        raise ConfigError(name, reason)


def _is_int(v):
    return isinstance(v, int) and not isinstance(v, bool)


def _is_num(v):
    return isinstance(v, (int, float)) and not isinstance(v, bool)


def validate(cfg: ExperimentConfig) -> ExperimentConfig:
    _check(cfg.schema == SCHEMA_VERSION, "schema", f"unsupported version {cfg.schema!r}")
    _check(cfg.experiment in EXPERIMENTS, "experiment", f"must be one of {EXPERIMENTS}")
    _check(_is_int(cfg.seed) and cfg.seed >= 0, "seed", "must be a non-negative integer")
    _check(_is_int(cfg.threads) and cfg.threads >= 1, "threads", "must be an integer >= 1")
    _check(isinstance(cfg.out_dir, str) and cfg.out_dir, "out_dir", "must be a non-empty path")
    _check(cfg.decimate is None or (_is_int(cfg.decimate) and cfg.decimate >= 1), "decimate", "must be an integer >= 1")
    _check(_is_int(cfg.n0) and cfg.n0 >= 2, "n0", "must be an integer >= 2")
    _check(_is_num(cfg.r0) and cfg.r0 > 0, "r0", "must be > 0")
    _check(_is_int(cfg.atom_count) and cfg.atom_count >= 1, "atom_count", "must be an integer >= 1")
    _check(cfg.correlation in CORRELATIONS, "correlation", f"must be one of {CORRELATIONS}")
    _check(_is_num(cfg.overshoot) and cfg.overshoot >= 0, "overshoot", "must be >= 0")
    _check(isinstance(cfg.k_grid, list) and cfg.k_grid, "k_grid", "must be a non-empty list")
    for i, k in enumerate(cfg.k_grid):
        _check(_is_num(k) and k > 0, f"k_grid[{i}]", f"shape must be > 0, got {k!r}")
    _check(_is_int(cfg.mlrp_pairs) and cfg.mlrp_pairs >= 0, "mlrp_pairs", "must be an integer >= 0")
    _check(_is_int(cfg.long_range_pairs) and cfg.long_range_pairs >= 0, "long_range_pairs", "must be an integer >= 0")
    _check(_is_int(cfg.replicas) and cfg.replicas >= 2, "replicas", "must be an integer >= 2")
    _check(cfg.steps is None or (_is_int(cfg.steps) and 1 <= cfg.steps <= cfg.n0), "steps", "must be in [1, n0]")
    _check(_is_int(cfg.traces) and 0 <= cfg.traces <= cfg.replicas, "traces", "must be in [0, replicas]")
    _check(_is_int(cfg.populations) and cfg.populations >= 1, "populations", "must be an integer >= 1")
    _check(_is_int(cfg.max_nodes) and 2 <= cfg.max_nodes <= 9, "max_nodes", "must be in [2, 9]")
    _check(isinstance(cfg.supplies, list) and cfg.supplies, "supplies", "must be a non-empty list")
    for i, v in enumerate(cfg.supplies):
        _check(_is_int(v) and v >= 0, f"supplies[{i}]", f"must be a non-negative integer, got {v!r}")
    _check(cfg.granularity is None or (_is_int(cfg.granularity) and cfg.granularity >= 1), "granularity", "must be an integer >= 1")
    _check(_is_int(cfg.timing) and 0 <= cfg.timing < cfg.n0, "timing", "must be in [0, n0)")
    _check(_is_num(cfg.vaccine_fraction) and 0 <= cfg.vaccine_fraction < 1, "vaccine_fraction", "must be in [0, 1)")
    _check(isinstance(cfg.timing_fractions, list) and cfg.timing_fractions, "timing_fractions", "must be a non-empty list")
    for i, t in enumerate(cfg.timing_fractions):
        _check(_is_num(t) and 0 <= t < 1, f"timing_fractions[{i}]", f"must be in [0, 1), got {t!r}")
    if cfg.experiment in ("trajectory", "mc_validate"):
        _check(cfg.profile is not None, "profile", f"required for {cfg.experiment}")
    if cfg.profile is not None:
        _check(isinstance(cfg.profile, dict), "profile", "must be a mapping")
        for key in cfg.profile:
            _check(key in PROFILE_KEYS, f"profile.{key}", "unknown key")
        fam = cfg.profile.get("family", "gamma")
        _check(fam in FAMILIES, "profile.family", f"must be one of {FAMILIES}")
        try:
            cfg.profile_spec()
        except ProfileError as exc:
            raise ConfigError(f"profile.{str(exc).split(':')[0]}", str(exc)) from None
    return cfg


def from_dict(data: dict) -> ExperimentConfig:
    if not isinstance(data, dict):
        raise ConfigError("<root>", "config must be a mapping")
    known = {f.name for f in dataclasses.fields(ExperimentConfig)}
    for key in data:
        if key not in known:
            raise ConfigError(key, "unknown key")
    if "experiment" not in data:
        raise ConfigError("experiment", "required")
    if "schema" not in data:
        raise ConfigError("schema", "required")
    return validate(ExperimentConfig(**data))


def load(path) -> ExperimentConfig:
    text = Path(path).read_text()
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError("<file>", f"not valid YAML: {exc}") from None
    return from_dict(data)
