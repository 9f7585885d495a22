"""Experiment configuration: a TOML file with [model], [run] and [analysis] sections.

Every key is checked against the dataclass fields below.  Unknown keys and
out-of-range values raise :class:`ConfigError` naming the dotted field path.
"""
from __future__ import annotations

import dataclasses
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from ..models import PointProcessSpec, make_spec
from .rng import MAX_SEED

__all__ = ["ConfigError", "ModelSection", "RunSection", "AnalysisSection", "ExperimentConfig",
           "EXPERIMENTS", "load_config", "config_from_mapping"]

EXPERIMENTS = ("cM", "cDinf", "overshoot", "factorization", "smoothing", "integrability", "truncation")


class ConfigError(ValueError):
    """Invalid configuration; ``path`` is the dotted name of the offending field."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


@dataclass(frozen=True)
class ModelSection:
    family: str = "gaussian-dyadic"
    p: float = 1.0


@dataclass(frozen=True)
class RunSection:
    samples: int = 100_000
    depth: int = 20             # deepest minimum level sampled by the spine sampler
    horizon: float = 8.0        # stopping-line height for the smoothing test
    kmax: int = 200
    slack: float = 4.0
    record_window: int = 30
    cap: int = 100_000_000
    workers: int = 1


@dataclass(frozen=True)
class AnalysisSection:
    x_grid: tuple = ()          # empty means the experiment's default grid
    t_grid: tuple = (0, 2, 5, 10, 20, 25)
    epsilon: float = 0.05
    tolerance: float = 0.10
    k_sigma: float = 3.0
    conditional_x: float = 8.0


# (lower, upper, lower-inclusive) ranges per dotted path
_RANGES = {
    "model.p": (0.5, 1.0, False),
    "run.samples": (1, 10**9, True),
    "run.depth": (13, 60, True),
    "run.horizon": (1.0, 30.0, True),
    "run.kmax": (1, 10_000, True),
    "run.slack": (1.0, 30.0, True),
    "run.record_window": (0, 200, True),
    "run.cap": (1, 10**9, True),
    "run.workers": (1, 1024, True),
    "analysis.epsilon": (0.0, 1e6, False),
    "analysis.tolerance": (0.0, 1.0, False),
    "analysis.k_sigma": (0.0, 100.0, False),
    "analysis.conditional_x": (4.0, 12.0, True),
}


@dataclass(frozen=True)
class ExperimentConfig:
    experiment: str = "cM"
    seed: int = 0
    model: ModelSection = field(default_factory=ModelSection)
    run: RunSection = field(default_factory=RunSection)
    analysis: AnalysisSection = field(default_factory=AnalysisSection)

    @property
    def spec(self) -> PointProcessSpec:
        return make_spec(self.model.family, self.model.p)

    def replace(self, **changes) -> "ExperimentConfig":
        """Copy with top-level fields or dotted section fields ("run.samples") replaced."""
        top = {k: v for k, v in changes.items() if "." not in k}
        sections: dict[str, dict] = {}
        for k, v in changes.items():
            if "." in k:
                sec, name = k.split(".", 1)
                sections.setdefault(sec, {})[name] = v
        for sec, vals in sections.items():
            top[sec] = dataclasses.replace(getattr(self, sec), **vals)
        return _validated(dataclasses.replace(self, **top))

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        for key in ("x_grid", "t_grid"):
            d["analysis"][key] = list(d["analysis"][key])
        return d


def _coerce(path: str, value: Any, default: Any) -> Any:
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(path, f"expected a boolean, got {value!r}")
        return value
    if isinstance(default, int):
        if isinstance(value, float) and value.is_integer():
            value = int(value)
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(path, f"expected an integer, got {value!r}")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(path, f"expected a number, got {value!r}")
        return float(value)
    if isinstance(default, tuple):
        if not isinstance(value, (list, tuple)) or not all(
                isinstance(v, (int, float)) and not isinstance(v, bool) for v in value):
            raise ConfigError(path, f"expected a list of numbers, got {value!r}")
        return tuple(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(path, f"expected a string, got {value!r}")
        return value
    raise ConfigError(path, "unsupported field type")


def _section(cls, name: str, raw: Any):
    if not isinstance(raw, Mapping):
        raise ConfigError(name, "expected a table")
    defaults = cls()
    names = {f.name for f in dataclasses.fields(cls)}
    for key in raw:
        if key not in names:
            raise ConfigError(f"{name}.{key}", "unknown key")
    vals = {k: _coerce(f"{name}.{k}", v, getattr(defaults, k)) for k, v in raw.items()}
    return cls(**vals)


def _validated(cfg: ExperimentConfig) -> ExperimentConfig:
    if cfg.experiment not in EXPERIMENTS:
        raise ConfigError("experiment", f"must be one of {', '.join(EXPERIMENTS)}, got {cfg.experiment!r}")
    if isinstance(cfg.seed, bool) or not isinstance(cfg.seed, int) or not 0 <= cfg.seed <= MAX_SEED:
        raise ConfigError("seed", "must be a 64-bit unsigned integer")
    if cfg.model.family != "gaussian-dyadic":
        raise ConfigError("model.family", f"unknown family {cfg.model.family!r}")
    for path, (lo, hi, closed) in _RANGES.items():
        sec, name = path.split(".")
        v = getattr(getattr(cfg, sec), name)
        if v > hi or v < lo or (v == lo and not closed):
            bracket = "[" if closed else "("
            raise ConfigError(path, f"{v!r} outside {bracket}{lo}, {hi}]")
    for path in ("analysis.x_grid", "analysis.t_grid"):
        g = getattr(cfg.analysis, path.split(".")[1])
        if any(b <= a for a, b in zip(g, g[1:])) or any(v < 0 for v in g):
            raise ConfigError(path, "must be non-negative and strictly increasing")
    if cfg.analysis.t_grid and max(cfg.analysis.t_grid) > cfg.run.record_window:
        raise ConfigError("analysis.t_grid", "exceeds run.record_window")
    return cfg


def config_from_mapping(raw: Mapping) -> ExperimentConfig:
    """Build and validate a config from a parsed TOML document."""
    known = {"experiment", "seed", "model", "run", "analysis"}
    for key in raw:
        if key not in known:
            raise ConfigError(key, "unknown key")
    cfg = ExperimentConfig(
        experiment=_coerce("experiment", raw.get("experiment", "cM"), ""),
        seed=_coerce("seed", raw.get("seed", 0), 0),
        model=_section(ModelSection, "model", raw.get("model", {})),
        run=_section(RunSection, "run", raw.get("run", {})),
        analysis=_section(AnalysisSection, "analysis", raw.get("analysis", {})),
    )
    return _validated(cfg)


def load_config(path: str | Path | None = None, text: str | None = None) -> ExperimentConfig:
    """Read a TOML config from a file or a string; neither gives the defaults."""
    if path is not None:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    elif text is not None:
        raw = tomllib.loads(text)
    else:
        raw = {}
    return config_from_mapping(raw)
