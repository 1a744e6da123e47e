"""Run configuration: one structured file drives synthesis and the pipeline.

Keys mirror the dataclass fields below. Relative paths resolve against the
directory holding the config file.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from hydrocube.forecast import FAMILIES
from hydrocube.segmentation import COMBOS

STAGES = ("datacube", "despeckle", "segment", "forecast", "hydro")


class ConfigError(ValueError):
    pass


@dataclass
class SynthSettings:
    n_scenes: int = 8
    size: int = 96
    n_steps: int = 20
    r0: float = 24.0
    amplitude: float = 8.0
    period: int = 6
    trend: float = 0.0
    depth: float = 20.0
    looks: int = 4
    cloud_prob: float = 0.2
    dark_patches: int = 3
    mudflats: bool = True
    processing_baseline: str = "04.00"


@dataclass
class DespeckleSettings:
    epochs: int = 8
    batch_size: int = 16
    learning_rate: float = 1e-3
    depth: int = 3
    channels: int = 16
    patch_size: int = 64
    max_pairs: int = 500
    alpha1: float = 1.0
    beta1: float = 0.5
    gamma1: float = 1e-4


@dataclass
class SegmentSettings:
    epochs: int = 10
    batch_size: int = 8
    learning_rate: float = 1e-3
    depth: int = 3
    base_channels: int = 16
    patch_size: int = 64
    stride: int | None = None
    threshold: float = 0.5
    combos: list = field(default_factory=lambda: list(COMBOS))
    alpha2: float = 1.0
    beta2: float = 0.5
    epsilon: float = 1e-7


@dataclass
class ForecastSettings:
    epochs: int = 10
    batch_size: int = 8
    learning_rate: float = 2e-3
    hidden: int = 16
    depth: int = 1
    history: int = 7
    families: list = field(default_factory=lambda: list(FAMILIES))
    alpha3: float = 1.0
    beta3: float = 0.5
    gamma3: float = 0.1


@dataclass
class HydroSettings:
    seasonal_period: int = 6
    tolerance_days: int = 7


@dataclass
class RunConfig:
    seed: int = 0
    stages: list = field(default_factory=lambda: list(STAGES))
    scenes_dir: str = "scenes"
    output_dir: str = "experiment"
    train_fraction: float = 0.75
    synth: SynthSettings = field(default_factory=SynthSettings)
    despeckle: DespeckleSettings = field(default_factory=DespeckleSettings)
    segment: SegmentSettings = field(default_factory=SegmentSettings)
    forecast: ForecastSettings = field(default_factory=ForecastSettings)
    hydro: HydroSettings = field(default_factory=HydroSettings)
    base_dir: str = field(default=".", metadata={"serialize": False})

    def __post_init__(self):
        bad = [s for s in self.stages if s not in STAGES]
        if bad or not self.stages:
            raise ConfigError(f"unknown or empty stage selection {self.stages}; choose from {STAGES}")
        if not 0 < self.train_fraction < 1:
            raise ConfigError("train_fraction must lie in (0, 1)")
        if self.synth.n_scenes < 0:
            raise ConfigError("synth.n_scenes must be >= 0")
        bad = [c for c in self.segment.combos if c not in COMBOS]
        if bad:
            raise ConfigError(f"unknown band combos {bad}")
        bad = [f for f in self.forecast.families if f not in FAMILIES]
        if bad:
            raise ConfigError(f"unknown forecast families {bad}")
        if self.synth.n_steps <= self.forecast.history:
            raise ConfigError("synth.n_steps must exceed forecast.history")

    def path(self, which: str) -> Path:
        p = Path(getattr(self, which))
        return p if p.is_absolute() else Path(self.base_dir) / p

    def to_dict(self) -> dict:
        out = {}
        for f in dataclasses.fields(self):
            if f.metadata.get("serialize", True):
                v = getattr(self, f.name)
                out[f.name] = dataclasses.asdict(v) if dataclasses.is_dataclass(v) else v
        return out


_SECTIONS = {
    "synth": SynthSettings,
    "despeckle": DespeckleSettings,
    "segment": SegmentSettings,
    "forecast": ForecastSettings,
    "hydro": HydroSettings,
}


def _build(cls, data, where):
    if not isinstance(data, dict):
        raise ConfigError(f"{where} must be a mapping")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"unknown key(s) in {where}: {unknown}")
    try:
        return cls(**data)
    except TypeError as exc:
        raise ConfigError(f"{where}: {exc}") from None


def from_dict(data: dict, base_dir=".") -> RunConfig:
    data = dict(data or {})
    if "base_dir" in data:
        raise ConfigError("base_dir is not a config key")
    for key, cls in _SECTIONS.items():
        if key in data:
            data[key] = _build(cls, data[key], key)
    if isinstance(data.get("stages"), str):
        data["stages"] = [s.strip() for s in data["stages"].split(",")]
    return _build(RunConfig, {**data, "base_dir": str(base_dir)}, "config")


def load_config(path) -> RunConfig:
    """Read YAML (or JSON, a YAML subset) into a :class:`RunConfig`."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        data = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from None
    return from_dict(data if data is not None else {}, base_dir=path.resolve().parent)


def dump_config(cfg: RunConfig, path) -> None:
    Path(path).write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n")
