"""Declarative scenario configuration.

A scenario is a nested mapping (YAML or JSON on disk). Every key has a default
in ``data/scenario_default.yaml``; user files override keys selectively.
"""
from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Optional, Union

import yaml

from .behaviors import EngineParams
from .errors import ConfigError
from .model import ItemDistribution
from .outcomes import OutcomeModel
from .perception import PerceptionNoise


def default_dict() -> dict:
    text = resources.files("stowsim.data").joinpath("scenario_default.yaml").read_text()
    return yaml.safe_load(text)


def _merge(base: dict, over: dict, path: str = "") -> dict:
    out = copy.deepcopy(base)
    for k, v in (over or {}).items():
        if k not in out:
            raise ConfigError(f"unknown config key {path + k!r}")
        if isinstance(out[k], dict) and isinstance(v, dict) and k not in ("items", "creation_allowance_mm"):
            out[k] = _merge(out[k], v, path + k + ".")
        else:
            out[k] = copy.deepcopy(v)
    return out


@dataclass(frozen=True)
class TimingConstants:
    kickout_s: float = 6.0
    no_stow_turnaway_s: float = 12.0
    buffer_cycle_s: float = 8.0
    reorientation_success: float = 0.98
    band_open_s: float = 3.0
    transport_s: float = 4.0

    def __post_init__(self):
        for name in ("kickout_s", "no_stow_turnaway_s", "buffer_cycle_s", "band_open_s", "transport_s"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"timing.{name} must be positive")
        if not 0 < self.reorientation_success <= 1:
            raise ConfigError("timing.reorientation_success must lie in (0, 1]")

    @property
    def band_delay_s(self) -> float:
        """Band opening runs in parallel with transport; only the excess is charged."""
        return max(0.0, self.band_open_s - self.transport_s)


@dataclass(frozen=True)
class FillComponent:
    weight: float
    low: float
    high: float


@dataclass(frozen=True)
class PodConfig:
    bins_per_pod: int = 12
    rows: int = 3
    bin_widths_mm: tuple = (300, 400, 500)
    bin_heights_mm: tuple = (230, 300)
    bin_depth_mm: int = 380
    lip_height_mm: int = 25
    fill: tuple = (FillComponent(1.0, 0.3, 0.9),)
    bands_per_bin: int = 2
    band_pinned_prob: float = 0.2
    gap_concentration: float = 1.0

    def __post_init__(self):
        if not 1 <= self.bins_per_pod <= 52:
            raise ConfigError("pods.bins_per_pod must lie in [1, 52]")
        if self.rows < 1 or not self.bin_widths_mm or not self.bin_heights_mm:
            raise ConfigError("pods need at least one row, width and height")
        if self.gap_concentration <= 0:
            raise ConfigError("pods.gap_concentration must be positive")
        for c in self.fill:
            if not 0 <= c.low <= c.high <= 1:
                raise ConfigError("pods.fill components need 0 <= low <= high <= 1")


@dataclass(frozen=True)
class PlannerConfig:
    margin_mm: float = 10.0
    feasibility_slack_mm: float = 60.0
    creation_allowance_mm: dict = field(default_factory=dict)
    epsilon: float = 0.0
    window: int = 200
    heavy_mass_g: float = 1500.0
    heavy_min_row: int = 2
    kickout_success_rate: Optional[float] = None
    mean_insert_cycle_s: float = 10.87
    plank_strip_cells: int = 6
    max_attempts_per_pod: int = 60

    def __post_init__(self):
        if not 0.0 <= self.epsilon <= 0.05:
            raise ConfigError("planner.epsilon must lie in [0, 0.05]")
        if self.window < 1:
            raise ConfigError("planner.window must be >= 1")


@dataclass(frozen=True)
class ScenarioConfig:
    raw: dict
    seed: int
    pods: PodConfig
    items: ItemDistribution
    buffer_slots: int
    supply_limit: Optional[int]
    timing: TimingConstants
    perception: PerceptionNoise
    engine: EngineParams
    outcome_model: OutcomeModel
    planner: PlannerConfig
    human_baseline_uph: float

    @classmethod
    def from_dict(cls, overrides: Optional[dict] = None) -> "ScenarioConfig":
        d = _merge(default_dict(), overrides or {})
        try:
            p = dict(d["pods"])
            p["fill"] = tuple(FillComponent(**c) for c in p["fill"])
            p["bin_widths_mm"] = tuple(p["bin_widths_mm"])
            p["bin_heights_mm"] = tuple(p["bin_heights_mm"])
            return cls(
                raw=d,
                seed=int(d["seed"]),
                pods=PodConfig(**p),
                items=ItemDistribution.from_dict(d["items"]),
                buffer_slots=int(d["buffer"]["slots"]),
                supply_limit=None if d["buffer"].get("supply_limit") is None else int(d["buffer"]["supply_limit"]),
                timing=TimingConstants(**d["timing"]),
                perception=PerceptionNoise(**d["perception"]),
                engine=EngineParams(**d["engine"]),
                outcome_model=OutcomeModel.from_config(d["outcome_model"]),
                planner=PlannerConfig(**d["planner"]),
                human_baseline_uph=float(d["human_baseline_uph"]),
            )
        except (TypeError, ValueError, KeyError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(str(exc)) from exc

    @classmethod
    def load(cls, path: Union[str, Path, None] = None, **overrides: Any) -> "ScenarioConfig":
        d = {}
        if path is not None:
            text = Path(path).read_text()
            d = (json.loads(text) if str(path).endswith(".json") else yaml.safe_load(text)) or {}
        d = _merge(default_dict(), d)
        return cls.from_dict(_merge(d, overrides) if overrides else d)

    def with_overrides(self, **overrides: Any) -> "ScenarioConfig":
        return ScenarioConfig.from_dict(_merge(self.raw, overrides))

    def to_dict(self) -> dict:
        return copy.deepcopy(self.raw)

    def hash(self) -> str:
        blob = json.dumps(self.raw, sort_keys=True, separators=(",", ":"), default=str)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]
