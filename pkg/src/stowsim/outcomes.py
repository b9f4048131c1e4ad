"""Stochastic outcome overlay and cycle-time distributions for behaviours."""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from importlib import resources
from typing import Optional

import numpy as np
import yaml

from .errors import ConfigError
from .model import OUTCOMES, Fragility, Outcome


class Family(str, enum.Enum):
    INSERT = "insert"
    SWEEP = "sweep"


MARGIN_BUCKETS = ("<0", "0-10", "10-30", ">30")
REFERENCE_BUCKET = ">30"
CLEAR, OVERLAP = "clear", "overlap"


def margin_bucket(margin_mm: float) -> str:
    if margin_mm < 0:
        return "<0"
    if margin_mm < 10:
        return "0-10"
    if margin_mm < 30:
        return "10-30"
    return ">30"


def time_group(outcome: Outcome) -> str:
    if outcome is Outcome.SUCCESS:
        return "success"
    if outcome is Outcome.UNPRODUCTIVE:
        return "unproductive"
    return "defect"


@dataclass(frozen=True)
class TimeDist:
    mean: float
    cv: float = 0.15

    def __post_init__(self):
        if self.mean <= 0 or self.cv < 0:
            raise ConfigError("cycle-time mean must be positive and cv non-negative")

    def sample(self, rng: np.random.Generator) -> float:
        if self.cv == 0:
            return self.mean
        s2 = np.log1p(self.cv ** 2)
        return float(rng.lognormal(np.log(self.mean) - 0.5 * s2, np.sqrt(s2)))


def _normalise(row) -> np.ndarray:
    row = np.asarray(row, dtype=float)
    if row.shape != (len(OUTCOMES),) or (row < -1e-12).any() or abs(row.sum() - 1.0) > 1e-9:
        raise ConfigError(f"outcome row must be 5 non-negative probabilities summing to 1: {row}")
    return np.clip(row, 0.0, None)


@dataclass
class OutcomeModel:
    """Outcome probabilities keyed by (group, margin bucket, fragility, band state).

    ``group`` is a behaviour family name, or a behaviour kind name for a row
    that overrides its family.
    """

    rows: dict[tuple[str, str, str, str], np.ndarray]
    times: dict[tuple[str, str], TimeDist]
    band_overlap_rate: float = 0.0
    bin_item_amnesty_share: float = 0.0
    constants: dict = field(default_factory=dict)

    def __post_init__(self):
        self.rows = {k: _normalise(v) for k, v in self.rows.items()}
        for p in (self.band_overlap_rate, self.bin_item_amnesty_share):
            if not 0.0 <= p <= 1.0:
                raise ConfigError("rates must lie in [0, 1]")

    @property
    def band_overlap_success(self) -> float:
        return float(self.constants.get("band_overlap", {}).get("success", np.nan))

    def row(self, kind: str, family: str, bucket: str, fragility: str, overlap: bool) -> np.ndarray:
        band = OVERLAP if overlap else CLEAR
        for group in (kind, family):
            r = self.rows.get((group, bucket, fragility, band))
            if r is not None:
                return r
        for group in (kind, family):
            r = self.rows.get((group, bucket, Fragility.STANDARD.value, band))
            if r is not None:
                return r
        raise ConfigError(f"no outcome row for {(kind, family, bucket, fragility, band)}")

    def draw(self, rng: np.random.Generator, kind: str, family: str, bucket: str,
             fragility: str, overlap: bool) -> Outcome:
        row = self.row(kind, family, bucket, fragility, overlap)
        u = rng.random()
        idx = int(np.searchsorted(np.cumsum(row), u, side="right"))
        return OUTCOMES[min(idx, len(OUTCOMES) - 1)]

    def cycle_time(self, rng: np.random.Generator, family: str, outcome: Outcome) -> float:
        return self.times[(family, time_group(outcome))].sample(rng)

    def mean_time(self, family: str, outcome: Outcome) -> float:
        return self.times[(family, time_group(outcome))].mean

    # -- constructors -------------------------------------------------------

    @classmethod
    def forced(cls, outcome: Outcome = Outcome.SUCCESS, times: Optional[dict] = None,
               band_overlap_rate: float = 0.0) -> "OutcomeModel":
        onehot = np.zeros(len(OUTCOMES))
        onehot[OUTCOMES.index(outcome)] = 1.0
        rows = {(f.value, b, fr.value, band): onehot
                for f in Family for b in MARGIN_BUCKETS for fr in Fragility for band in (CLEAR, OVERLAP)}
        base = cls.default()
        return cls(rows, dict(times or base.times), band_overlap_rate, 0.0)

    @classmethod
    def default(cls) -> "OutcomeModel":
        text = resources.files("stowsim.data").joinpath("outcome_default.yaml").read_text()
        return cls.from_constants(yaml.safe_load(text))

    @classmethod
    def from_constants(cls, c: dict) -> "OutcomeModel":
        split = c["defect_split"]
        split_tot = float(sum(split.values()))
        total_amnesty = split["amnesty"] / float(c["attempts_total"])
        band = c["band_overlap"]
        rate = float(band["rate"])
        cv = float(c.get("time_cv", 0.15))

        rows, times = {}, {}
        for fam, fc in c["families"].items():
            n = float(fc["success"] + fc["unproductive"] + fc["defect"])
            d = fc["defect"] / n
            target = np.array([fc["success"] / n, fc["unproductive"] / n,
                               d * split["amnesty"] / split_tot, d * split["damage"] / split_tot,
                               d * split["other"] / split_tot])
            over = np.zeros(5)
            over[0] = band["success"]
            over[2] = band["amnesty_cause_share"] * total_amnesty / rate if rate > 0 else 0.0
            rest = 1.0 - over[0] - over[2]
            others = target[[1, 3, 4]]
            over[[1, 3, 4]] = rest * others / others.sum()
            clear = (target - rate * over) / (1.0 - rate)
            if (clear < 0).any():
                raise ConfigError(f"band-overlap constants infeasible for family {fam}")
            for bucket in MARGIN_BUCKETS:
                odds_mult = float(c.get("margin_failure_odds", {}).get(bucket, 1.0))
                for frag in Fragility:
                    mods = (c.get("fragility", {}) or {}).get(frag.value, {}) or {}
                    rows[(fam, bucket, frag.value, CLEAR)] = _adjust(clear, odds_mult, mods)
                    rows[(fam, bucket, frag.value, OVERLAP)] = over.copy()
            for grp, mean in fc["time_s"].items():
                times[(fam, grp)] = TimeDist(float(mean), cv)
        return cls(rows, times, rate, float(c.get("bin_item_amnesty_share", 0.0)), constants=c)

    @classmethod
    def from_config(cls, cfg) -> "OutcomeModel":
        """Accepts None / "default", a constants mapping, or {"preset": ..., overrides}."""
        if cfg is None or cfg == "default":
            return cls.default()
        if isinstance(cfg, str):
            with open(cfg) as fh:
                return cls.from_config(yaml.safe_load(fh))
        if not isinstance(cfg, dict):
            raise ConfigError("outcome_model must be a mapping, a path or 'default'")
        cfg = dict(cfg)
        preset = cfg.pop("preset", None)
        if preset == "forced_success":
            return cls.forced(Outcome.SUCCESS, band_overlap_rate=float(cfg.get("band_overlap_rate", 0.0)))
        if preset == "default":
            base = yaml.safe_load(resources.files("stowsim.data").joinpath("outcome_default.yaml").read_text())
            base.update(cfg)
            return cls.from_constants(base)
        if preset is not None:
            raise ConfigError(f"unknown outcome preset {preset!r}")
        return cls.from_constants(cfg)


def _adjust(clear: np.ndarray, odds_mult: float, mods: dict) -> np.ndarray:
    row = clear.copy()
    fail = 1.0 - row[0]
    if odds_mult != 1.0 and 0 < fail < 1:
        odds = fail / (1.0 - fail) * odds_mult
        new_fail = odds / (1.0 + odds)
        row[1:] *= new_fail / fail
    for name, mult in mods.items():
        row[OUTCOMES.index(Outcome(name))] *= float(mult)
    if row[1:].sum() > 1.0:
        row[1:] /= row[1:].sum()
    row[0] = 1.0 - row[1:].sum()
    return row
