"""Risk models: success probability and cycle time for a candidate stow.

The learned reference model is a bucketed frequency table. Cells are nested
from the root (all records) down to (behaviour, margin bin, space source,
fragility); each cell's rate is shrunk toward its parent's with empirical-Bayes
strength estimated from how much sibling cells disagree beyond binomial noise.
The root gets Laplace smoothing; thin cells fall back to their parent.
Any object with ``predict_success`` and ``predict_time`` can stand in.
"""
from __future__ import annotations

import json
from collections import defaultdict
from pathlib import Path
from typing import Iterable, Optional, Protocol, Sequence, Union

import numpy as np

from .behaviors import BEHAVIOR_ORDER, BehaviorKind, family
from .errors import InsufficientData
from .model import Features, Fragility, OutcomeRecord

FORMAT = "stowsim-risk-table"
VERSION = 2
DEFAULT_MARGIN_EDGES = (-40.0, -20.0, -10.0, 0.0, 10.0, 20.0, 30.0, 50.0, 80.0)

# family-level priors: success rate and mean (success, failure) cycle times
FAMILY_PRIORS = {
    "insert": (0.9072, 10.87, (4530 * 18.24 + 2875 * 10.17) / (4530 + 2875)),
    "sweep": (0.6667, 13.68, (4780 * 19.69 + 1955 * 16.83) / (4780 + 1955)),
}


class RiskModel(Protocol):
    def predict_success(self, features: Features) -> float: ...

    def predict_time(self, features: Features, success: bool) -> float: ...


# Batch interface used by the planner: arrays of behaviour index (order of
# BEHAVIOR_ORDER), estimated margin, space-source index (cat1, cat2a, cat2b)
# and fragility index (order of Fragility) -> (p, t_success, t_failure).
KIN_SOURCE = 2


def _family_arrays(priors: dict, kind: np.ndarray):
    p = np.array([priors[family(k).value][0] for k in BEHAVIOR_ORDER])
    t1 = np.array([priors[family(k).value][1] for k in BEHAVIOR_ORDER])
    t0 = np.array([priors[family(k).value][2] for k in BEHAVIOR_ORDER])
    return p[kind], t1[kind], t0[kind]


def family_of(kind: str) -> str:
    return family(BehaviorKind(kind)).value


class FamilyRateModel:
    """Constant per-family success rate and cycle times."""

    def __init__(self, priors: Optional[dict] = None):
        self.priors = dict(priors or FAMILY_PRIORS)

    def predict_success(self, features: Features) -> float:
        return self.priors[family_of(features.kind)][0]

    def predict_time(self, features: Features, success: bool) -> float:
        p = self.priors[family_of(features.kind)]
        return p[1] if success else p[2]

    def predict_arrays(self, kind, margin, src, frag):
        return _family_arrays(self.priors, np.asarray(kind))


class ConstantModel:
    def __init__(self, p: float, t_success: float = 10.0, t_failure: float = 15.0):
        self.p, self.t1, self.t0 = p, t_success, t_failure

    def predict_success(self, features: Features) -> float:
        return self.p

    def predict_time(self, features: Features, success: bool) -> float:
        return self.t1 if success else self.t0

    def predict_arrays(self, kind, margin, src, frag):
        n = len(kind)
        return np.full(n, self.p), np.full(n, self.t1), np.full(n, self.t0)


def _src(source: str) -> str:
    return "kin" if source == "cat2b" else "perc"


class TabularRiskModel:
    def __init__(self, margin_edges: Sequence[float] = DEFAULT_MARGIN_EDGES, alpha: float = 1.0,
                 min_count: int = 30):
        self.margin_edges = tuple(float(e) for e in margin_edges)
        self.alpha = float(alpha)
        self.min_count = int(min_count)
        self.counts: list[dict[tuple, list[int]]] = [defaultdict(lambda: [0, 0]) for _ in range(6)]
        self.times: dict[tuple, list[float]] = defaultdict(lambda: [0.0, 0])
        self._cache: dict[tuple, float] = {}
        self._tables = None
        self._est = None

    def margin_bin(self, margin: float) -> int:
        return int(np.searchsorted(self.margin_edges, margin, side="right"))

    def keys(self, f: Features) -> tuple[tuple, ...]:
        return self._keys(f.kind, self.margin_bin(f.margin), _src(f.source), f.fragility)

    @staticmethod
    def _keys(kind: str, m: int, src: str, frag: str) -> tuple[tuple, ...]:
        fam = family_of(kind)
        return ((kind, m, src, frag), (kind, m, src), (kind, m), (fam, m), (fam,), ())

    @staticmethod
    def _parent(level: int, key: tuple) -> tuple:
        if level == 2:
            return (family_of(key[0]), key[1])
        return key[:-1]

    def add(self, f: Features, success: bool, cycle_time: float) -> None:
        for level, key in enumerate(self.keys(f)):
            c = self.counts[level][key]
            c[0] += int(success)
            c[1] += 1
        for key in ((f.kind, bool(success)), (family_of(f.kind), bool(success)), ("*", bool(success))):
            t = self.times[key]
            t[0] += cycle_time
            t[1] += 1
        self._cache.clear()
        self._tables = None
        self._est = None

    def _level_tau2(self, level: int, groups: dict[tuple, list[tuple]]) -> float:
        """Between-cell variance of success rates at one level, pooled over parents.

        Method of moments: observed weighted dispersion minus what binomial
        noise alone would produce. Pooling keeps the estimate stable when each
        parent has only a handful of children.
        """
        excess, denom = 0.0, 0.0
        for keys in groups.values():
            c = np.array([self.counts[level][k] for k in keys], dtype=float)
            s, n = c[:, 0], c[:, 1]
            N = n.sum()
            if len(keys) < 2 or N <= 0:
                continue
            pbar = s.sum() / N
            excess += float(np.sum(n * (s / n - pbar) ** 2)) - (len(keys) - 1) * pbar * (1 - pbar)
            denom += N - float(np.sum(n ** 2)) / N
        return excess / denom if denom > 0 else 0.0

    def _estimates(self) -> list[dict[tuple, float]]:
        if self._est is not None:
            return self._est
        top = len(self.counts) - 1
        est: list[dict[tuple, float]] = [dict() for _ in self.counts]
        for key, (s, n) in self.counts[top].items():
            est[top][key] = (s + self.alpha) / (n + 2 * self.alpha)
        for level in range(top - 1, -1, -1):
            groups: dict[tuple, list[tuple]] = defaultdict(list)
            for key in sorted(self.counts[level]):
                groups[self._parent(level, key)].append(key)
            tau2 = self._level_tau2(level, groups)
            for parent, keys in groups.items():
                prior = est[level + 1][parent]
                k = np.inf
                if tau2 > 0 and 0 < prior < 1:
                    k = max(prior * (1 - prior) / tau2 - 1.0, 2 * self.alpha)
                for key in keys:
                    s, n = self.counts[level][key]
                    est[level][key] = prior if np.isinf(k) else (s + k * prior) / (n + k)
        self._est = est
        return est

    def predict_success(self, f: Features) -> float:
        return self._p(self.keys(f))

    def _p(self, keys: tuple[tuple, ...]) -> float:
        ck = keys[0]
        hit = self._cache.get(ck)
        if hit is not None:
            return hit
        est = self._estimates()
        p = 0.5
        for level, key in enumerate(keys):
            c = self.counts[level].get(key)
            if c is not None and (c[1] >= self.min_count or level == len(keys) - 1):
                p = est[level][key]
                break
        self._cache[ck] = p
        return p

    def predict_time(self, f: Features, success: bool) -> float:
        for key in ((f.kind, bool(success)), (family_of(f.kind), bool(success)), ("*", bool(success))):
            t = self.times.get(key)
            if t is not None and t[1] >= min(self.min_count, 5):
                return t[0] / t[1]
        prior = FAMILY_PRIORS[family_of(f.kind)]
        return prior[1] if success else prior[2]

    def _build_tables(self):
        n_m = len(self.margin_edges) + 1
        frags = [f.value for f in Fragility]
        P = np.empty((len(BEHAVIOR_ORDER), n_m, 2, len(frags)))
        T1 = np.empty(len(BEHAVIOR_ORDER))
        T0 = np.empty(len(BEHAVIOR_ORDER))
        for k, kind in enumerate(BEHAVIOR_ORDER):
            for m in range(n_m):
                for s_i, src in enumerate(("perc", "kin")):
                    for fi, frag in enumerate(frags):
                        P[k, m, s_i, fi] = self._p(self._keys(kind.value, m, src, frag))
            probe = Features(kind.value, 0.0, 0.0, 0.0, 0.0, 0.0, frags[0], 0.0, "cat1")
            T1[k] = self.predict_time(probe, True)
            T0[k] = self.predict_time(probe, False)
        self._tables = (P, T1, T0)

    def predict_arrays(self, kind, margin, src, frag):
        if self._tables is None:
            self._build_tables()
        P, T1, T0 = self._tables
        kind = np.asarray(kind)
        m = np.searchsorted(self.margin_edges, np.asarray(margin, dtype=float), side="right")
        kin = (np.asarray(src) == KIN_SOURCE).astype(np.int64)
        return P[kind, m, kin, np.asarray(frag)], T1[kind], T0[kind]

    # -- serialisation --------------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "format": FORMAT,
            "version": VERSION,
            "margin_edges": list(self.margin_edges),
            "alpha": self.alpha,
            "min_count": self.min_count,
            "levels": [[[list(k), c[0], c[1]] for k, c in sorted(level.items(), key=lambda kv: repr(kv[0]))]
                       for level in self.counts],
            "times": [[list(k), t[0], t[1]] for k, t in sorted(self.times.items(), key=lambda kv: repr(kv[0]))],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TabularRiskModel":
        if d.get("format") != FORMAT or int(d.get("version", 0)) != VERSION:
            raise ValueError("unsupported risk model file")
        m = cls(d["margin_edges"], d["alpha"], d["min_count"])
        for level, rows in enumerate(d["levels"]):
            for k, s, n in rows:
                m.counts[level][tuple(k)] = [int(s), int(n)]
        for k, total, n in d["times"]:
            m.times[tuple(k)] = [float(total), int(n)]
        return m

    def save(self, path: Union[str, Path]) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1, sort_keys=True))

    @classmethod
    def load(cls, path: Union[str, Path]) -> "TabularRiskModel":
        return cls.from_dict(json.loads(Path(path).read_text()))


def fit_risk_model(log: Iterable[OutcomeRecord], margin_edges: Sequence[float] = DEFAULT_MARGIN_EDGES,
                   alpha: float = 1.0, min_count: int = 30) -> TabularRiskModel:
    records = list(log)
    if not records:
        raise InsufficientData("empty outcome log")
    n_succ = sum(r.success for r in records)
    if n_succ == 0 or n_succ == len(records):
        raise InsufficientData("log must contain both successes and failures")
    model = TabularRiskModel(margin_edges, alpha, min_count)
    for r in records:
        model.add(r.features, r.success, r.cycle_time)
    return model


def brier_score(y: Sequence[float], p: Sequence[float]) -> float:
    y = np.asarray(y, dtype=float)
    p = np.asarray(p, dtype=float)
    return float(np.mean((y - p) ** 2))


def score_log(model: RiskModel, log: Iterable[OutcomeRecord]) -> dict:
    records = list(log)
    if not records:
        return {"n": 0}
    y = np.array([r.success for r in records], dtype=float)
    p = np.array([model.predict_success(r.features) for r in records])
    base = float(y.mean())
    return {
        "n": len(records),
        "success_rate": base,
        "mean_predicted": float(p.mean()),
        "brier": brier_score(y, p),
        "brier_constant": brier_score(y, np.full_like(y, base)),
    }
