"""Match planning: feasible {behaviour, item, bin} tuples and how to pick one.

Two planners share the feasible set: a rule-based one ranking behaviours by
family success and packing the largest item into the smallest space, and a
risk-model one maximising expected units-per-hour with epsilon exploration.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import NamedTuple, Optional, Sequence

import numpy as np

from .affordance import (Affordance, AffordanceKind, CostMap, build_costmap, costmap_from_obstacles,
                         fill_above, free_window_exists, generate_affordance, kernel_cells)
from .behaviors import BEHAVIOR_ORDER, Behavior, BehaviorKind, family
from .errors import DegenerateClock, ModelUnavailable
from .model import BinState, BufferWall, Features, Fragility, Item, Pod, WorkcellClock
from .outcomes import Family
from .perception import MultiMask, PerceptionNoise, render_multimask
from .risk import FAMILY_PRIORS, RiskModel
from .space import SpaceEstimate, estimate_cat1, estimate_cat2a, longest_true_run

log = logging.getLogger(__name__)

SECONDS_PER_HOUR = 3600.0
CORNER_KERNEL_MM = (40.0, 20.0)


# ----------------------------------------------------------------------------
# perceived per-bin state


@dataclass
class BinView:
    """What the planner knows about one bin; costmaps and plank poses are lazy."""

    bin_id: str
    row: int
    width: int
    opening: int
    depth: int
    mask: MultiMask
    estimate: SpaceEstimate
    fill: float = 0.0
    plank_strip_cells: int = 6
    _poses: dict = field(default_factory=dict)
    _item_blocked: Optional[np.ndarray] = None
    _free_run: Optional[int] = None
    _item_costmap: Optional[CostMap] = None
    _plank_kinds: Optional[frozenset] = None
    _planks: Optional[dict] = None

    @property
    def item_blocked(self) -> np.ndarray:
        if self._item_blocked is None:
            self._item_blocked = ~self.mask.bin_mask | fill_above(self.mask.item_instance_mask > 0)
        return self._item_blocked

    @property
    def item_costmap(self) -> CostMap:
        if self._item_costmap is None:
            self._item_costmap = build_costmap(self.mask, AffordanceKind.ITEM_INSERT)
        return self._item_costmap

    def insert_pose_exists(self, w_mm: float, h_mm: float) -> bool:
        cs = self.mask.cell_size
        key = (kernel_cells(w_mm, cs), kernel_cells(h_mm, cs))
        if self._free_run is None:
            b = self.item_blocked
            colmax = b.any(axis=0)
            self._free_run = longest_true_run(~colmax) if np.array_equal(colmax, b.all(axis=0)) else -1
        if self._free_run >= 0:
            return key[0] <= self._free_run and key[1] <= self.mask.shape[0]
        hit = self._poses.get(key)
        if hit is None:
            hit = free_window_exists(self.item_blocked, key[0], key[1])
            self._poses[key] = hit
        return hit

    def insert_affordance(self, w_mm: float, h_mm: float) -> Optional[Affordance]:
        return generate_affordance(self.item_costmap, (w_mm, h_mm), rotations=(0,))

    @property
    def plank_kinds(self) -> frozenset:
        if self._plank_kinds is None:
            self._plank_kinds = _plank_kinds(self.mask, self.plank_strip_cells)
        return self._plank_kinds

    @property
    def planks(self) -> dict:
        """Best plank pose and sweep direction per available sweep kind."""
        if self._planks is None:
            self._planks = _plank_affordances(self.mask, self.plank_strip_cells)
        return self._planks


def _sides(cols: int, strip: int):
    return ((1, 0, min(strip, cols), 0), (-1, max(0, cols - strip), cols, cols - 1))


def _pushable_wall_item(mask: MultiMask, wall_col: int) -> Optional[np.ndarray]:
    ids = mask.item_instance_mask[:, wall_col]
    ids = ids[ids > 0]
    if ids.size == 0:
        return None
    cells = mask.item_instance_mask == int(ids[-1])
    if mask.depth_layer[cells].min() > 0.5 * mask.bin_depth:
        return None
    return cells


def _plank_kinds(mask: MultiMask, strip: int) -> frozenset:
    """Sweep kinds with at least one valid plank pose (no cost search)."""
    rows, cols = mask.shape
    items = mask.item_instance_mask > 0
    blocked = ~mask.bin_mask | items
    col_blocked = blocked.any(axis=0)
    kinds = set()
    for direction, c0, c1, wall in _sides(cols, strip):
        if not col_blocked[c0:c1].all():
            kinds.add(BehaviorKind.DIRECT_SWEEP)
            continue
        if not items[:, wall].any():
            continue
        cs = mask.cell_size
        ck = (kernel_cells(CORNER_KERNEL_MM[0], cs), kernel_cells(CORNER_KERNEL_MM[1], cs))
        if free_window_exists(blocked[:, c0:c1], *ck):
            kinds.add(BehaviorKind.CORNER_SWEEP)
        cells = _pushable_wall_item(mask, wall)
        if cells is not None and not (blocked & ~cells)[:, c0:c1].any(axis=0).all():
            kinds.add(BehaviorKind.ITEM_PUSH_SWEEP)
    return frozenset(kinds)


def _plank_affordances(mask: MultiMask, strip: int) -> dict:
    """Plank poses per sweep kind, searched in a strip next to each wall."""
    rows, cols = mask.shape
    cs = mask.cell_size
    plank_cm = build_costmap(mask, AffordanceKind.PLANK_INSERT)
    direct_kernel = (float(cs), float(rows * cs))
    best: dict = {}
    for direction, c0, c1, wall in _sides(cols, strip):
        sub = plank_cm.crop_cols(c0, c1)
        aff = generate_affordance(sub, direct_kernel, rotations=(0,))
        if aff is not None:
            best.setdefault(BehaviorKind.DIRECT_SWEEP, []).append((aff.cost, -direction, aff, direction))
            continue
        if not (mask.item_instance_mask[:, wall] > 0).any():
            continue
        aff = generate_affordance(sub, CORNER_KERNEL_MM, rotations=(0,))
        if aff is not None:
            best.setdefault(BehaviorKind.CORNER_SWEEP, []).append((aff.cost, -direction, aff, direction))
        cells = _pushable_wall_item(mask, wall)
        if cells is not None:
            obst = ~mask.bin_mask | ((mask.item_instance_mask > 0) & ~cells)
            cleared = costmap_from_obstacles(obst, cs, AffordanceKind.PLANK_INSERT, "plank-push")
            aff = generate_affordance(cleared.crop_cols(c0, c1), direct_kernel, rotations=(0,))
            if aff is not None:
                best.setdefault(BehaviorKind.ITEM_PUSH_SWEEP, []).append((aff.cost, -direction, aff, direction))
    out = {}
    for kind, cands in best.items():
        cands.sort(key=lambda c: (c[0], c[1]))
        out[kind] = (cands[0][2], cands[0][3])
    return out


def perceive_bin(bin: BinState, noise: PerceptionNoise, rng: np.random.Generator,
                 kinesthetic: Optional[float] = None, plank_strip_cells: int = 6) -> BinView:
    mask = render_multimask(bin, noise, rng)
    est = SpaceEstimate(estimate_cat1(mask), estimate_cat2a(mask), kinesthetic)
    return BinView(bin.bin_id, bin.row, bin.width, bin.opening, bin.depth, mask, est,
                   bin.fill_fraction(), plank_strip_cells)


# ----------------------------------------------------------------------------
# match tuples


FRAGILITIES = tuple(Fragility)
SOURCES = ("cat1", "cat2a", "cat2b")
KIND_INDEX = {k: i for i, k in enumerate(BEHAVIOR_ORDER)}
FRAG_INDEX = {f: i for i, f in enumerate(FRAGILITIES)}


class MatchTuple(NamedTuple):
    kind: BehaviorKind
    item_id: int
    bin_id: str
    features: Features
    extent: float

    @property
    def family(self) -> Family:
        return family(self.kind)


def resolve_behavior(t: MatchTuple, view: BinView) -> Behavior:
    """Concrete behaviour with its optimised affordance for execution."""
    if t.family is Family.SWEEP:
        plank, direction = view.planks[t.kind]
        return Behavior(t.kind, plank=plank, sweep_direction=direction)
    if t.kind is BehaviorKind.DIRECT_INSERT:
        aff = view.insert_affordance(t.extent, t.features.height)
    else:
        aff = view.insert_affordance(t.extent, t.features.width)
    return Behavior(t.kind, item_affordance=aff)


_FIELDS = ("kind", "item_id", "bin", "extent", "est", "width", "height", "depth", "frag", "fill", "src")


@dataclass
class CandidateSet:
    """Column store of match tuples; ``bin`` indexes into the sorted ``bins`` list."""

    kind: np.ndarray
    item_id: np.ndarray
    bin: np.ndarray
    extent: np.ndarray
    est: np.ndarray
    width: np.ndarray
    height: np.ndarray
    depth: np.ndarray
    frag: np.ndarray
    fill: np.ndarray
    src: np.ndarray
    bins: list

    def __len__(self) -> int:
        return int(self.kind.shape[0])

    def __bool__(self) -> bool:
        return len(self) > 0

    @property
    def margin(self) -> np.ndarray:
        return self.est - self.extent

    def features(self, i: int) -> Features:
        return Features(BEHAVIOR_ORDER[self.kind[i]].value, float(self.est[i] - self.extent[i]),
                        float(self.est[i]), float(self.width[i]), float(self.height[i]),
                        float(self.depth[i]), FRAGILITIES[self.frag[i]].value, float(self.fill[i]),
                        SOURCES[self.src[i]])

    def __getitem__(self, i: int) -> MatchTuple:
        if i < 0:
            i += len(self)
        return MatchTuple(BEHAVIOR_ORDER[self.kind[i]], int(self.item_id[i]), self.bins[self.bin[i]],
                          self.features(i), float(self.extent[i]))

    def __iter__(self):
        return (self[i] for i in range(len(self)))

    def take(self, idx) -> "CandidateSet":
        return CandidateSet(*(getattr(self, f)[idx] for f in _FIELDS), bins=self.bins)

    @classmethod
    def empty(cls) -> "CandidateSet":
        z = np.zeros(0)
        zi = np.zeros(0, dtype=np.int64)
        return cls(zi, zi, zi, z, z, z, z, z, zi, z, zi, [])

    @classmethod
    def concat(cls, sets: Sequence["CandidateSet"]) -> "CandidateSet":
        sets = [c for c in sets if len(c)]
        if not sets:
            return cls.empty()
        bins = sorted({b for c in sets for b in c.bins})
        pos = {b: i for i, b in enumerate(bins)}
        remapped = [np.array([pos[b] for b in c.bins], dtype=np.int64)[c.bin] for c in sets]
        cols = {f: np.concatenate([getattr(c, f) for c in sets]) for f in _FIELDS if f != "bin"}
        return cls(bin=np.concatenate(remapped), bins=bins, **cols)

    @classmethod
    def from_tuples(cls, tuples: Sequence[MatchTuple]) -> "CandidateSet":
        tuples = list(tuples)
        if not tuples:
            return cls.empty()
        bins = sorted({t.bin_id for t in tuples})
        pos = {b: i for i, b in enumerate(bins)}
        f = [t.features for t in tuples]
        return cls(
            kind=np.array([KIND_INDEX[t.kind] for t in tuples]),
            item_id=np.array([t.item_id for t in tuples], dtype=np.int64),
            bin=np.array([pos[t.bin_id] for t in tuples]),
            extent=np.array([t.extent for t in tuples], dtype=float),
            est=np.array([x.est_space for x in f], dtype=float),
            width=np.array([x.width for x in f], dtype=float),
            height=np.array([x.height for x in f], dtype=float),
            depth=np.array([x.depth for x in f], dtype=float),
            frag=np.array([FRAG_INDEX[Fragility(x.fragility)] for x in f]),
            fill=np.array([x.fill for x in f], dtype=float),
            src=np.array([SOURCES.index(x.source) for x in f]),
            bins=bins,
        )


def as_candidates(tuples) -> CandidateSet:
    return tuples if isinstance(tuples, CandidateSet) else CandidateSet.from_tuples(tuples)


@dataclass(frozen=True)
class FeasibilityRules:
    slack_mm: float = 60.0
    creation_allowance_mm: dict = field(default_factory=dict)
    heavy_mass_g: float = 1500.0
    heavy_min_row: int = 2


def _cells(mm: np.ndarray, cs: int) -> np.ndarray:
    return np.maximum(1, np.ceil(mm / cs - 1e-9)).astype(np.int64)


def _pose_matrix(views: Sequence[BinView], kw_mm: np.ndarray, kh_mm: np.ndarray,
                 cand: np.ndarray) -> np.ndarray:
    """Insert-pose existence for every (view, item) candidate."""
    cs = views[0].mask.cell_size
    for v in views:
        v.insert_pose_exists(1.0, 1.0)  # fills the free-column summary
    run = np.array([v._free_run for v in views])[:, None]
    rows = np.array([v.mask.shape[0] for v in views])[:, None]
    out = cand & (_cells(kw_mm, cs)[None, :] <= run) & (_cells(kh_mm, cs)[None, :] <= rows)
    for vi in np.flatnonzero(run[:, 0] < 0):
        for i in np.flatnonzero(cand[vi]):
            out[vi, i] = views[vi].insert_pose_exists(kw_mm[i], kh_mm[i])
    return out


def feasible_set(items: Sequence[Item], views: Sequence[BinView],
                 rules: FeasibilityRules = FeasibilityRules()) -> CandidateSet:
    """Vectorised feasibility over every (bin, item, behaviour) combination."""
    vs = sorted(views, key=lambda v: v.bin_id)
    if not len(items) or not vs:
        return CandidateSet.empty()
    w = np.array([float(it.manifest_width) for it in items])
    h = np.array([float(it.height) for it in items])
    d = np.array([float(it.depth) for it in items])
    m = np.array([float(it.mass) for it in items])
    ids = np.array([it.id for it in items], dtype=np.int64)
    frag = np.array([FRAG_INDEX[it.fragility_class] for it in items])
    cat1 = np.array([v.estimate.directly_usable for v in vs])[:, None]
    final = np.array([v.estimate.final for v in vs])[:, None]
    src_final = np.array([SOURCES.index(v.estimate.source.value) for v in vs])
    fills = np.array([v.fill for v in vs])
    opening = np.array([float(v.opening) for v in vs])[:, None]
    high = np.array([v.row >= rules.heavy_min_row for v in vs])[:, None]
    base = (d[None, :] <= np.array([float(v.depth) for v in vs])[:, None]) & ~(high & (m > rules.heavy_mass_g)[None, :])
    upright = base & (h[None, :] <= opening)
    allow = rules.creation_allowance_mm
    slack = rules.slack_mm

    parts = []
    for k, kind in enumerate(BEHAVIOR_ORDER):
        extra = allow.get(kind.value, 0.0)
        if kind is BehaviorKind.DIRECT_INSERT:
            ok = _pose_matrix(vs, w, h, upright & (cat1 + extra >= w[None, :] - slack))
            ext, space, src = w, cat1[:, 0], np.zeros(len(vs), dtype=np.int64)
        elif kind is BehaviorKind.STACK:
            ok = _pose_matrix(vs, h, w, base & (w[None, :] <= opening) & (cat1 + extra >= h[None, :] - slack))
            ext, space, src = h, cat1[:, 0], np.zeros(len(vs), dtype=np.int64)
        else:
            has = np.array([kind in v.plank_kinds for v in vs])[:, None]
            ok = has & upright & (final + extra >= w[None, :] - slack)
            ext, space, src = w, final[:, 0], src_final
        vi, ii = np.nonzero(ok)
        if vi.size:
            parts.append((np.full(vi.size, k), ids[ii], vi, ext[ii], space[vi], w[ii], h[ii], d[ii],
                          frag[ii], fills[vi], src[vi]))
    if not parts:
        return CandidateSet.empty()
    cols = [np.concatenate(c) for c in zip(*parts)]
    return CandidateSet(*cols, bins=[v.bin_id for v in vs])


def generate_feasible(buffer: BufferWall | Sequence[Item], pod: Pod | None,
                      views: dict[str, BinView], rules: FeasibilityRules = FeasibilityRules(),
                      extra_constraints: Sequence = ()) -> list[MatchTuple]:
    """All tuples passing geometric fit, business rules and affordance existence.

    ``extra_constraints`` are callables ``(item, view, kind) -> bool``.
    """
    items = buffer.items() if isinstance(buffer, BufferWall) else list(buffer)
    vs = list(views.values())
    if pod is not None:
        on_pod = {b.bin_id for b in pod.bins}
        vs = [v for v in vs if v.bin_id in on_pod]
    out = list(feasible_set(items, vs, rules))
    if extra_constraints:
        by_id = {it.id: it for it in items}
        out = [t for t in out if all(c(by_id[t.item_id], views[t.bin_id], t.kind) for c in extra_constraints)]
    return out


# ----------------------------------------------------------------------------
# expected units per hour


def uph_expectation(p, t_success, t_failure, T: float, N_s: float):
    """Expected UPH after one more attempt, vectorised over candidates."""
    p = np.asarray(p, dtype=float)
    d1 = T + np.asarray(t_success, dtype=float)
    d0 = T + np.asarray(t_failure, dtype=float)
    if np.any(d1 <= 0) or np.any(d0 <= 0):
        raise DegenerateClock("T + t must be positive")
    val = SECONDS_PER_HOUR * (p * (N_s + 1) / d1 + (1 - p) * N_s / d0)
    return float(val) if val.ndim == 0 else val


def expected_uph(t: MatchTuple, model: RiskModel, clock: WorkcellClock) -> float:
    f = t.features
    return uph_expectation(model.predict_success(f), model.predict_time(f, True),
                           model.predict_time(f, False), clock.T, clock.N_s)


def predict_arrays(model: RiskModel, cs: CandidateSet) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Success probability and both cycle times for every candidate."""
    batch = getattr(model, "predict_arrays", None)
    if batch is not None:
        return batch(cs.kind, cs.margin, cs.src, cs.frag)
    feats = [cs.features(i) for i in range(len(cs))]
    return (np.array([model.predict_success(f) for f in feats], dtype=float),
            np.array([model.predict_time(f, True) for f in feats], dtype=float),
            np.array([model.predict_time(f, False) for f in feats], dtype=float))


def kickout_uph(clock: WorkcellClock, kickout_s: float = 6.0, mean_insert_s: float = 10.87,
                success_rate: float = 0.8586) -> float:
    """Value of releasing the pod: a guaranteed next attempt after the transition."""
    d = kickout_s + mean_insert_s
    return uph_expectation(success_rate, d, d, clock.T, clock.N_s)


# ----------------------------------------------------------------------------
# planners


@dataclass
class Plan:
    tuples: list[MatchTuple]
    exploratory: bool = False
    values: list[float] = field(default_factory=list)
    kickout_value: Optional[float] = None

    def __len__(self) -> int:
        return len(self.tuples)

    def __iter__(self):
        return iter(self.tuples)

    def __getitem__(self, i):
        return self.tuples[i]


def _greedy(cs: CandidateSet, order: np.ndarray) -> list[int]:
    """Walk ``order`` keeping tuples whose item and bin are still unused."""
    n_bins = len(np.unique(cs.bin[order])) if order.size else 0
    used_items, used_bins, out = set(), set(), []
    items, bins = cs.item_id.tolist(), cs.bin.tolist()
    for i in order.tolist():
        it, b = items[i], bins[i]
        if it in used_items or b in used_bins:
            continue
        out.append(i)
        used_items.add(it)
        used_bins.add(b)
        if len(used_bins) == n_bins:
            break
    return out


def behavior_rank(priors: Optional[dict] = None) -> dict[BehaviorKind, int]:
    """Rank behaviours by family success rate; list order breaks ties."""
    pri = priors or FAMILY_PRIORS
    order = sorted(BEHAVIOR_ORDER, key=lambda k: (-pri[family(k).value][0], BEHAVIOR_ORDER.index(k)))
    return {k: i for i, k in enumerate(order)}


def plan_frequentist(tuples, estimates: Optional[dict] = None, margin_mm: float = 10.0,
                     priors: Optional[dict] = None) -> Plan:
    """Prune by margin, then per behaviour rank: largest item into the smallest space."""
    cs = as_candidates(tuples)
    if not len(cs):
        return Plan([])
    rank = behavior_rank(priors)
    rank_of = np.array([rank[k] for k in BEHAVIOR_ORDER])
    idx = np.flatnonzero(cs.extent <= cs.est - margin_mm)
    order = idx[np.lexsort((cs.item_id[idx], cs.bin[idx], cs.est[idx], -cs.extent[idx], rank_of[cs.kind[idx]]))]
    return Plan([cs[i] for i in _greedy(cs, order)])


def explore(tuples, rng: np.random.Generator) -> Plan:
    cs = as_candidates(tuples)
    return Plan([cs[int(rng.integers(len(cs)))]], exploratory=True)


def plan_learned(tuples, model: Optional[RiskModel], clock: WorkcellClock, epsilon: float,
                 rng: np.random.Generator, kickout_value: Optional[float] = None,
                 margin_mm: float = 10.0) -> Plan:
    """Greedy argmax of expected UPH; with probability epsilon a uniform exploratory pick."""
    cs = as_candidates(tuples)
    if model is None:
        log.warning("no risk model available; falling back to the rule-based plan")
        return plan_frequentist(cs, margin_mm=margin_mm)
    if epsilon > 0 and len(cs) and rng.random() < epsilon:
        return explore(cs, rng)
    if not len(cs):
        return Plan([], kickout_value=kickout_value)
    p, t1, t0 = predict_arrays(model, cs)
    ev = np.atleast_1d(uph_expectation(p, t1, t0, clock.T, clock.N_s))
    idx = np.arange(len(cs)) if kickout_value is None else np.flatnonzero(ev > kickout_value)
    order = idx[np.lexsort((cs.kind[idx], cs.item_id[idx], cs.bin[idx], -ev[idx]))]
    picked = _greedy(cs, order)
    return Plan([cs[i] for i in picked], values=[float(ev[i]) for i in picked], kickout_value=kickout_value)


def decide_kickout(plan: Plan, clock: WorkcellClock, model: Optional[RiskModel] = None,
                   kickout_s: float = 6.0, mean_insert_s: float = 10.87,
                   success_rate: float = 0.8586) -> bool:
    if len(plan) == 0:
        return True
    if plan.exploratory:
        return False
    kick = kickout_uph(clock, kickout_s, mean_insert_s, success_rate)
    values = plan.values
    if not values:
        if model is None:
            return False
        values = [expected_uph(t, model, clock) for t in plan]
    return all(v < kick for v in values)


class FrequentistPlanner:
    name = "frequentist"

    def __init__(self, margin_mm: float = 10.0, epsilon: float = 0.0):
        self.margin_mm = margin_mm
        self.epsilon = epsilon

    def plan(self, tuples, clock, rng, kickout_value=None) -> Plan:
        if self.epsilon > 0 and len(tuples) and rng.random() < self.epsilon:
            return explore(tuples, rng)
        return plan_frequentist(tuples, margin_mm=self.margin_mm)

    def kickout(self, plan: Plan, clock, **kw) -> bool:
        return len(plan) == 0


class LearnedPlanner:
    name = "learned"

    def __init__(self, model: Optional[RiskModel], epsilon: float = 0.0, margin_mm: float = 10.0):
        if not 0.0 <= epsilon <= 0.05:
            raise ValueError("exploration epsilon must lie in [0, 0.05]")
        self.model = model
        self.epsilon = epsilon
        self.margin_mm = margin_mm
        self.fallback = FrequentistPlanner(margin_mm)

    def plan(self, tuples, clock, rng, kickout_value=None) -> Plan:
        if self.model is None:
            return self.fallback.plan(tuples, clock, rng)
        return plan_learned(tuples, self.model, clock, self.epsilon, rng, kickout_value, self.margin_mm)

    def kickout(self, plan: Plan, clock, **kw) -> bool:
        if self.model is None:
            return len(plan) == 0
        return decide_kickout(plan, clock, self.model, **kw)


def require_model(model: Optional[RiskModel]) -> RiskModel:
    if model is None:
        raise ModelUnavailable("risk model not fitted")
    return model
