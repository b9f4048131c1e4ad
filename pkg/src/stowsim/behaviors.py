"""Execution of the five bin-manipulation behaviours.

Each execution has a deterministic geometric phase (plank consolidation or the
existing gap), a hard kinesthetic/stall check, and a stochastic overlay drawn
from an :class:`OutcomeModel`.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .affordance import Affordance
from .errors import InvalidAffordance
from .model import BinState, Item, Orientation, Outcome, PLACED, apply_placement
from .outcomes import Family, OutcomeModel, margin_bucket


class BehaviorKind(str, enum.Enum):
    DIRECT_INSERT = "direct_insert"
    STACK = "stack"
    DIRECT_SWEEP = "direct_sweep"
    CORNER_SWEEP = "corner_sweep"
    ITEM_PUSH_SWEEP = "item_push_sweep"


BEHAVIOR_ORDER = tuple(BehaviorKind)
SWEEPS = (BehaviorKind.DIRECT_SWEEP, BehaviorKind.CORNER_SWEEP, BehaviorKind.ITEM_PUSH_SWEEP)
INSERTS = (BehaviorKind.DIRECT_INSERT, BehaviorKind.STACK)


def family(kind: BehaviorKind) -> Family:
    return Family.SWEEP if kind in SWEEPS else Family.INSERT


def orientation_for(kind: BehaviorKind) -> Orientation:
    return Orientation.STACKED if kind is BehaviorKind.STACK else Orientation.UPRIGHT


class BandEvent(str, enum.Enum):
    CLEAR = "clear"
    OVERLAP = "overlap"


@dataclass(frozen=True)
class Behavior:
    kind: BehaviorKind
    plank: Optional[Affordance] = None
    item_affordance: Optional[Affordance] = None
    sweep_direction: int = 1   # +1: plank at the left wall, items pushed right

    def __post_init__(self):
        if family(self.kind) is Family.SWEEP and self.plank is None:
            raise ValueError(f"{self.kind.value} needs a plank affordance")
        if family(self.kind) is Family.INSERT and self.plank is not None:
            raise ValueError(f"{self.kind.value} does not use the plank")
        if self.sweep_direction not in (1, -1):
            raise ValueError("sweep_direction must be +1 or -1")

    @property
    def family(self) -> Family:
        return family(self.kind)


@dataclass(frozen=True)
class EngineParams:
    force_cap_g: float = 2500.0      # heavier items do not move under the plank
    sensor_noise_mm: float = 0.0     # kinesthetic created-space measurement noise
    gripper_noise_mm: float = 0.0    # encoder noise on the in-hand width
    push_depth_mm: float = 60.0      # item-push displacement along depth


@dataclass
class ExecutionResult:
    outcome: Outcome
    cycle_time: float
    created_space: Optional[float]
    true_space: float
    item_retained: bool
    bin_after: BinState
    band_overlap: bool = False
    margin: float = 0.0
    gate: Optional[str] = None       # "kinesthetic" or "stall" when the hard check failed
    gripper_width: float = 0.0
    lost_items: list[Item] = field(default_factory=list)

    @property
    def placed(self) -> bool:
        return self.outcome in PLACED


def consolidate(bin: BinState, direction: int, force_cap_g: float) -> tuple[BinState, tuple[float, float]]:
    """Push movable items away from the plank wall, compressing each to its limit.

    The plank stops at the first item it cannot move, so items beyond it are
    untouched. Returns the new bin and the created free interval.
    """
    ps = list(bin.placements)
    W = float(bin.width)
    if direction == 1:
        k = next((i for i, p in enumerate(ps) if p.item.mass > force_cap_g), len(ps))
        movable, rest = ps[:k], ps[k:]
        cursor = rest[0].x if rest else W
        moved = []
        for p in reversed(movable):
            ext = p.min_extent
            cursor -= ext
            moved.append(p.moved(cursor, ext))
        moved.reverse()
        new = moved + rest
        gap = (0.0, max(0.0, cursor))
    else:
        k = next((i for i in range(len(ps) - 1, -1, -1) if ps[i].item.mass > force_cap_g), -1)
        rest, movable = ps[:k + 1], ps[k + 1:]
        cursor = rest[-1].end if rest else 0.0
        moved = []
        for p in movable:
            ext = p.min_extent
            moved.append(p.moved(cursor, ext))
            cursor += ext
        new = rest + moved
        gap = (min(W, cursor), W)
    return bin.with_placements(new), gap


def measure_created_space(bin_before: BinState, sweep: Behavior, force_cap_g: float = EngineParams.force_cap_g,
                          noise_std: float = 0.0, rng: Optional[np.random.Generator] = None) -> float:
    if sweep.family is not Family.SWEEP:
        raise ValueError("created space is only measured by sweep behaviours")
    _, (a, b) = consolidate(bin_before, sweep.sweep_direction, force_cap_g)
    gap = b - a
    if noise_std > 0:
        gap += float((rng or np.random.default_rng()).normal(0.0, noise_std))
    return max(0.0, gap)


def band_event(rng: np.random.Generator, model: OutcomeModel) -> BandEvent:
    return BandEvent.OVERLAP if rng.random() < model.band_overlap_rate else BandEvent.CLEAR


def _check_affordance(aff: Optional[Affordance], bin: BinState) -> None:
    if aff is None:
        return
    if not (-1e-6 <= aff.x0 and aff.x1 <= bin.width + 1e-6 and 0 <= aff.y <= bin.height):
        raise InvalidAffordance(f"affordance at x={aff.x} outside bin {bin.bin_id}")


def _push_wall_item(bin: BinState, direction: int, push_mm: float) -> BinState:
    if not bin.placements:
        return bin
    ps = list(bin.placements)
    i = 0 if direction == 1 else len(ps) - 1
    p = ps[i]
    room = max(0.0, bin.depth - p.item.depth - p.depth_offset)
    ps[i] = replace(p, depth_offset=p.depth_offset + min(push_mm, room))
    return bin.with_placements(ps)


def execute(behavior: Behavior, item: Item, bin: BinState, model: OutcomeModel,
            rng: np.random.Generator, params: EngineParams = EngineParams()) -> ExecutionResult:
    _check_affordance(behavior.plank, bin)
    _check_affordance(behavior.item_affordance, bin)
    orient = orientation_for(behavior.kind)
    ext = float(item.extent(orient))
    fam = behavior.family

    created = None
    work = bin
    if fam is Family.SWEEP:
        if behavior.kind is BehaviorKind.ITEM_PUSH_SWEEP:
            work = _push_wall_item(work, behavior.sweep_direction, params.push_depth_mm)
        work, (a, b) = consolidate(work, behavior.sweep_direction, params.force_cap_g)
        true_space = b - a
        created = true_space
        if params.sensor_noise_mm > 0:
            created += float(rng.normal(0.0, params.sensor_noise_mm))
        created = max(0.0, created)
        x_place = b - ext if behavior.sweep_direction == 1 else a
    else:
        aff = behavior.item_affordance
        centre = aff.x if aff is not None else 0.5 * bin.width
        a, b = bin.gap_at(centre)
        true_space = b - a
        want = aff.x0 if aff is not None else a
        x_place = min(max(want, a), b - ext)

    gate = None
    if created is not None and created < ext:
        gate = "kinesthetic"
    elif true_space < ext:
        gate = "stall"

    overlap = band_event(rng, model) is BandEvent.OVERLAP
    margin = true_space - ext
    if gate is not None:
        outcome = Outcome.UNPRODUCTIVE
    else:
        outcome = model.draw(rng, behavior.kind.value, fam.value, margin_bucket(margin),
                             item.fragility_class.value, overlap)

    lost: list[Item] = []
    retained = outcome is Outcome.UNPRODUCTIVE
    after = work
    if outcome in PLACED:
        after = apply_placement(work, item, x_place, orient)
    elif outcome is Outcome.AMNESTY:
        lost.append(item)
        if work.placements and rng.random() < model.bin_item_amnesty_share:
            j = int(rng.integers(len(work.placements)))
            lost.append(work.placements[j].item)
            after = work.with_placements(p for i, p in enumerate(work.placements) if i != j)

    grip = item.width * (1.0 - item.compressibility)
    if params.gripper_noise_mm > 0:
        grip += float(rng.normal(0.0, params.gripper_noise_mm))
    cycle = model.cycle_time(rng, fam.value, outcome)
    return ExecutionResult(outcome, cycle, created, true_space, retained, after, overlap,
                           margin, gate, max(0.0, grip), lost)
