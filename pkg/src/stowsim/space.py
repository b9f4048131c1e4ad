"""Free-space estimates from a multi-mask.

Three estimates are combined: the widest directly usable free rectangle, the
rigid-body sweep estimate (bin width minus box widths) and, when the last robot
stow in the bin was a plank sweep, the kinesthetically measured remainder.
"""
from __future__ import annotations

import dataclasses
import enum
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .perception import MultiMask, perceived_items


class SpaceSource(str, enum.Enum):
    CAT1 = "cat1"
    CAT2A = "cat2a"
    CAT2B = "cat2b"


@dataclass(frozen=True)
class SpaceEstimate:
    directly_usable: float
    rigid_sweep: float
    kinesthetic: Optional[float] = None
    clamped: bool = False

    def __post_init__(self):
        vals = [self.directly_usable, self.rigid_sweep]
        if self.kinesthetic is not None:
            vals.append(self.kinesthetic)
        if min(vals) < 0:
            raise ValueError("space estimates must be non-negative")

    @property
    def final(self) -> float:
        if self.kinesthetic is not None:
            return self.kinesthetic
        return max(self.directly_usable, self.rigid_sweep)

    @property
    def source(self) -> SpaceSource:
        if self.kinesthetic is not None:
            return SpaceSource.CAT2B
        if self.directly_usable > self.rigid_sweep:
            return SpaceSource.CAT1
        return SpaceSource.CAT2A


def obstacle_grid(mask: MultiMask, midpoint_rule: bool = True) -> np.ndarray:
    """Cells that block a direct insert.

    Only item pixels between the front face and the bin's depth midpoint count
    when ``midpoint_rule`` is set.
    """
    items = mask.item_instance_mask > 0
    if midpoint_rule and mask.bin_depth > 0:
        items = items & (mask.depth_layer <= 0.5 * mask.bin_depth)
    return ~mask.bin_mask | items


def free_run_heights(free: np.ndarray) -> np.ndarray:
    """h[r, c] = number of consecutive free cells in column c ending at row r from above."""
    h = np.zeros(free.shape, dtype=np.int32)
    run = np.zeros(free.shape[1], dtype=np.int32)
    for r in range(free.shape[0]):
        run = (run + 1) * free[r]
        h[r] = run
    return h


def longest_run_per_row(cond: np.ndarray) -> np.ndarray:
    best = np.zeros(cond.shape[0], dtype=np.int32)
    run = np.zeros(cond.shape[0], dtype=np.int32)
    for c in range(cond.shape[1]):
        run = (run + 1) * cond[:, c]
        np.maximum(best, run, out=best)
    return best


def longest_true_run(v: np.ndarray) -> int:
    """Length of the longest run of True in a 1-D boolean array."""
    return max(map(len, np.asarray(v, dtype=bool).tobytes().split(b"\x00")))


def widest_free_rect_cells(free: np.ndarray, min_height: int) -> int:
    """Widest axis-aligned all-free rectangle at least ``min_height`` rows tall."""
    if min_height <= 0 or free.size == 0 or min_height > free.shape[0]:
        return 0
    if min_height == free.shape[0]:
        return longest_true_run(free.all(axis=0))
    h = free_run_heights(free)
    return int(longest_run_per_row(h >= min_height).max(initial=0))


def max_width_by_height(free: np.ndarray) -> np.ndarray:
    """out[k] = widest free rectangle at least k rows tall (out[0] unused)."""
    h = free_run_heights(free)
    out = np.zeros(free.shape[0] + 1, dtype=np.int32)
    for k in range(1, free.shape[0] + 1):
        out[k] = longest_run_per_row(h >= k).max(initial=0)
    return out


def estimate_cat1(mask: MultiMask, min_height_cells: Optional[int] = None) -> float:
    """Width in mm of the widest free rectangle spanning the insertion height.

    The insertion height defaults to the full height of the bin region.
    """
    rs, cs = mask.bin_bbox()
    if rs.stop <= rs.start:
        return 0.0
    free = ~obstacle_grid(mask)[rs, cs]
    height = (rs.stop - rs.start) if min_height_cells is None else min_height_cells
    return float(widest_free_rect_cells(free, height) * mask.cell_size)


def estimate_cat2a(mask: MultiMask) -> float:
    boxes = perceived_items(mask)
    return max(0.0, mask.bin_width_mm() - sum(b.width for b in boxes))


def estimate_space(mask: MultiMask, kinesthetic: Optional[float] = None) -> SpaceEstimate:
    return SpaceEstimate(estimate_cat1(mask), estimate_cat2a(mask), kinesthetic)


def update_kinesthetic(prev: SpaceEstimate, created_space: float, stowed_item_width: float) -> SpaceEstimate:
    """Remaining space after a sweep: created space minus the stowed width."""
    raw = created_space - stowed_item_width
    return dataclasses.replace(prev, kinesthetic=max(0.0, raw), clamped=raw < 0)
