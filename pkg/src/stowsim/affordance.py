"""Cost maps and kernel-convolution affordances on a multi-mask.

Costs live on a dyadic grid (multiples of 2**-16) so that window sums are
exact in float64 regardless of summation order.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Iterable, Optional

import numpy as np
from scipy import ndimage

from .perception import MultiMask
from .space import longest_true_run

COST_SCALE = 1 << 16
MAX_COST = 1.0


class AffordanceKind(str, enum.Enum):
    PLANK_INSERT = "plank_insert"
    ITEM_INSERT = "item_insert"


@dataclass
class CostMap:
    cost: np.ndarray        # float64 in [0, 1]; obstacles are exactly 1.0
    clearance: np.ndarray   # Chebyshev cells to the nearest obstacle, 0 on obstacles
    cell_size: int
    task: AffordanceKind
    provenance: str = ""
    col_offset: int = 0

    @property
    def shape(self) -> tuple[int, int]:
        return self.cost.shape

    @property
    def blocked(self) -> np.ndarray:
        return self.cost >= MAX_COST

    def crop_cols(self, c0: int, c1: int) -> "CostMap":
        c0, c1 = max(0, c0), min(self.shape[1], c1)
        return CostMap(self.cost[:, c0:c1], self.clearance[:, c0:c1], self.cell_size,
                       self.task, self.provenance + f"|cols[{c0}:{c1}]", self.col_offset + c0)


@dataclass(frozen=True)
class Affordance:
    kind: AffordanceKind
    x: float          # footprint centre, mm from the left wall
    y: float          # footprint centre, mm from the top of the bin
    rotation: int     # 0 or 90
    kernel_w: float   # footprint in mm after rotation
    kernel_h: float
    margin: float     # clearance to the nearest obstacle, mm
    cost: float
    col: int = 0
    row: int = 0

    @property
    def x0(self) -> float:
        return self.x - 0.5 * self.kernel_w

    @property
    def x1(self) -> float:
        return self.x + 0.5 * self.kernel_w


def quantize_cost(c: np.ndarray) -> np.ndarray:
    return np.rint(np.asarray(c, dtype=np.float64) * COST_SCALE) / COST_SCALE


def fill_above(items: np.ndarray) -> np.ndarray:
    """Mark every cell above an occupied cell in the same column (row 0 is the top)."""
    return np.logical_or.accumulate(items[::-1], axis=0)[::-1]


def costmap_from_obstacles(obstacles: np.ndarray, cell_size: int, task: AffordanceKind,
                           provenance: str = "") -> CostMap:
    padded = np.pad(~obstacles, 1, constant_values=False)
    dist = ndimage.distance_transform_cdt(padded, metric="chessboard")[1:-1, 1:-1].astype(np.int32)
    cost = np.where(obstacles, MAX_COST, quantize_cost(1.0 / (1.0 + dist)))
    return CostMap(cost, np.where(obstacles, 0, dist), cell_size, task, provenance)


def build_costmap(mask: MultiMask, task: AffordanceKind = AffordanceKind.ITEM_INSERT) -> CostMap:
    """Item pixels and walls are obstacles; free cells cost 1/(1 + clearance).

    For item insertion the obstacle layer is edge-filled upward, since an item
    is inserted to the bin floor and cannot rest on top of another.
    """
    items = mask.item_instance_mask > 0
    prov = "items"
    if task is AffordanceKind.ITEM_INSERT:
        items = fill_above(items)
        prov += "+fill_above"
    obstacles = ~mask.bin_mask | items
    return costmap_from_obstacles(obstacles, mask.cell_size, task, prov + "+walls+chebyshev_dt")


def kernel_cells(mm: float, cell_size: int) -> int:
    return max(1, math.ceil(mm / cell_size - 1e-9))


def _window_sums(a: np.ndarray, kh: int, kw: int) -> np.ndarray:
    s = np.zeros((a.shape[0] + 1, a.shape[1] + 1), dtype=a.dtype)
    s[1:, 1:] = a.cumsum(0).cumsum(1)
    return s[kh:, kw:] - s[:-kh, kw:] - s[kh:, :-kw] + s[:-kh, :-kw]


def free_window_exists(blocked: np.ndarray, kw: int, kh: int) -> bool:
    """Whether some kh x kw window avoids every blocked cell."""
    rows, cols = blocked.shape
    if kw > cols or kh > rows:
        return False
    colmax = blocked.any(axis=0)
    if np.array_equal(colmax, blocked.all(axis=0)):
        # blocked cells form whole columns: only the free-column run matters
        return longest_true_run(~colmax) >= kw
    hits = _window_sums(blocked.astype(np.int32), kh, kw)
    return bool((hits == 0).any())


def pose_exists(costmap: CostMap, kw: int, kh: int) -> bool:
    return free_window_exists(costmap.blocked, kw, kh)


def generate_affordance(costmap: CostMap, kernel_dims: tuple[float, float],
                        rotations: Iterable[int] = (0, 90)) -> Optional[Affordance]:
    """Minimum summed-cost pose of a rectangular kernel over the cost map.

    Poses touching any cost-1.0 cell are invalid. Ties go to the lowest
    column, then the lowest row, then rotation 0.
    """
    cs = costmap.cell_size
    rows, cols = costmap.shape
    w, h = kernel_dims
    blocked = costmap.blocked.astype(np.int32)
    best = None  # (cost, col, row, rot, kw, kh)
    for rot in sorted(set(rotations)):
        kw, kh = (kernel_cells(w, cs), kernel_cells(h, cs))
        if rot == 90:
            kw, kh = kh, kw
        elif rot != 0:
            raise ValueError("rotations are restricted to 0 and 90 degrees")
        if kw > cols or kh > rows:
            continue
        hits = _window_sums(blocked, kh, kw)
        sums = _window_sums(costmap.cost, kh, kw)
        sums = np.where(hits == 0, sums, np.inf)
        # column-major argmin gives lowest column first, then lowest row
        flat = sums.T.ravel()
        k = int(np.argmin(flat))
        v = flat[k]
        if not np.isfinite(v):
            continue
        col, row = divmod(k, sums.shape[0])
        cand = (float(v), col, row, rot, kw, kh)
        if best is None or cand[:3] < best[:3]:
            best = cand
    if best is None:
        return None
    v, col, row, rot, kw, kh = best
    margin = (int(costmap.clearance[row:row + kh, col:col + kw].min()) - 1) * cs
    kind = costmap.task
    col_abs = col + costmap.col_offset
    return Affordance(kind, (col_abs + 0.5 * kw) * cs, (row + 0.5 * kh) * cs, rot,
                      kw * cs, kh * cs, float(max(0, margin)), v, col_abs, row)


def render_overlay(costmap: CostMap, aff: Optional[Affordance]) -> str:
    """Text grid: '#' obstacle, digits = cost decile, '@' affordance footprint."""
    rows, cols = costmap.shape
    chars = []
    for r in range(rows):
        line = []
        for c in range(cols):
            v = costmap.cost[r, c]
            line.append("#" if v >= MAX_COST else str(min(9, int(v * 10))))
        chars.append(line)
    if aff is not None:
        cs = costmap.cell_size
        kw, kh = int(round(aff.kernel_w / cs)), int(round(aff.kernel_h / cs))
        c0 = aff.col - costmap.col_offset
        for r in range(aff.row, aff.row + kh):
            for c in range(c0, c0 + kw):
                if 0 <= r < rows and 0 <= c < cols:
                    chars[r][c] = "@"
    return "\n".join("".join(line) for line in chars) + "\n"
