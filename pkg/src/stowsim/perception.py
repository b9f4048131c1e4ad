"""Perceived bin state: a layered orthographic front-view grid per bin.

The learned depth/segmentation stack is replaced by direct rasterisation of
the ground truth with sampled width error, lip occlusion and instance merges.
Bands are drawn into their own layer and never hide items.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import ndimage

from .model import BinState

CELL_MM = 10


@dataclass(frozen=True)
class PerceptionNoise:
    item_width_bias: float = 0.0
    item_width_std: float = 0.0
    occlusion_below_lip_prob: float = 0.0
    segmentation_merge_prob: float = 0.0

    def __post_init__(self):
        if self.item_width_std < 0:
            raise ValueError("item_width_std must be >= 0")
        for p in (self.occlusion_below_lip_prob, self.segmentation_merge_prob):
            if not 0.0 <= p <= 1.0:
                raise ValueError("probabilities must lie in [0, 1]")


@dataclass
class MultiMask:
    bin_mask: np.ndarray            # bool (rows, cols); row 0 is the top of the bin
    item_instance_mask: np.ndarray  # int32, 0 = no item, instance ids start at 1
    band_mask: np.ndarray           # bool
    depth_layer: np.ndarray         # float mm from the front face
    cell_size: int = CELL_MM
    bin_depth: float = 0.0

    def __post_init__(self):
        shape = self.bin_mask.shape
        for layer in (self.item_instance_mask, self.band_mask, self.depth_layer):
            if layer.shape != shape:
                raise ValueError("multi-mask layers must share dimensions")

    @property
    def shape(self) -> tuple[int, int]:
        return self.bin_mask.shape

    def instance_ids(self) -> list[int]:
        ids = np.unique(self.item_instance_mask)
        return [int(i) for i in ids if i > 0]

    def bin_bbox(self) -> tuple[slice, slice]:
        if self.bin_mask.all():
            return slice(0, self.bin_mask.shape[0]), slice(0, self.bin_mask.shape[1])
        rows = np.flatnonzero(self.bin_mask.any(axis=1))
        cols = np.flatnonzero(self.bin_mask.any(axis=0))
        if rows.size == 0:
            return slice(0, 0), slice(0, 0)
        return slice(rows[0], rows[-1] + 1), slice(cols[0], cols[-1] + 1)

    def bin_width_mm(self) -> float:
        _, cs = self.bin_bbox()
        return float((cs.stop - cs.start) * self.cell_size)

    @classmethod
    def empty(cls, rows: int, cols: int, cell_size: int = CELL_MM, bin_depth: float = 0.0) -> "MultiMask":
        return cls(
            bin_mask=np.ones((rows, cols), dtype=bool),
            item_instance_mask=np.zeros((rows, cols), dtype=np.int32),
            band_mask=np.zeros((rows, cols), dtype=bool),
            depth_layer=np.full((rows, cols), float(bin_depth or 1.0)),
            cell_size=cell_size,
            bin_depth=float(bin_depth or 1.0),
        )


@dataclass(frozen=True)
class Box:
    instance_id: int
    x: float
    y: float
    width: float
    height: float
    angle: float = 0.0


def _cells(mm: float, cs: int) -> int:
    return int(math.floor(mm / cs + 0.5))


def render_multimask(bin: BinState, noise: PerceptionNoise, rng: Optional[np.random.Generator] = None,
                     cell_size: int = CELL_MM) -> MultiMask:
    """Rasterise ``bin`` into a noisy front-view multi-mask.

    Noise is drawn as fixed-size blocks per bin (width error, occlusion flag,
    occlusion cut, merge flag for every placement), so the output is a pure
    function of the generator state.
    """
    if rng is None:
        rng = np.random.default_rng(0)
    rows = max(1, _cells(bin.height, cell_size))
    cols = max(1, _cells(bin.width, cell_size))
    mask = MultiMask.empty(rows, cols, cell_size, bin.depth)
    ps = bin.placements
    n = len(ps)
    if n:
        tx0 = np.array([p.x for p in ps], dtype=float)
        tx1 = tx0 + np.array([p.extent for p in ps], dtype=float)
        vert = np.array([float(p.item.vertical(p.orientation)) for p in ps])
        depth = np.array([p.depth_offset for p in ps], dtype=float)
        x0, x1 = tx0.copy(), tx1.copy()
        if noise.item_width_std > 0 or noise.item_width_bias != 0:
            err = noise.item_width_bias + noise.item_width_std * rng.standard_normal(n)
            x0 -= 0.5 * err
            x1 += 0.5 * err
        keep = np.ones(n, dtype=bool)
        if noise.occlusion_below_lip_prob > 0:
            occl = rng.random(n) < noise.occlusion_below_lip_prob
            cut = rng.random(n) * 0.5
            keep &= ~(occl & (vert <= 2 * bin.lip_height))
            x0 = np.where(occl, x0 + cut * (x1 - x0), x0)
        merge = (rng.random(n) < noise.segmentation_merge_prob) if noise.segmentation_merge_prob > 0 else None

        keep_l = np.flatnonzero(keep).tolist()
        X0, X1, V, D, T0, T1 = (x0.tolist(), x1.tolist(), vert.tolist(), depth.tolist(),
                                tx0.tolist(), tx1.tolist())
        M = merge.tolist() if merge is not None else None
        spans = []  # perceived [x0, x1, vertical, depth, true_x1]
        for i in keep_l:
            if spans and M is not None and M[i] and T0[i] - spans[-1][4] <= cell_size:
                prev = spans[-1]
                prev[0] = min(prev[0], X0[i])
                prev[1] = max(prev[1], X1[i])
                prev[2] = max(prev[2], V[i])
                prev[3] = min(prev[3], D[i])
                prev[4] = T1[i]
            else:
                spans.append([X0[i], X1[i], V[i], D[i], T1[i]])

        inst = mask.item_instance_mask
        dl = mask.depth_layer
        next_id = 1
        painted = 0  # columns [0, painted) may hold earlier spans
        floor = math.floor
        for sx0, sx1, v, dep, _ in spans:
            c0 = min(max(int(floor(sx0 / cell_size + 0.5)), 0), cols)
            c1 = min(max(int(floor(sx1 / cell_size + 0.5)), 0), cols)
            h = min(max(int(floor(v / cell_size + 0.5)), 1), rows)
            if c1 <= c0:
                continue
            if c0 >= painted:
                inst[rows - h:, c0:c1] = next_id
                dl[rows - h:, c0:c1] = max(dep, 1.0)
            else:
                region = inst[rows - h:, c0:c1]
                free = region == 0
                if not free.any():
                    continue
                region[free] = next_id
                dl[rows - h:, c0:c1][free] = max(dep, 1.0)
            painted = max(painted, c1)
            next_id += 1

    for band in bin.band_segments:
        r = rows - 1 - min(max(_cells(band.y, cell_size), 0), rows - 1)
        mask.band_mask[r, :] = True
    return mask


def perceived_items(mask: MultiMask) -> list[Box]:
    """One axis-aligned box per instance id, in mm."""
    cs = mask.cell_size
    out = []
    slices = ndimage.find_objects(mask.item_instance_mask)
    for idx, sl in enumerate(slices, start=1):
        if sl is None:
            continue
        rs, cs_ = sl
        out.append(Box(idx, cs_.start * cs, rs.start * cs,
                       (cs_.stop - cs_.start) * cs, (rs.stop - rs.start) * cs))
    return out


def dump_pgm(layer: np.ndarray, maxval: Optional[int] = None) -> str:
    """Plain-text PGM (P2) rendering of one layer."""
    arr = np.asarray(layer)
    if arr.dtype == bool:
        arr = arr.astype(np.int64)
    arr = np.rint(arr).astype(np.int64)
    if maxval is None:
        maxval = max(1, int(arr.max(initial=0)))
    rows, cols = arr.shape
    lines = ["P2", f"{cols} {rows}", str(maxval)]
    lines += [" ".join(str(int(v)) for v in row) for row in arr]
    return "\n".join(lines) + "\n"


def load_pgm(text: str) -> np.ndarray:
    tokens = [t for line in text.splitlines() if not line.startswith("#") for t in line.split()]
    if not tokens or tokens[0] != "P2":
        raise ValueError("not a plain PGM grid")
    cols, rows = int(tokens[1]), int(tokens[2])
    vals = np.array([int(t) for t in tokens[4:4 + rows * cols]], dtype=np.int64)
    return vals.reshape(rows, cols)


def dump_multimask(mask: MultiMask) -> dict[str, str]:
    return {
        "bin": dump_pgm(mask.bin_mask, 1),
        "items": dump_pgm(mask.item_instance_mask),
        "bands": dump_pgm(mask.band_mask, 1),
        "depth": dump_pgm(mask.depth_layer),
    }
