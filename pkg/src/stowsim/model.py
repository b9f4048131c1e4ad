"""Ground-truth world state: items, bins, pods, the buffer wall and the clock.

The packing world is one-dimensional along the bin width. Every placement is
an upright (or stacked) slab occupying ``[x, x + extent)``; heights and depths
only enter as feasibility constraints and when rendering masks.
"""
from __future__ import annotations

import dataclasses
import enum
import functools
from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple, Optional, Sequence

import numpy as np

from .errors import ConfigError, OverfullBin

EPS = 1e-9


class Fragility(str, enum.Enum):
    STANDARD = "standard"
    BOOK = "book"
    LIGHTWEIGHT_BOX = "lightweight_box"
    BAGGED_SOFT = "bagged_soft"


class Orientation(str, enum.Enum):
    UPRIGHT = "upright"
    STACKED = "stacked"


class Outcome(str, enum.Enum):
    SUCCESS = "success"
    UNPRODUCTIVE = "unproductive"
    AMNESTY = "amnesty"
    DAMAGE = "damage"
    OTHER = "other"


OUTCOMES: tuple[Outcome, ...] = tuple(Outcome)
DEFECTS = frozenset({Outcome.AMNESTY, Outcome.DAMAGE, Outcome.OTHER})
# outcomes that leave the grasped item inside the bin
PLACED = frozenset({Outcome.SUCCESS, Outcome.DAMAGE, Outcome.OTHER})


@dataclass(frozen=True)
class Item:
    id: int
    width: int
    height: int
    depth: int
    mass: int = 200
    compressibility: float = 0.0
    deformable: bool = False
    fragility_class: Fragility = Fragility.STANDARD
    manifest_dims_error: int = 0

    def __post_init__(self):
        if min(self.width, self.height, self.depth) <= 0:
            raise ConfigError(f"item {self.id}: dimensions must be positive")
        if not 0.0 <= self.compressibility < 1.0:
            raise ConfigError(f"item {self.id}: compressibility must lie in [0, 1)")

    @property
    def compressed_width(self) -> float:
        return self.width * (1.0 - self.compressibility)

    @property
    def manifest_width(self) -> int:
        """Width as known to the planner (manifest plus infeed imaging)."""
        return max(1, self.width + self.manifest_dims_error)

    def extent(self, orientation: Orientation = Orientation.UPRIGHT) -> int:
        """Rigid footprint along the bin width."""
        return self.height if orientation is Orientation.STACKED else self.width

    def vertical(self, orientation: Orientation = Orientation.UPRIGHT) -> int:
        return self.width if orientation is Orientation.STACKED else self.height


@dataclass(frozen=True)
class Placement:
    item: Item
    x: float
    extent: float
    orientation: Orientation = Orientation.UPRIGHT
    depth_offset: float = 0.0

    @property
    def end(self) -> float:
        return self.x + self.extent

    @property
    def center(self) -> float:
        return self.x + 0.5 * self.extent

    @property
    def rigid_extent(self) -> float:
        return float(self.item.extent(self.orientation))

    @property
    def min_extent(self) -> float:
        return self.rigid_extent * (1.0 - self.item.compressibility)

    @property
    def slack(self) -> float:
        """Remaining compression available from the current extent."""
        return max(0.0, self.extent - self.min_extent)

    def moved(self, x: float, extent: Optional[float] = None) -> "Placement":
        return dataclasses.replace(self, x=x, extent=self.extent if extent is None else extent)


@dataclass(frozen=True)
class BandSegment:
    y: float
    pinned: bool = False


@dataclass
class BinState:
    bin_id: str
    width: int
    height: int
    depth: int
    lip_height: int = 25
    placements: list[Placement] = field(default_factory=list)
    band_segments: list[BandSegment] = field(default_factory=list)
    row: int = 0

    def __post_init__(self):
        self.placements = sorted(self.placements, key=lambda p: (p.x, p.item.id))

    @property
    def opening(self) -> int:
        """Clear height above the front lip."""
        return self.height - self.lip_height

    def with_placements(self, placements: Iterable[Placement]) -> "BinState":
        return dataclasses.replace(self, placements=list(placements))

    def gaps(self) -> list[tuple[float, float]]:
        """Free intervals between walls and items at current extents."""
        out = []
        cursor = 0.0
        for p in self.placements:
            if p.x > cursor + EPS:
                out.append((cursor, p.x))
            cursor = max(cursor, p.end)
        if self.width > cursor + EPS:
            out.append((cursor, float(self.width)))
        return out

    def gap_at(self, x: float) -> tuple[float, float]:
        """The free interval containing ``x``; zero-width if ``x`` is occupied."""
        for a, b in self.gaps():
            if a - EPS <= x <= b + EPS:
                return a, b
        return x, x

    def occupied_compressed(self) -> float:
        return sum(p.min_extent for p in self.placements)

    def fill_fraction(self) -> float:
        return min(1.0, sum(p.extent for p in self.placements) / self.width)

    def check(self) -> None:
        """Raise OverfullBin if the width invariants are broken."""
        if self.occupied_compressed() > self.width + 1e-6:
            raise OverfullBin(f"bin {self.bin_id}: compressed widths exceed bin width")
        prev_end = 0.0
        for p in self.placements:
            if p.x < -1e-6 or p.end > self.width + 1e-6:
                raise OverfullBin(f"bin {self.bin_id}: item {p.item.id} outside walls")
            if p.x < prev_end - 1e-6:
                raise OverfullBin(f"bin {self.bin_id}: item {p.item.id} overlaps a neighbour")
            if p.extent < p.min_extent - 1e-6:
                raise OverfullBin(f"bin {self.bin_id}: item {p.item.id} over-compressed")
            prev_end = p.end


@dataclass
class Pod:
    pod_id: int
    bins: list[BinState]
    arrival_time: float = 0.0

    def __post_init__(self):
        if not 1 <= len(self.bins) <= 52:
            raise ConfigError("a pod holds between 1 and 52 bins")

    def bin(self, bin_id: str) -> BinState:
        for b in self.bins:
            if b.bin_id == bin_id:
                return b
        raise KeyError(bin_id)

    def replace_bin(self, new: BinState) -> None:
        for i, b in enumerate(self.bins):
            if b.bin_id == new.bin_id:
                self.bins[i] = new
                return
        raise KeyError(new.bin_id)


class BufferWall:
    """Fixed-slot item buffer with a recycle queue for retained items."""

    def __init__(self, n_slots: int = 32):
        self.slots: list[Optional[Item]] = [None] * n_slots
        self.recycle_queue: deque[Item] = deque()

    def __len__(self) -> int:
        return sum(s is not None for s in self.slots)

    def items(self) -> list[Item]:
        return [s for s in self.slots if s is not None]

    def free_slots(self) -> int:
        return len(self.slots) - len(self)

    def take(self, item_id: int) -> Item:
        for i, s in enumerate(self.slots):
            if s is not None and s.id == item_id:
                self.slots[i] = None
                return s
        raise KeyError(item_id)

    def put(self, item: Item) -> None:
        for s in self.slots:
            if s is not None and s.id == item.id:
                raise ValueError(f"item {item.id} already buffered")
        for i, s in enumerate(self.slots):
            if s is None:
                self.slots[i] = item
                return
        raise OverflowError("buffer wall is full")

    def recycle(self, item: Item) -> None:
        self.recycle_queue.append(item)

    def rebuffer(self) -> int:
        """Move recycled items back into free slots; returns how many moved."""
        n = 0
        while self.recycle_queue and self.free_slots() > 0:
            self.put(self.recycle_queue.popleft())
            n += 1
        return n

    def reserved(self) -> int:
        """Free slots held back for items waiting in the recycle queue."""
        return min(len(self.recycle_queue), self.free_slots())


@dataclass(frozen=True)
class WorkcellClock:
    T: float = 0.0
    N_s: int = 0

    def __post_init__(self):
        if self.T < 0 or self.N_s < 0:
            raise ValueError("clock values must be non-negative")


class RollingClock:
    """Sliding window of the last ``window`` attempts plus interleaved kickouts."""

    def __init__(self, window: int = 200):
        self.window = window
        self._events: deque[tuple[float, int, bool]] = deque()
        self._attempts = 0
        self._T = 0.0
        self._N = 0

    def add_attempt(self, seconds: float, success: bool) -> None:
        self._events.append((seconds, int(success), True))
        self._T += seconds
        self._N += int(success)
        self._attempts += 1
        while self._attempts > self.window:
            s, ok, is_attempt = self._events.popleft()
            self._T -= s
            self._N -= ok
            self._attempts -= int(is_attempt)
        if not self._events:
            self._T = 0.0

    def add_charge(self, seconds: float) -> None:
        self._events.append((seconds, 0, False))
        self._T += seconds

    @property
    def attempts(self) -> int:
        return self._attempts

    def snapshot(self) -> WorkcellClock:
        return WorkcellClock(T=max(0.0, self._T), N_s=self._N)

    def success_rate(self) -> Optional[float]:
        return self._N / self._attempts if self._attempts else None


def true_free_width(bin: BinState, assume_rigid: bool) -> float:
    widths = (p.rigid_extent if assume_rigid else p.min_extent for p in bin.placements)
    return max(0.0, bin.width - sum(widths))


def _pack_side(items: Sequence[Placement], lo: float, hi: float, toward_lo: bool) -> list[Placement]:
    """Fit ``items`` (sorted by x) into [lo, hi] with minimal displacement.

    Items are first shifted away from the inserted slab; if the side is still
    too narrow they are packed against the wall and compressed uniformly as a
    fraction of each one's remaining slack.
    """
    if not items:
        return []
    room = hi - lo
    need = sum(p.extent for p in items)
    if need <= room + EPS:
        out = [p for p in items]
        if toward_lo:
            limit = hi
            for i in range(len(out) - 1, -1, -1):
                p = out[i]
                if p.end > limit:
                    p = p.moved(limit - p.extent)
                    out[i] = p
                limit = p.x
        else:
            limit = lo
            for i, p in enumerate(out):
                if p.x < limit:
                    p = p.moved(limit)
                    out[i] = p
                limit = p.end
        return out
    min_need = sum(p.min_extent for p in items)
    if min_need > room + 1e-6:
        raise OverfullBin("compression allowance exhausted")
    shortage = need - room
    total_slack = sum(p.slack for p in items)
    frac = shortage / total_slack if total_slack > 0 else 0.0
    out = []
    cursor = lo
    for p in items:
        ext = p.extent - frac * p.slack
        out.append(p.moved(cursor, ext))
        cursor += ext
    if not toward_lo:
        # contiguous block belongs against the far wall; shift it there
        shift = hi - cursor
        out = [p.moved(p.x + shift) for p in out]
    return out


def apply_placement(
    bin: BinState,
    item: Item,
    x: float,
    orientation: Orientation = Orientation.UPRIGHT,
    depth_offset: float = 0.0,
) -> BinState:
    """Insert ``item`` at ``[x, x + extent)``, displacing and compressing neighbours.

    Neighbours whose centre lies left of the new slab's centre are pushed left,
    the rest right; an item centred exactly on it goes toward the nearer wall
    (left on a tie).
    """
    ext = float(item.extent(orientation))
    if x < -EPS or x + ext > bin.width + EPS:
        raise OverfullBin(f"item {item.id} does not fit between the walls at x={x}")
    c = x + 0.5 * ext
    left, right = [], []
    for p in bin.placements:
        pc = p.center
        if pc < c - EPS:
            left.append(p)
        elif pc > c + EPS:
            right.append(p)
        elif c <= 0.5 * bin.width:
            left.append(p)
        else:
            right.append(p)
    new_left = _pack_side(left, 0.0, x, toward_lo=True)
    new_right = _pack_side(right, x + ext, float(bin.width), toward_lo=False)
    placed = Placement(item, float(x), ext, orientation, depth_offset)
    out = bin.with_placements(new_left + [placed] + new_right)
    out.check()
    return out


# ----------------------------------------------------------------------------
# scenario item generation


@dataclass(frozen=True)
class ItemClassSpec:
    weight: float
    width_mm: tuple[int, int] = (20, 120)
    height_mm: tuple[int, int] = (80, 250)
    depth_mm: tuple[int, int] = (80, 300)
    mass_g: tuple[int, int] = (50, 1500)
    compressibility: tuple[float, float] = (0.0, 0.1)
    deformable_prob: float = 0.0
    manifest_error_std_mm: float = 0.0


@dataclass(frozen=True)
class ItemDistribution:
    classes: dict[Fragility, ItemClassSpec]

    def __post_init__(self):
        if not self.classes:
            raise ConfigError("item mixture is empty")
        if any(c.weight < 0 for c in self.classes.values()) or self.total_weight() <= 0:
            raise ConfigError("item mixture weights must be non-negative with a positive sum")

    def total_weight(self) -> float:
        return float(sum(c.weight for c in self.classes.values()))

    @functools.cached_property
    def table(self) -> dict:
        """Per-class parameters stacked into arrays for vector sampling."""
        specs = list(self.classes.values())
        out = {"names": list(self.classes), "cum": np.cumsum([c.weight for c in specs])}
        for attr in ("width_mm", "height_mm", "depth_mm", "mass_g", "compressibility"):
            out[attr] = np.array([getattr(c, attr) for c in specs], dtype=float)
        out["deformable_prob"] = np.array([c.deformable_prob for c in specs])
        out["manifest_error_std_mm"] = np.array([c.manifest_error_std_mm for c in specs])
        return out

    def probabilities(self) -> dict[Fragility, float]:
        tot = self.total_weight()
        return {k: c.weight / tot for k, c in self.classes.items()}

    @classmethod
    def from_dict(cls, d: dict) -> "ItemDistribution":
        classes = {}
        for name, spec in (d or {}).items():
            try:
                frag = Fragility(name)
            except ValueError as exc:
                raise ConfigError(f"unknown fragility class {name!r}") from exc
            kw = dict(spec)
            for key in ("width_mm", "height_mm", "depth_mm", "mass_g", "compressibility"):
                if key in kw:
                    kw[key] = tuple(kw[key])
            classes[frag] = ItemClassSpec(**kw)
        return cls(classes)

    def to_dict(self) -> dict:
        return {k.value: {f.name: list(v) if isinstance(v, tuple) else v
                          for f in dataclasses.fields(c) for v in [getattr(c, f.name)]}
                for k, c in self.classes.items()}


def sample_item_arrays(distribution: ItemDistribution, rng: np.random.Generator, n: int) -> dict:
    """Attributes of ``n`` items as arrays; one block of uniforms and normals per call."""
    tab = distribution.table
    u = rng.random((n, 7))
    z = rng.standard_normal(n)
    cls = np.minimum(np.searchsorted(tab["cum"], u[:, 0] * tab["cum"][-1], side="right"), len(tab["names"]) - 1)

    def ui(attr, col):
        lo, hi = tab[attr][cls, 0], tab[attr][cls, 1]
        return np.minimum(hi, lo + np.floor(u[:, col] * (hi - lo + 1))).astype(np.int64)

    k = tab["compressibility"][cls]
    return {
        "fragility": [tab["names"][i] for i in cls],
        "width": ui("width_mm", 1), "height": ui("height_mm", 2),
        "depth": ui("depth_mm", 3), "mass": ui("mass_g", 4),
        "compressibility": np.minimum(k[:, 0] + (k[:, 1] - k[:, 0]) * u[:, 5], 0.95),
        "deformable": u[:, 6] < tab["deformable_prob"][cls],
        "manifest_dims_error": np.rint(z * tab["manifest_error_std_mm"][cls]).astype(np.int64),
    }


def item_from_arrays(a: dict, i: int, item_id: int) -> Item:
    return Item(
        id=item_id, width=int(a["width"][i]), height=int(a["height"][i]), depth=int(a["depth"][i]),
        mass=int(a["mass"][i]), compressibility=float(a["compressibility"][i]),
        deformable=bool(a["deformable"][i]), fragility_class=a["fragility"][i],
        manifest_dims_error=int(a["manifest_dims_error"][i]),
    )


def sample_item(distribution: ItemDistribution, rng: np.random.Generator, item_id: int = 0) -> Item:
    return item_from_arrays(sample_item_arrays(distribution, rng, 1), 0, item_id)


# ----------------------------------------------------------------------------
# planning features and the per-attempt log record


class Features(NamedTuple):
    """Engineered features of one {behaviour, item, bin} candidate."""

    kind: str
    margin: float          # estimated space minus the item's footprint, mm
    est_space: float
    width: float
    height: float
    depth: float
    fragility: str
    fill: float
    source: str            # which space estimate was used: cat1, cat2a or cat2b


@dataclass(frozen=True)
class OutcomeRecord:
    attempt_id: int
    pod_id: int
    bin_id: str
    item_id: int
    planner: str
    features: Features
    exploratory: bool
    outcome: Outcome
    cycle_time: float
    kinesthetic_space: Optional[float]
    predicted_space: float
    true_space: float
    band_overlap: bool
    gate: str
    p_success: float
    timestamp: float

    COLUMNS = (
        "attempt_id", "pod_id", "bin_id", "item_id", "planner", "behavior", "exploratory",
        "outcome", "cycle_time", "kinesthetic_space", "predicted_space", "space_source",
        "margin", "est_space", "item_width", "item_height", "item_depth", "fragility",
        "fill_fraction", "true_space", "band_overlap", "gate", "p_success", "timestamp",
    )

    @property
    def success(self) -> bool:
        return self.outcome is Outcome.SUCCESS

    def row(self) -> list[str]:
        f = self.features

        def num(v):
            return "" if v is None else f"{v:.6f}"

        return [
            str(self.attempt_id), str(self.pod_id), self.bin_id, str(self.item_id), self.planner,
            f.kind, str(int(self.exploratory)), self.outcome.value, num(self.cycle_time),
            num(self.kinesthetic_space), num(self.predicted_space), f.source, num(f.margin),
            num(f.est_space), num(f.width), num(f.height), num(f.depth), f.fragility, num(f.fill),
            num(self.true_space), str(int(self.band_overlap)), self.gate, num(self.p_success),
            num(self.timestamp),
        ]

    @classmethod
    def from_row(cls, r: dict) -> "OutcomeRecord":
        def opt(v):
            return None if v in ("", None) else float(v)

        feats = Features(
            kind=r["behavior"], margin=float(r["margin"]), est_space=float(r["est_space"]),
            width=float(r["item_width"]), height=float(r["item_height"]), depth=float(r["item_depth"]),
            fragility=r["fragility"], fill=float(r["fill_fraction"]), source=r["space_source"],
        )
        return cls(
            attempt_id=int(r["attempt_id"]), pod_id=int(r["pod_id"]), bin_id=r["bin_id"],
            item_id=int(r["item_id"]), planner=r["planner"], features=feats,
            exploratory=r["exploratory"] == "1", outcome=Outcome(r["outcome"]),
            cycle_time=float(r["cycle_time"]), kinesthetic_space=opt(r["kinesthetic_space"]),
            predicted_space=float(r["predicted_space"]), true_space=float(r["true_space"]),
            band_overlap=r["band_overlap"] == "1", gate=r["gate"], p_success=float(r["p_success"]),
            timestamp=float(r["timestamp"]),
        )
