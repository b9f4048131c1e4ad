"""Workcell loop: pod arrivals, buffer logistics, stow attempts and kickouts.

Time only advances through attempt cycle times and pod-transition charges, so
the reported rate can always be recomputed from the per-attempt log.
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import math
from collections import Counter
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .behaviors import BehaviorKind, execute, family
from .config import ScenarioConfig
from .errors import ConfigError, StowSimError
from .model import (OUTCOMES, BandSegment, BinState, BufferWall, Item, Outcome, OutcomeRecord,
                    Placement, Pod, RollingClock, item_from_arrays, sample_item,
                    sample_item_arrays)
from .outcomes import Family
from .planner import (BinView, CandidateSet, FeasibilityRules, FrequentistPlanner, LearnedPlanner,
                      feasible_set, kickout_uph, perceive_bin, resolve_behavior)
from .risk import FamilyRateModel, RiskModel
from .space import update_kinesthetic

log = logging.getLogger(__name__)


# ----------------------------------------------------------------------------
# pod generation


def _fill_target(cfg: ScenarioConfig, rng: np.random.Generator) -> float:
    comps = cfg.pods.fill
    w = np.array([c.weight for c in comps], dtype=float)
    c = comps[int(rng.choice(len(comps), p=w / w.sum()))]
    return float(rng.uniform(c.low, c.high)) if c.high > c.low else c.low


def generate_bin(cfg: ScenarioConfig, rng: np.random.Generator, bin_id: str, row: int,
                 width: int, height: int) -> BinState:
    """A bin pre-filled to a sampled width fraction, items separated by random gaps."""
    pc = cfg.pods
    target = _fill_target(cfg, rng) * width
    items: list[Item] = []
    used = 0.0
    a = sample_item_arrays(cfg.items, rng, 24)
    fits = (a["height"] <= height - pc.lip_height_mm) & (a["depth"] <= pc.bin_depth_mm)
    misses = 0
    for k in np.flatnonzero(fits):
        wk = int(a["width"][k])
        if used + wk > target:
            misses += 1
            if misses >= 4:
                break
            continue
        items.append(item_from_arrays(a, int(k), -(int(k) + 1)))
        used += wk
    gaps = rng.dirichlet(np.full(len(items) + 1, pc.gap_concentration)) * (width - used) if items else np.array([width])
    x = float(gaps[0])
    placements = []
    for it, g in zip(items, gaps[1:]):
        placements.append(Placement(it, x, float(it.width)))
        x += it.width + float(g)
    bands = [BandSegment(float(rng.uniform(0.3, 0.8) * height), bool(rng.random() < pc.band_pinned_prob))
             for _ in range(pc.bands_per_bin)]
    return BinState(bin_id, width, height, pc.bin_depth_mm, pc.lip_height_mm, placements, bands, row)


def generate_pod(cfg: ScenarioConfig, pod_id: int, seed: int) -> Pod:
    rng = np.random.default_rng([seed, 7, pod_id])
    pc = cfg.pods
    per_row = math.ceil(pc.bins_per_pod / pc.rows)
    bins = []
    for i in range(pc.bins_per_pod):
        row = i // per_row
        width = int(rng.choice(pc.bin_widths_mm))
        height = int(rng.choice(pc.bin_heights_mm))
        bins.append(generate_bin(cfg, rng, f"{pod_id}:r{row}c{i % per_row}", row, width, height))
    return Pod(pod_id, bins)


# ----------------------------------------------------------------------------
# reports


@dataclass
class RunReport:
    planner: str
    seed: int
    config_hash: str
    attempts: int = 0
    outcome_counts: dict = field(default_factory=lambda: {o.value: 0 for o in OUTCOMES})
    outcome_rates: dict = field(default_factory=dict)
    successes: int = 0
    total_seconds: float = 0.0
    cycle_seconds: float = 0.0
    charge_seconds: float = 0.0
    uph: float = 0.0
    pods: int = 0
    kickouts: int = 0
    turnaways: int = 0
    items_per_pod: float = 0.0
    density: float = 0.0
    per_behavior: dict = field(default_factory=dict)
    exploratory: int = 0
    reorientation_failures: int = 0
    human_baseline_uph: float = 243.0
    valid: bool = True
    error: Optional[str] = None

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, separators=(",", ":"))

    def digest(self) -> str:
        return hashlib.sha256(self.to_json().encode()).hexdigest()


@dataclass
class SimResult:
    report: RunReport
    records: list[OutcomeRecord]
    pod_uph: list[float]
    pod_arms: list[str]
    cycle_times: list[float]
    charges: list[float]

    def check(self) -> list[str]:
        """Invariant violations, empty when the run is self-consistent."""
        r = self.report
        errs = []
        if sum(r.outcome_counts.values()) != r.attempts:
            errs.append("outcome counts do not sum to attempts")
        total = math.fsum(self.cycle_times) + math.fsum(self.charges)
        if total != r.total_seconds:
            errs.append("clock does not equal cycle times plus charges")
        uph = 3600.0 * r.successes / total if total > 0 else 0.0
        if uph != r.uph:
            errs.append("reported rate differs from the clock recomputation")
        return errs

    def csv_text(self) -> str:
        buf = io.StringIO()
        write_log(self.records, buf)
        return buf.getvalue()


def write_log(records: Iterable[OutcomeRecord], fh) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(OutcomeRecord.COLUMNS)
    for r in records:
        w.writerow(r.row())


def read_log(path_or_fh) -> list[OutcomeRecord]:
    if isinstance(path_or_fh, (str, Path)):
        with open(path_or_fh, newline="") as fh:
            return [OutcomeRecord.from_row(r) for r in csv.DictReader(fh)]
    return [OutcomeRecord.from_row(r) for r in csv.DictReader(path_or_fh)]


# ----------------------------------------------------------------------------
# the workcell


def make_planner(name: str, cfg: ScenarioConfig, model: Optional[RiskModel] = None):
    if name == "frequentist":
        return FrequentistPlanner(cfg.planner.margin_mm, cfg.planner.epsilon)
    if name == "learned":
        return LearnedPlanner(model, cfg.planner.epsilon, cfg.planner.margin_mm)
    raise ConfigError(f"unknown planner {name!r}")


class Workcell:
    """One robot cell fed from a shared buffer; planners may be switched per pod."""

    def __init__(self, cfg: ScenarioConfig, seed: Optional[int] = None):
        self.cfg = cfg
        self.seed = cfg.seed if seed is None else int(seed)
        ss = np.random.SeedSequence(self.seed)
        s_items, s_perc, s_exec, s_plan = ss.spawn(4)
        self.rng_items = np.random.default_rng(s_items)
        self.rng_perc = np.random.default_rng(s_perc)
        self.rng_exec = np.random.default_rng(s_exec)
        self.rng_plan = np.random.default_rng(s_plan)
        self.buffer = BufferWall(cfg.buffer_slots)
        self.clock = RollingClock(cfg.planner.window)
        pl = cfg.planner
        self.rules = FeasibilityRules(pl.feasibility_slack_mm, dict(pl.creation_allowance_mm),
                                      pl.heavy_mass_g, pl.heavy_min_row)
        self.next_item = 1
        self.supplied = 0
        self.attempt_id = 0
        self.now = 0.0
        self.records: list[OutcomeRecord] = []
        self.cycle_times: list[float] = []
        self.charges: list[float] = []
        self.pod_uph: list[float] = []
        self.pod_arms: list[str] = []
        self.pod_stows: list[int] = []
        self.densities: list[float] = []
        self.kickouts = 0
        self.turnaways = 0
        self.reorient_fail = 0
        self.pods_done = 0

    # -- buffer --------------------------------------------------------------

    def refill(self) -> None:
        self.buffer.rebuffer()
        limit = self.cfg.supply_limit
        while self.buffer.free_slots() > self.buffer.reserved():
            if limit is not None and self.supplied >= limit:
                break
            self.buffer.put(sample_item(self.cfg.items, self.rng_items, self.next_item))
            self.next_item += 1
            self.supplied += 1

    # -- one pod -------------------------------------------------------------

    def _view(self, b: BinState, kin: Optional[float]) -> BinView:
        return perceive_bin(b, self.cfg.perception, self.rng_perc, kin, self.cfg.planner.plank_strip_cells)

    def run_pod(self, pod: Pod, planner, scorer: RiskModel, arm: str = "",
                attempt_budget: Optional[int] = None) -> None:
        cfg = self.cfg
        self.refill()
        views = {b.bin_id: self._view(b, None) for b in pod.bins}
        kin: dict[str, Optional[float]] = {b.bin_id: None for b in pod.bins}
        stale = list(views)
        tuples = CandidateSet.empty()
        stows = 0
        pod_time = 0.0
        n_attempts = 0
        rate_fixed = cfg.planner.kickout_success_rate
        while n_attempts < cfg.planner.max_attempts_per_pod:
            if attempt_budget is not None and self.attempt_id >= attempt_budget:
                break
            items = self.buffer.items()
            if stale:
                fresh = feasible_set(items, [views[b] for b in stale], self.rules)
                tuples = CandidateSet.concat([tuples, fresh]) if len(tuples) else fresh
                stale = []
            snap = self.clock.snapshot()
            rate = rate_fixed if rate_fixed is not None else (self.clock.success_rate() or 0.8586)
            kick_v = kickout_uph(snap, cfg.timing.kickout_s, cfg.planner.mean_insert_cycle_s, rate)
            plan = planner.plan(tuples, snap, self.rng_plan, kick_v)
            if planner.kickout(plan, snap, kickout_s=cfg.timing.kickout_s,
                               mean_insert_s=cfg.planner.mean_insert_cycle_s, success_rate=rate):
                break
            t = plan[0]
            item = self.buffer.take(t.item_id)
            tuples = tuples.take(tuples.item_id != item.id)
            if self.rng_exec.random() >= cfg.timing.reorientation_success:
                self.reorient_fail += 1
                self.buffer.recycle(item)
                continue
            bin_ = pod.bin(t.bin_id)
            view = views[t.bin_id]
            behavior = resolve_behavior(t, view)
            res = execute(behavior, item, bin_, cfg.outcome_model, self.rng_exec, cfg.engine)
            cycle = res.cycle_time + cfg.timing.band_delay_s
            p = float(scorer.predict_success(t.features))
            self.records.append(OutcomeRecord(
                attempt_id=self.attempt_id, pod_id=pod.pod_id, bin_id=t.bin_id, item_id=item.id,
                planner=planner.name, features=t.features, exploratory=plan.exploratory,
                outcome=res.outcome, cycle_time=cycle, kinesthetic_space=res.created_space,
                predicted_space=t.features.est_space, true_space=res.true_space,
                band_overlap=res.band_overlap, gate=res.gate or "", p_success=p, timestamp=self.now,
            ))
            self.attempt_id += 1
            n_attempts += 1
            self.now += cycle
            pod_time += cycle
            self.cycle_times.append(cycle)
            success = res.outcome is Outcome.SUCCESS
            stows += int(success)
            self.clock.add_attempt(cycle, success)
            if res.item_retained:
                self.buffer.recycle(item)

            pod.replace_bin(res.bin_after)
            if res.created_space is not None and not res.lost_items:
                est = view.estimate
                new_kin = update_kinesthetic(est, res.created_space,
                                             res.gripper_width if res.placed else 0.0).kinesthetic
            else:
                new_kin = None
            kin[t.bin_id] = new_kin
            views[t.bin_id] = self._view(res.bin_after, new_kin)
            tuples = tuples.take(tuples.bin != tuples.bins.index(t.bin_id))
            stale = [t.bin_id]

        charge = cfg.timing.kickout_s if stows > 0 else cfg.timing.no_stow_turnaway_s
        self.kickouts += 1
        self.turnaways += int(stows == 0)
        self.charges.append(charge)
        self.clock.add_charge(charge)
        self.now += charge
        pod_time += charge
        self.pod_uph.append(3600.0 * stows / pod_time)
        self.pod_arms.append(arm)
        self.pod_stows.append(stows)
        self.densities.append(float(np.mean([b.occupied_compressed() / b.width for b in pod.bins])))
        self.pods_done += 1

    # -- reporting -----------------------------------------------------------

    def report(self, planner_name: str) -> RunReport:
        r = RunReport(planner_name, self.seed, self.cfg.hash(), human_baseline_uph=self.cfg.human_baseline_uph)
        counts = Counter(rec.outcome.value for rec in self.records)
        r.attempts = len(self.records)
        r.outcome_counts = {o.value: counts.get(o.value, 0) for o in OUTCOMES}
        r.outcome_rates = {k: (v / r.attempts if r.attempts else 0.0) for k, v in r.outcome_counts.items()}
        r.successes = r.outcome_counts[Outcome.SUCCESS.value]
        r.cycle_seconds = math.fsum(self.cycle_times)
        r.charge_seconds = math.fsum(self.charges)
        r.total_seconds = math.fsum(self.cycle_times) + math.fsum(self.charges)
        r.uph = 3600.0 * r.successes / r.total_seconds if r.total_seconds > 0 else 0.0
        r.pods = self.pods_done
        r.kickouts = self.kickouts
        r.turnaways = self.turnaways
        r.items_per_pod = r.successes / r.pods if r.pods else 0.0
        r.density = float(np.mean(self.densities)) if self.densities else 0.0
        per = {}
        for k in BehaviorKind:
            recs = [x for x in self.records if x.features.kind == k.value]
            if recs:
                s = sum(x.success for x in recs)
                per[k.value] = {"attempts": len(recs), "successes": s, "success_rate": s / len(recs),
                                "mean_cycle_s": float(np.mean([x.cycle_time for x in recs]))}
        r.per_behavior = per
        r.exploratory = sum(x.exploratory for x in self.records)
        r.reorientation_failures = self.reorient_fail
        return r

    def result(self, planner_name: str) -> SimResult:
        return SimResult(self.report(planner_name), self.records, self.pod_uph, self.pod_arms,
                         self.cycle_times, self.charges)


def simulate(cfg: ScenarioConfig, planner: str = "frequentist", seed: Optional[int] = None,
             n_pods: Optional[int] = None, n_attempts: Optional[int] = None,
             model: Optional[RiskModel] = None, pods: Optional[Sequence[Pod]] = None) -> SimResult:
    """Run a pod stream until ``n_pods`` pods or ``n_attempts`` attempts are done."""
    if n_pods is None and n_attempts is None and pods is None:
        raise ConfigError("give n_pods, n_attempts or an explicit pod list")
    cell = Workcell(cfg, seed)
    pl = make_planner(planner, cfg, model)
    scorer = model if model is not None else FamilyRateModel()
    name = pl.name
    try:
        pod_id = 0
        while True:
            if pods is not None:
                if pod_id >= len(pods):
                    break
                pod = pods[pod_id]
            else:
                if n_pods is not None and pod_id >= n_pods:
                    break
                if n_attempts is not None and cell.attempt_id >= n_attempts:
                    break
                pod = generate_pod(cfg, pod_id, cell.seed)
            if cfg.supply_limit is not None and cell.supplied >= cfg.supply_limit and not len(cell.buffer) \
                    and not cell.buffer.recycle_queue:
                break
            cell.run_pod(pod, pl, scorer, attempt_budget=n_attempts)
            pod_id += 1
    except StowSimError as exc:
        if isinstance(exc, ConfigError):
            raise
        log.error("run aborted: %s", exc)
        res = cell.result(name)
        res.report.valid = False
        res.report.error = f"{type(exc).__name__}: {exc}"
        return res
    return cell.result(name)


def run(cfg: ScenarioConfig, planner: str = "frequentist", seed: Optional[int] = None, **kw) -> RunReport:
    return simulate(cfg, planner, seed, **kw).report


# ----------------------------------------------------------------------------
# bias summary


@dataclass(frozen=True)
class BiasSummary:
    perception_bias: float
    perception_std: float
    perception_n: int
    kinesthetic_bias: float
    kinesthetic_std: float
    kinesthetic_n: int
    perception_mae: float = float("nan")
    kinesthetic_mae: float = float("nan")


def summarize_bias(records: Iterable[OutcomeRecord]) -> Optional[BiasSummary]:
    """Mean and std of predicted minus measured space on sweep attempts, by estimate source."""
    sweeps = [r for r in records if family(BehaviorKind(r.features.kind)) is Family.SWEEP]
    if not sweeps:
        return None
    perc = np.array([r.predicted_space - r.true_space for r in sweeps if r.features.source != "cat2b"])
    kin = np.array([r.predicted_space - r.true_space for r in sweeps if r.features.source == "cat2b"])

    def stats(a):
        if a.size == 0:
            return float("nan"), float("nan"), 0, float("nan")
        return float(a.mean()), float(a.std(ddof=1)) if a.size > 1 else 0.0, int(a.size), float(np.abs(a).mean())

    pm, ps, pn, pa = stats(perc)
    km, ks, kn, ka = stats(kin)
    return BiasSummary(pm, ps, pn, km, ks, kn, pa, ka)
