"""Acceptance checks, one per criterion.

Each check returns a verdict with the measured quantities and its wall time;
the time limit is part of the verdict. Run under pytest, or directly with
``python tests/test_acceptance.py [N ...]`` to print the verdict lines only.
"""
from __future__ import annotations

import math
import sys
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from acceptance_log import LINES  # noqa: E402
from oracles import ev_fraction, exhaustive_pose, widest_free_rect  # noqa: E402
from stowsim.abtest import ab_test  # noqa: E402
from stowsim.affordance import (AffordanceKind, costmap_from_obstacles, generate_affordance,  # noqa: E402
                                kernel_cells)
from stowsim.affordance import Affordance  # noqa: E402
from stowsim.behaviors import Behavior, BehaviorKind, EngineParams, execute  # noqa: E402
from stowsim.config import ScenarioConfig  # noqa: E402
from stowsim.model import OUTCOMES, BinState, Item, Outcome  # noqa: E402
from stowsim.outcomes import OutcomeModel  # noqa: E402
from stowsim.perception import MultiMask  # noqa: E402
from stowsim.planner import uph_expectation  # noqa: E402
from stowsim.risk import fit_risk_model  # noqa: E402
from stowsim.sim import generate_pod, simulate, summarize_bias  # noqa: E402
from stowsim.space import estimate_cat1  # noqa: E402

Z99 = 2.5758293035489004  # two-sided 99% normal quantile


@dataclass
class Verdict:
    number: int
    title: str
    passed: bool
    detail: str
    seconds: float
    limit: float | None

    def line(self) -> str:
        lim = f" < {self.limit:g} s" if self.limit else ""
        word = "PASS" if self.passed else "FAIL"
        return f"criterion {self.number} {word}  {self.title}: {self.detail} ({self.seconds:.1f} s{lim})"


def _finish(number, title, ok, detail, t0, limit=None) -> Verdict:
    dt = time.perf_counter() - t0
    return Verdict(number, title, bool(ok and (limit is None or dt < limit)), detail, dt, limit)


def _in_ci(count: int, n: int, p: float) -> tuple[bool, float]:
    half = Z99 * math.sqrt(p * (1 - p) / n)
    return abs(count / n - p) <= half, half


# -- 1 ------------------------------------------------------------------------

def check_1() -> Verdict:
    t0 = time.perf_counter()
    fixed = [
        (1.0, 10, 100, 10, 20),
        (0.0, 10, 100, 10, 20),
        (0.5, 10, 100, 10, 10),
        (0.9, 0, 0, 10.87, 18.24),
        (0.25, 3, 40, 12.5, 7.5),
        (0.7, 200, 3600, 13.68, 19.69),
        (0.999, 1, 1, 0.5, 30),
        (0.01, 50, 700, 10, 10),
        (0.5, 80, 1000, 16.87, 16.87),
        (0.3333, 7, 77.7, 9.9, 21.1),
        (1e-6, 0, 5, 5, 5),
        (0.8586, 120, 1800, 11, 18),
    ]
    worst = 0.0
    ok = True
    for p, n, T, t1, t0_ in fixed:
        want = float(ev_fraction(p, n, T, t1, t0_))
        got = uph_expectation(p, t1, t0_, T, n)
        if want:
            worst = max(worst, abs(got - want) / abs(want))
    ok &= uph_expectation(1.0, 10, 20, 100, 10) == pytest.approx(360.0, rel=1e-12)
    ok &= uph_expectation(0.0, 10, 20, 100, 10) == pytest.approx(300.0, rel=1e-12)
    ok &= abs(uph_expectation(0.5, 10, 10, 100, 10) - 343.6) < 0.05
    rng = np.random.default_rng(1)
    n_rand = 1000
    P, NS = rng.random(n_rand), rng.integers(0, 500, n_rand)
    T, T1, T0 = rng.uniform(0, 5000, n_rand), rng.uniform(0.1, 60, n_rand), rng.uniform(0.1, 60, n_rand)
    got = uph_expectation(P, T1, T0, T, NS)
    for i in range(n_rand):
        want = float(ev_fraction(P[i], int(NS[i]), T[i], T1[i], T0[i]))
        if want:
            worst = max(worst, abs(got[i] - want) / want)
    ok &= worst <= 1e-9
    return _finish(1, "expected-UPH oracle", ok,
                   f"{len(fixed)} fixed + {n_rand} random sets, max rel err {worst:.1e}", t0, 1.0)


# -- 2 ------------------------------------------------------------------------

def _random_grid(rng):
    rows, cols = int(rng.integers(1, 65)), int(rng.integers(1, 65))
    inst = np.zeros((rows, cols), dtype=np.int32)
    style = rng.integers(3)
    if style == 0:
        inst[rng.random((rows, cols)) < rng.uniform(0, 0.3)] = 1
    else:
        for k in range(int(rng.integers(0, 8))):
            c0 = int(rng.integers(cols))
            w = int(rng.integers(1, max(2, cols // 3)))
            h = int(rng.integers(1, rows + 1))
            r0 = rows - h if style == 1 else int(rng.integers(0, rows - h + 1))
            inst[r0:r0 + h, c0:c0 + w] = k + 1
    depth = np.full((rows, cols), 50.0)
    behind = rng.random((rows, cols)) < 0.2
    depth[behind] = 300.0
    return inst, depth


def check_2() -> Verdict:
    t0 = time.perf_counter()
    rng = np.random.default_rng(2)
    n, mismatches = 1000, 0
    for _ in range(n):
        inst, depth = _random_grid(rng)
        rows, cols = inst.shape
        m = MultiMask(np.ones(inst.shape, bool), inst, np.zeros(inst.shape, bool), depth, 10, 400)
        obstacles = (inst > 0) & (depth <= 200.0)
        k = int(rng.integers(1, rows + 1))
        if estimate_cat1(m) != 10 * widest_free_rect(obstacles, rows):
            mismatches += 1
        if estimate_cat1(m, min_height_cells=k) != 10 * widest_free_rect(obstacles, k):
            mismatches += 1
    return _finish(2, "cat1 vs brute-force rectangle", mismatches == 0,
                   f"{n} grids (full height and random height), {mismatches} mismatches", t0, 30.0)


# -- 3 ------------------------------------------------------------------------

def check_3() -> Verdict:
    t0 = time.perf_counter()
    rng = np.random.default_rng(3)
    n, mismatches, found = 1000, 0, 0
    for _ in range(n):
        inst, _ = _random_grid(rng)
        obst = inst > 0
        cm = costmap_from_obstacles(obst, 10, AffordanceKind.ITEM_INSERT)
        rows, cols = obst.shape
        w_mm = int(rng.integers(1, 10 * max(1, cols // 2) + 1))
        h_mm = int(rng.integers(1, 10 * max(1, rows // 2) + 1))
        kw, kh = kernel_cells(w_mm, 10), kernel_cells(h_mm, 10)
        best = exhaustive_pose(cm.cost, {0: (kw, kh), 90: (kh, kw)})
        aff = generate_affordance(cm, (w_mm, h_mm), rotations=(0, 90))
        got = None if aff is None else (aff.cost, aff.col, aff.row, aff.rotation)
        found += best is not None
        mismatches += got != best
    return _finish(3, "affordance vs exhaustive poses", mismatches == 0,
                   f"{n} grids, both rotations, {found} with a pose, {mismatches} mismatches", t0, 60.0)


# -- 4 ------------------------------------------------------------------------

TARGET_OVERALL = {"success": 0.8586, "unproductive": 0.0931, "amnesty": 0.0377, "damage": 0.0024,
                  "other": 0.0082}
N_INSERT, N_SWEEP = 79_795, 20_205


def check_4() -> Verdict:
    t0 = time.perf_counter()
    model = OutcomeModel.default()
    rng = np.random.default_rng(4)
    bin_ = BinState("ref", 600, 300, 380, 25, [])
    item = Item(1, 100, 150, 100, mass=300)
    plank = Affordance(AffordanceKind.PLANK_INSERT, 5.0, 150.0, 0, 10.0, 200.0, 0.0, 0.0)
    insert = Behavior(BehaviorKind.DIRECT_INSERT)
    sweep = Behavior(BehaviorKind.DIRECT_SWEEP, plank=plank, sweep_direction=1)
    params = EngineParams(sensor_noise_mm=0.0)
    kinds = np.array([0] * N_INSERT + [1] * N_SWEEP)
    rng.shuffle(kinds)
    counts = {f: {o: 0 for o in OUTCOMES} for f in (0, 1)}
    for k in kinds.tolist():
        r = execute(sweep if k else insert, item, bin_, model, rng, params)
        counts[k][r.outcome] += 1
    n = len(kinds)
    parts, ok = [], True
    for name, p in TARGET_OVERALL.items():
        c = counts[0][Outcome(name)] + counts[1][Outcome(name)]
        inside, half = _in_ci(c, n, p)
        ok &= inside
        parts.append(f"{name} {100 * c / n:.2f}%")
    for label, fam, nf, p in (("insert", 0, N_INSERT, 0.9072), ("sweep", 1, N_SWEEP, 0.6667)):
        c = counts[fam][Outcome.SUCCESS]
        inside, _ = _in_ci(c, nf, p)
        ok &= inside
        parts.append(f"{label} success {100 * c / nf:.2f}%")
    return _finish(4, "calibration closure", ok, f"{n} attempts; " + ", ".join(parts), t0, 300.0)


# -- 5 ------------------------------------------------------------------------

def check_5(cfg: ScenarioConfig) -> Verdict:
    t0 = time.perf_counter()
    res = simulate(cfg, "frequentist", seed=5, n_pods=800)
    r = res.report
    recomputed = 3600.0 * sum(x.success for x in res.records) / (math.fsum(res.cycle_times) + math.fsum(res.charges))
    ok = 200.0 <= r.uph <= 320.0 and r.uph == recomputed and not res.check()
    ok &= 7.5 <= r.items_per_pod <= 8.5 and cfg.timing.kickout_s == 6.0
    return _finish(5, "emergent UPH", ok,
                   f"UPH {r.uph:.2f} over {r.pods} pods, {r.items_per_pod:.2f} stows/pod, "
                   f"recomputed {recomputed:.6f} (equal: {r.uph == recomputed})", t0)


# -- 6 ------------------------------------------------------------------------

def mean_compressed_slack(cfg: ScenarioConfig, n_pods: int = 200, seed: int = 6) -> float:
    per_bin = [sum(p.item.width * p.item.compressibility for p in b.placements)
               for i in range(n_pods) for b in generate_pod(cfg, i, seed).bins]
    return float(np.mean(per_bin))


def check_6(cfg: ScenarioConfig) -> Verdict:
    t0 = time.perf_counter()
    slack = mean_compressed_slack(cfg)
    s = summarize_bias(simulate(cfg, "frequentist", seed=6, n_pods=1500).records)
    ok = s is not None and s.perception_bias < 0 and abs(s.kinesthetic_bias) < 5 and abs(s.perception_bias) > 20
    ok &= 30.0 <= slack <= 42.0
    return _finish(6, "kinesthetic bias direction", ok,
                   f"mean compressed slack {slack:.1f} mm/bin; perception bias {s.perception_bias:.1f} mm "
                   f"(sd {s.perception_std:.1f}, n {s.perception_n}); kinesthetic bias {s.kinesthetic_bias:.2f} mm "
                   f"(sd {s.kinesthetic_std:.1f}, n {s.kinesthetic_n})", t0, 120.0)


# -- 7 ------------------------------------------------------------------------

def check_7(cfg: ScenarioConfig, replications: int = 50) -> Verdict:
    t0 = time.perf_counter()
    log = simulate(cfg.with_overrides(planner={"epsilon": 0.05}), "frequentist", seed=101,
                   n_attempts=50_000).records
    model = fit_risk_model(log)
    rejects, ma, mb = 0, [], []
    for r in range(replications):
        ab = ab_test(cfg, "frequentist", "learned", (695, 227), seed=1000 + r, model=model)
        rejects += ab.reject
        ma.append(ab.mean_A)
        mb.append(ab.mean_B)
    uplift = float(np.mean(mb) / np.mean(ma) - 1.0)
    rate = rejects / replications
    ok = len(log) >= 50_000 and uplift >= 0.03 and rate >= 0.8
    return _finish(7, "learned vs frequentist uplift", ok,
                   f"log {len(log)} attempts; uplift {100 * uplift:.2f}%; rejected {rejects}/{replications} "
                   f"at alpha 0.01 (695/227 pods)", t0, 1200.0)


# -- 8 ------------------------------------------------------------------------

def check_8(cfg: ScenarioConfig, replications: int = 500, arm: int = 20) -> Verdict:
    t0 = time.perf_counter()
    false = 0
    for r in range(replications):
        false += ab_test(cfg, "frequentist", "frequentist", (arm, arm), seed=50_000 + r).reject
    rate = false / replications
    return _finish(8, "A/A null validity", rate <= 0.02,
                   f"{false}/{replications} false rejections ({100 * rate:.1f}%) at alpha 0.01, "
                   f"{arm}+{arm} pods per replication", t0, 900.0)


# -- 9 ------------------------------------------------------------------------

def check_9(cfg: ScenarioConfig) -> Verdict:
    t0 = time.perf_counter()
    a = simulate(cfg, "frequentist", seed=9, n_pods=25).csv_text().encode()
    b = simulate(cfg, "frequentist", seed=9, n_pods=25).csv_text().encode()
    explore = cfg.with_overrides(planner={"epsilon": 0.05})
    c = simulate(explore, "frequentist", seed=9, n_pods=25).csv_text().encode()
    d = simulate(explore, "frequentist", seed=9, n_pods=25).csv_text().encode()
    ok = a == b and c == d and len(a) > 1000
    return _finish(9, "byte-identical logs", ok, f"{len(a)} and {len(c)} bytes, identical: {a == b and c == d}", t0)


# -- pytest wiring ----------------------------------------------------------------

def _record(v: Verdict) -> None:
    LINES.append(v.line())
    print(v.line())
    assert v.passed, v.line()


@pytest.fixture(scope="module")
def default_cfg():
    return ScenarioConfig.load()


def test_criterion_1_expected_uph_oracle():
    _record(check_1())


def test_criterion_2_cat1_oracle():
    _record(check_2())


def test_criterion_3_affordance_oracle():
    _record(check_3())


def test_criterion_4_calibration_closure():
    _record(check_4())


def test_criterion_5_emergent_uph(default_cfg):
    _record(check_5(default_cfg))


def test_criterion_6_kinesthetic_bias(default_cfg):
    _record(check_6(default_cfg))


def test_criterion_7_learned_uplift(default_cfg):
    _record(check_7(default_cfg))


def test_criterion_8_aa_null(default_cfg):
    _record(check_8(default_cfg))


def test_criterion_9_determinism(default_cfg):
    _record(check_9(default_cfg))


if __name__ == "__main__":
    cfg = ScenarioConfig.load()
    picks = [int(a) for a in sys.argv[1:]] or list(range(1, 10))
    checks = {1: check_1, 2: check_2, 3: check_3, 4: check_4}
    for k in picks:
        v = checks[k]() if k in checks else globals()[f"check_{k}"](cfg)
        print(v.line(), flush=True)
