"""Render one bin's perceived occupancy and its cheapest plank-insert footprint."""
import numpy as np

from stowsim.affordance import AffordanceKind, build_costmap, render_overlay
from stowsim.config import ScenarioConfig
from stowsim.planner import perceive_bin
from stowsim.sim import generate_pod

cfg = ScenarioConfig.load()
pod = generate_pod(cfg, pod_id=0, seed=cfg.seed)
rng = np.random.default_rng(0)

for b in pod.bins[:3]:
    view = perceive_bin(b, cfg.perception, rng, plank_strip_cells=cfg.planner.plank_strip_cells)
    est = view.estimate
    print(f"{b.bin_id}: width {b.width} mm, {len(b.placements)} items, "
          f"usable {est.directly_usable:g} mm, by sweeping {est.rigid_sweep:g} mm")
    planks = view.planks
    best = min(planks.values(), key=lambda a: a[0].cost)[0] if planks else None
    print(render_overlay(build_costmap(view.mask, AffordanceKind.PLANK_INSERT), best))
