"""Simulate a short pod stream with each planner and compare throughput."""
from stowsim.config import ScenarioConfig
from stowsim.risk import fit_risk_model
from stowsim.sim import simulate, summarize_bias

cfg = ScenarioConfig.load()

base = simulate(cfg, "frequentist", seed=1, n_pods=150)
r = base.report
print(f"frequentist: {r.uph:.1f} UPH over {r.attempts} attempts, {r.items_per_pod:.2f} stows/pod")
for k, v in sorted(r.outcome_rates.items()):
    print(f"  {k:14s} {100 * v:5.2f}%")

bias = summarize_bias(base.records)
print(f"space bias: perception {bias.perception_bias:+.1f} mm, "
      f"after sweeping {bias.kinesthetic_bias:+.1f} mm")

explore = cfg.with_overrides(planner={"epsilon": 0.05})
log = simulate(explore, "frequentist", seed=2, n_attempts=15_000).records
model = fit_risk_model(log)
learned = simulate(cfg, "learned", seed=1, n_pods=150, model=model).report
print(f"learned:     {learned.uph:.1f} UPH ({100 * (learned.uph / r.uph - 1):+.1f}%)")
