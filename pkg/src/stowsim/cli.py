"""Command line entry point: ``stowsim {run,ab,fit-risk,score-log,dump-masks}``.

Exit codes: 0 ok, 2 bad arguments or config, 3 invariant violation or an
aborted run.
"""
from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .abtest import ab_test
from .affordance import AffordanceKind, build_costmap, render_overlay
from .config import ScenarioConfig
from .errors import ConfigError, StowSimError
from .perception import dump_multimask
from .planner import perceive_bin
from .risk import TabularRiskModel, fit_risk_model, score_log
from .sim import generate_pod, read_log, simulate

EXIT_OK, EXIT_USAGE, EXIT_INVARIANT = 0, 2, 3


def _config(args) -> ScenarioConfig:
    cfg = ScenarioConfig.load(args.config)
    over = {}
    if getattr(args, "set", None):
        for kv in args.set:
            key, _, val = kv.partition("=")
            if not _:
                raise ConfigError(f"--set expects key=value, got {kv!r}")
            node = over
            parts = key.split(".")
            for p in parts[:-1]:
                node = node.setdefault(p, {})
            node[parts[-1]] = json.loads(val) if val[:1] in "[{0123456789-tfn\"" else val
    return cfg.with_overrides(**over) if over else cfg


def _model(path: Optional[str]):
    return TabularRiskModel.load(path) if path else None


def _outdir(args) -> Optional[Path]:
    if not args.out:
        return None
    p = Path(args.out)
    p.mkdir(parents=True, exist_ok=True)
    return p


def cmd_run(args) -> int:
    cfg = _config(args)
    if args.pods is None and args.attempts is None:
        args.pods = 100
    res = simulate(cfg, args.planner, seed=args.seed, n_pods=args.pods, n_attempts=args.attempts,
                   model=_model(args.model))
    out = _outdir(args)
    if out is not None:
        (out / "report.json").write_text(res.report.to_json() + "\n")
        (out / "attempts.csv").write_text(res.csv_text())
    print(res.report.to_json())
    problems = res.check()
    for p in problems:
        print(f"invariant violated: {p}", file=sys.stderr)
    if not res.report.valid:
        print(f"run aborted: {res.report.error}", file=sys.stderr)
    return EXIT_INVARIANT if problems or not res.report.valid else EXIT_OK


def cmd_ab(args) -> int:
    cfg = _config(args)
    model = _model(args.model)
    r = ab_test(cfg, args.planner_a, args.planner_b, (args.pods_a, args.pods_b), seed=args.seed,
                alpha=args.alpha, model=model)
    text = json.dumps(r.to_dict(), sort_keys=True)
    out = _outdir(args)
    if out is not None:
        (out / "ab.json").write_text(text + "\n")
    print(text)
    ok = 0.0 <= r.p_value <= 1.0 and r.ci_A[0] <= r.mean_A <= r.ci_A[1] and r.ci_B[0] <= r.mean_B <= r.ci_B[1]
    if not ok or not all(math.isfinite(v) for v in (r.mean_A, r.mean_B)):
        print("invariant violated: A/B summary is inconsistent", file=sys.stderr)
        return EXIT_INVARIANT
    return EXIT_OK


def cmd_fit_risk(args) -> int:
    records = [r for path in args.log for r in read_log(path)]
    if args.exclude_exploratory:
        records = [r for r in records if not r.exploratory]
    edges = [float(x) for x in args.margin_edges.split(",")] if args.margin_edges else None
    kw = {"margin_edges": edges} if edges else {}
    model = fit_risk_model(records, alpha=args.alpha, min_count=args.min_count, **kw)
    model.save(args.out_model)
    print(json.dumps({"records": len(records), "model": str(args.out_model)}))
    return EXIT_OK


def cmd_score_log(args) -> int:
    model = TabularRiskModel.load(args.model)
    print(json.dumps(score_log(model, read_log(args.log)), sort_keys=True))
    return EXIT_OK


def cmd_dump_masks(args) -> int:
    cfg = _config(args)
    pod = generate_pod(cfg, args.pod, cfg.seed if args.seed is None else args.seed)
    rng = np.random.default_rng([cfg.seed if args.seed is None else args.seed, 13, args.pod])
    out = _outdir(args)
    for b in pod.bins:
        view = perceive_bin(b, cfg.perception, rng, plank_strip_cells=cfg.planner.plank_strip_cells)
        stem = b.bin_id.replace(":", "_")
        cm_item = view.item_costmap
        cm_plank = build_costmap(view.mask, AffordanceKind.PLANK_INSERT)
        planks = view.planks
        plank_aff = min(planks.values(), key=lambda a: a[0].cost)[0] if planks else None
        overlays = {
            "item_insert": render_overlay(cm_item, None),
            "plank_insert": render_overlay(cm_plank, plank_aff),
        }
        grids = dump_multimask(view.mask)
        if out is None:
            print(f"== {b.bin_id} width={b.width} cat1={view.estimate.directly_usable:g} "
                  f"cat2a={view.estimate.rigid_sweep:g}")
            print(overlays["plank_insert"], end="")
            continue
        for name, text in grids.items():
            (out / f"{stem}.{name}.pgm").write_text(text)
        for name, text in overlays.items():
            (out / f"{stem}.{name}.txt").write_text(text)
    if out is not None:
        print(json.dumps({"bins": len(pod.bins), "out": str(out)}))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="stowsim", description="Robotic pod-stow workcell simulator")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, seed_default: Optional[int] = None):
        p.add_argument("--config", help="scenario YAML/JSON (defaults are built in)")
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override one config key, dotted path, JSON value")
        p.add_argument("--seed", type=int, default=seed_default)
        p.add_argument("--out", help="output directory")

    p = sub.add_parser("run", help="simulate a pod stream and report")
    common(p)
    p.add_argument("--planner", choices=("frequentist", "learned"), default="frequentist")
    p.add_argument("--model", help="risk model file for the learned planner")
    p.add_argument("--pods", type=int)
    p.add_argument("--attempts", type=int)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("ab", help="pod-randomised A/B test of two planners")
    common(p, 0)
    p.add_argument("--planner-a", choices=("frequentist", "learned"), default="frequentist")
    p.add_argument("--planner-b", choices=("frequentist", "learned"), default="learned")
    p.add_argument("--model", help="risk model file used by learned arms")
    p.add_argument("--pods-a", type=int, default=695)
    p.add_argument("--pods-b", type=int, default=227)
    p.add_argument("--alpha", type=float, default=0.01)
    p.set_defaults(func=cmd_ab)

    p = sub.add_parser("fit-risk", help="fit a tabular risk model from attempt logs")
    p.add_argument("log", nargs="+", help="attempt CSV logs")
    p.add_argument("-o", "--out-model", required=True)
    p.add_argument("--alpha", type=float, default=1.0, help="Laplace pseudo-count")
    p.add_argument("--min-count", type=int, default=30, help="back-off threshold")
    p.add_argument("--margin-edges", help="comma-separated bucket edges in mm")
    p.add_argument("--exclude-exploratory", action="store_true")
    p.set_defaults(func=cmd_fit_risk)

    p = sub.add_parser("score-log", help="Brier score of a risk model on a log")
    p.add_argument("model")
    p.add_argument("log")
    p.set_defaults(func=cmd_score_log)

    p = sub.add_parser("dump-masks", help="write multi-masks and cost overlays for one pod")
    common(p)
    p.add_argument("--pod", type=int, default=0)
    p.set_defaults(func=cmd_dump_masks)
    return ap


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (StowSimError, OSError, ValueError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INVARIANT if isinstance(exc, StowSimError) else EXIT_USAGE


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
