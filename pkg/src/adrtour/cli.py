"""Command line interface: ``adrtour {tensor,tour,refine,run,oracle}``."""
from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

from . import oracles
from .heuristic import CacheMismatch, save_tensor
from .orbital import DAY
from .pipeline import (ConfigError, RunConfig, StageError, StagePlan, TargetsError, Tour,
                       build_tensor, bundled_config_path, emit_report, load_problem, new_report,
                       run_outer, run_refinement)

EXIT_OK = 0
EXIT_UNEXPECTED = 1
EXIT_USAGE = 2
EXIT_CONFIG = 3
EXIT_INPUT = 4
EXIT_CACHE = 5
EXIT_STAGE = 6
EXIT_ORACLE = 7


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-c", "--config",
                        help="config file, or the name of a bundled one (10x1 .. 20x3)")
    common.add_argument("-s", "--seed", type=int, help="master seed (overrides the config)")
    common.add_argument("-o", "--output", help="output directory (overrides the config)")
    common.add_argument("-w", "--workers", type=int, help="worker count (overrides the config)")

    p = argparse.ArgumentParser(prog="adrtour", description=(
        "Plan multi-rendezvous debris removal tours: heuristic cost tensor, simulated "
        "annealing over visiting orders, differential evolution on impulsive trajectories."))
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("tensor", parents=[common], help="build and cache the heuristic cost tensor")
    t = sub.add_parser("tour", parents=[common], help="solve the visiting order and epochs")
    t.add_argument("--tensor", help="load a cached tensor instead of building it")
    r = sub.add_parser("refine", parents=[common], help="optimize trajectories for a tour file")
    r.add_argument("--tour", required=True, help="tour.json written by the tour command")
    sub.add_parser("run", parents=[common], help="all stages end to end")
    sub.add_parser("oracle", parents=[common], help="self-checks against reference solutions")
    return p


def load_config(args) -> RunConfig:
    if args.config is None:
        cfg = RunConfig()
    elif Path(args.config).exists():
        cfg = RunConfig.load(args.config)
    else:
        cfg = RunConfig.load(bundled_config_path(args.config))
    overrides = {k: v for k, v in (("seed", args.seed), ("output_dir", args.output),
                                   ("workers", args.workers)) if v is not None}
    return replace(cfg, **overrides) if overrides else cfg


def _summary(report) -> str:
    lines = []
    for stage in ("sa", "time_fixed", "time_free"):
        if stage in report.costs:
            plan = report.plans[stage]
            lines.append(f"{stage:>10}: {report.costs[stage]:.5f} km/s  order {plan.ids}")
    return "\n".join(lines)


def cmd_tensor(cfg: RunConfig, args) -> int:
    problem = load_problem(cfg)
    tensor = build_tensor(problem, cfg)
    out = Path(cfg.tensor_cache) if cfg.tensor_cache else Path(cfg.output_dir) / "tensor.npz"
    out.parent.mkdir(parents=True, exist_ok=True)
    save_tensor(out, tensor, problem)
    print(f"{tensor.variant.value} {tensor.values.shape} -> {out}")
    return EXIT_OK


def cmd_tour(cfg: RunConfig, args) -> int:
    if args.tensor:
        cfg = replace(cfg, tensor_cache=args.tensor)
    problem = load_problem(cfg)
    report = new_report(cfg, problem)
    out = Path(cfg.output_dir)
    try:
        _, tour = run_outer(cfg, problem, report)
    finally:
        emit_report(report, out, formats=("json", "csv"))
    (out / "tour.json").write_text(json.dumps(tour.to_json(problem), indent=2) + "\n")
    print(_summary(report))
    print("epochs [day]", [round(t / DAY, 4) for t in tour.epochs])
    return EXIT_OK


def cmd_refine(cfg: RunConfig, args) -> int:
    problem = load_problem(cfg)
    try:
        data = json.loads(Path(args.tour).read_text())
    except (OSError, json.JSONDecodeError) as err:
        raise TargetsError(f"{args.tour}: cannot read tour file ({err})") from None
    tour = Tour.from_json(data, problem)
    report = new_report(cfg, problem)
    report.plans["sa"] = StagePlan(problem.body_ids(tour.sequence), list(tour.epochs),
                                   list(tour.leg_dv))
    report.costs["sa"] = report.plans["sa"].total
    try:
        run_refinement(problem, tour, cfg, report.seeds, report)
    finally:
        emit_report(report, cfg.output_dir)
    print(_summary(report))
    return EXIT_OK


def cmd_run(cfg: RunConfig, args) -> int:
    problem = load_problem(cfg)
    report = new_report(cfg, problem)
    try:
        _, tour = run_outer(cfg, problem, report)
        run_refinement(problem, tour, cfg, report.seeds, report)
    finally:
        emit_report(report, cfg.output_dir)
    print(_summary(report))
    return EXIT_OK


def cmd_oracle(cfg: RunConfig, args) -> int:
    checks = oracles.run_all(cfg.seed)
    for c in checks:
        print(f"{'PASS' if c.passed else 'FAIL'}  {c.name}: {c.detail}")
    return EXIT_OK if all(c.passed for c in checks) else EXIT_ORACLE


COMMANDS = {"tensor": cmd_tensor, "tour": cmd_tour, "refine": cmd_refine, "run": cmd_run,
            "oracle": cmd_oracle}


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        cfg = load_config(args)
        return COMMANDS[args.command](cfg, args)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except TargetsError as err:
        print(f"input error: {err}", file=sys.stderr)
        return EXIT_INPUT
    except CacheMismatch as err:
        print(f"tensor cache mismatch: {err}", file=sys.stderr)
        return EXIT_CACHE
    except StageError as err:
        cause = err.__cause__
        if isinstance(cause, CacheMismatch):
            print(f"tensor cache mismatch: {cause}", file=sys.stderr)
            return EXIT_CACHE
        if isinstance(cause, (ConfigError, TargetsError)):
            print(f"config error: {cause}", file=sys.stderr)
            return EXIT_CONFIG if isinstance(cause, ConfigError) else EXIT_INPUT
        print(f"{err} (partial report written)", file=sys.stderr)
        return EXIT_STAGE
    except KeyboardInterrupt:
        return 130
    except Exception as err:  # noqa: BLE001
        print(f"unexpected error: {type(err).__name__}: {err}", file=sys.stderr)
        return EXIT_UNEXPECTED


if __name__ == "__main__":
    sys.exit(main())
