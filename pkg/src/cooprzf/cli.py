"""Command-line entry point: ``cooprzf <subcommand> ...``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import bitalloc as ba
from .det_sinr import deterministic_equivalent
from .harness import EXPERIMENTS, ExperimentError, ExperimentSpec, emit_report, run_experiment
from .montecarlo import validate_appendix_terms
from .regopt import optimize_alpha
from .scenario import build_scenario, load_scenario

log = logging.getLogger("cooprzf")


def _read_json(path: str | None) -> dict:
    return json.loads(Path(path).read_text()) if path else {}


def cmd_simulate(args) -> int:
    cfg = _read_json(args.config)
    base_dir = Path(args.config).parent if args.config else None
    scen = cfg.get("scenario")
    if scen is not None:
        build_scenario(scen, base_dir=base_dir)  # fail early on a bad scenario
    names = list(EXPERIMENTS) if args.experiment == "all" else [args.experiment]
    results = []
    status = 0
    for name in names:
        sweep = cfg.get("sweep", {})
        # a sweep block may be keyed by experiment name
        sweep = sweep.get(name, {} if args.experiment == "all" else sweep)
        spec = ExperimentSpec(name=name, scenario=scen if args.experiment != "all" else None, sweep=sweep,
                              trials=args.trials if args.trials is not None else cfg.get("trials", 500),
                              master_seed=args.seed if args.seed is not None else cfg.get("master_seed", 0),
                              out_dir=args.out, workers=args.workers)
        try:
            results.append(run_experiment(spec))
        except ExperimentError as e:
            print(f"error: {e}", file=sys.stderr)
            status = 1
            break
    if results:
        report = emit_report(results)
        Path(args.out, "report.md").write_text(report + "\n")
        print(report)
    return status


def cmd_alpha_opt(args) -> int:
    s = load_scenario(args.config)
    r = optimize_alpha(s, args.method)
    print(json.dumps({"alpha_opt": r.alpha_opt, "method": r.method, "sum_rate_bits": r.objective / np.log(2),
                      "bracket": r.bracket, "iterations": r.iterations}, indent=2))
    return 0


def cmd_bit_alloc(args) -> int:
    s = load_scenario(args.config)
    r = ba.search_allocation(s, args.budget, args.space, workers=args.workers)
    print(json.dumps({"bits": r.allocation.bits.tolist(), "budget": args.budget, "space": r.space,
                      "alpha": r.alpha, "sum_rate_bits": r.sum_rate_nats / np.log(2),
                      "evaluated": r.evaluated, "space_size": r.space_size, "exhaustive": r.exhaustive,
                      "ranking": r.ranking.order.tolist()}, indent=2))
    return 0


def cmd_validate(args) -> int:
    s = load_scenario(args.config)
    alpha = args.alpha if args.alpha is not None else optimize_alpha(s).alpha_opt
    det = deterministic_equivalent(s, alpha)
    rep = validate_appendix_terms(s, alpha, args.trials, args.seed, det=det)
    print(f"alpha={alpha:.6g} trials={args.trials} seed={args.seed}")
    print(f"{'term':<14}{'mean':>14}{'stderr':>12}{'|z|':>8}{'mean|r|':>12}")
    for t in rep.terms.values():
        print(f"{t.name:<14}{t.mean:>14.4e}{t.stderr:>12.3e}{t.z:>8.2f}{t.mean_abs:>12.3e}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cooprzf", description="Cooperative RZF sum-rate tools")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="cmd", required=True)

    sp = sub.add_parser("simulate", help="run a named experiment and write CSV + manifest")
    sp.add_argument("--config", help="JSON with optional 'scenario', 'sweep', 'trials', 'master_seed'")
    sp.add_argument("--experiment", required=True, choices=sorted(EXPERIMENTS) + ["all"])
    sp.add_argument("--seed", type=int)
    sp.add_argument("--trials", type=int)
    sp.add_argument("--out", default="results")
    sp.add_argument("--workers", type=int, default=1)
    sp.set_defaults(fn=cmd_simulate)

    sp = sub.add_parser("alpha-opt", help="optimal regularization for a scenario")
    sp.add_argument("--config", required=True)
    sp.add_argument("--method", default="auto", choices=["auto", "golden", "prop1", "closed-form"])
    sp.set_defaults(fn=cmd_alpha_opt)

    sp = sub.add_parser("bit-alloc", help="feedback-bit allocation search")
    sp.add_argument("--config", required=True)
    sp.add_argument("--budget", type=int, required=True)
    sp.add_argument("--space", default="restricted", choices=list(ba.SPACES))
    sp.add_argument("--workers", type=int, default=1)
    sp.set_defaults(fn=cmd_bit_alloc)

    sp = sub.add_parser("validate", help="residuals of each SINR term against its deterministic limit")
    sp.add_argument("--config", required=True)
    sp.add_argument("--alpha", type=float)
    sp.add_argument("--trials", type=int, default=500)
    sp.add_argument("--seed", type=int, default=0)
    sp.set_defaults(fn=cmd_validate)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.fn(args)
    except (ValueError, OSError, ArithmeticError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
