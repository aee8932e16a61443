"""Command-line entry points: evaluate, bound, solve, generate, rank, report."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path


def _evaluate(args) -> int:
    from .evaluator import evaluate_file
    from .model import load_instance

    inst = load_instance(args.instance)
    ev = evaluate_file(inst, args.solution, args.tol)
    if args.json_out:
        Path(args.json_out).write_text(ev.to_json())
    print(repr(ev.score))
    return 0


def _bound(args) -> int:
    from .equilibrium import aggregate_curves, bound_report, curve_dump, equilibrium_totals
    from .evaluator import evaluate_file
    from .model import load_instance

    inst = load_instance(args.instance)
    if args.solution:
        ev = evaluate_file(inst, args.solution)
        if not ev.feasible:
            print("solution is infeasible; no gap", file=sys.stderr)
            return 1
        doc = bound_report(inst, ev).to_dict()
    else:
        surplus, cost, res = equilibrium_totals(inst)
        doc = {"equilibrium_surplus": surplus, "equilibrium_gen_cost": cost,
               "per_interval": [{"interval": t, "q_star": r.q_star, "surplus": r.surplus,
                                 "gen_cost": r.gen_cost} for t, r in enumerate(res)]}
    print(json.dumps(doc, indent=1, sort_keys=True))
    if args.curves:
        dump = [curve_dump(*aggregate_curves(inst, t)) for t in range(inst.n_intervals)]
        Path(args.curves).write_text(json.dumps(dump))
    return 0


def _solve(args) -> int:
    from .model import load_instance
    from .solver import BudgetTooSmall, SolverConfig, solve

    inst = load_instance(args.instance)
    cfg = SolverConfig(wall_clock_budget=args.budget, seed=args.seed,
                       enable_batch_rounding=not args.no_batch_rounding,
                       enable_switch_search=args.switch_search,
                       enable_lodf_screen=not args.no_lodf_screen,
                       polish_rounds=args.polish_rounds)

    def trace(rec):
        logging.getLogger("go3kit.solve").info("%s score=%.6g class=%s", rec["label"], rec["score"],
                                                 rec["class"])

    try:
        solve(inst, cfg, out_path=args.out, trace=trace)
    except BudgetTooSmall as exc:
        print(f"no feasible solution: {exc}", file=sys.stderr)
        return 2
    return 0


def _generate(args) -> int:
    from .harness.generate import generate_scenario
    from .model import save_instance

    save_instance(generate_scenario(args.preset, args.seed), args.out)
    return 0


def _rank(args) -> int:
    from .harness.tournament import load_limits, load_manifest, run_tournament, write_results

    src = Path(args.instances)
    paths = sorted(src.glob("*.json")) if src.is_dir() else [src]
    res = run_tournament(paths, load_manifest(args.solvers), load_limits(args.limits),
                         workdir=Path(args.out) / "runs", jobs=args.jobs)
    write_results(res, args.out)
    print(res.table.format())
    return 0


def _report(args) -> int:
    from .harness.report import load_evaluations, report, write_report

    rep = report(load_evaluations(args.evals))
    write_report(rep, args.out)
    print(f"{len(rep)} rows")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="go3kit")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="cmd", required=True)

    e = sub.add_parser("evaluate", help="score a solution file")
    e.add_argument("--instance", required=True)
    e.add_argument("--solution", required=True)
    e.add_argument("--tol", type=float, default=1e-6)
    e.add_argument("--json-out")
    e.set_defaults(fn=_evaluate)

    b = sub.add_parser("bound", help="market-equilibrium bound and gap")
    b.add_argument("--instance", required=True)
    b.add_argument("--solution")
    b.add_argument("--curves", help="write supply/demand staircases per interval")
    b.set_defaults(fn=_bound)

    s = sub.add_parser("solve", help="run the baseline solver")
    s.add_argument("--instance", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--budget", type=float, default=60.0)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--no-batch-rounding", action="store_true")
    s.add_argument("--switch-search", action="store_true")
    s.add_argument("--no-lodf-screen", action="store_true")
    s.add_argument("--polish-rounds", type=int)
    s.set_defaults(fn=_solve)

    g = sub.add_parser("generate", help="write a generated scenario")
    g.add_argument("--preset", required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.set_defaults(fn=_generate)

    r = sub.add_parser("rank", help="run a tournament")
    r.add_argument("--instances", required=True, help="directory of instance JSON files")
    r.add_argument("--solvers", required=True, help="JSON manifest of [name, command] pairs")
    r.add_argument("--limits", required=True, help="seconds, or JSON {division: seconds}")
    r.add_argument("--out", required=True)
    r.add_argument("--jobs", type=int)
    r.set_defaults(fn=_rank)

    o = sub.add_parser("report", help="penalty breakdown from tournament evaluations")
    o.add_argument("--evals", required=True)
    o.add_argument("--out", required=True)
    o.set_defaults(fn=_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
