"""
Command-line entry point for the nucleation toolkit.

Subcommands cover the parameter table, single simulations, μ_R sampling,
exact enumeration, the toy chain, nucleation studies and the offline
trajectory analyses. Exit codes: 0 success, 2 validation error, 3 capacity
error or a study dominated by truncated replicas.
"""

import sys
import json
import logging
import argparse
from pathlib import Path
from typing import List, Optional

import pandas as pd

from src.config import SimulationConfig, load_params_file, load_plan_file
from src.errors import CapacityError
from src.gibbs import MODES, enumerate_for, sample_many
from src.harness import (
    analyze_study,
    detect_tube,
    history_decomposition,
    run_nucleation,
    summarize_census,
    truncation_dominated,
)
from src.kmc import make_rng, read_log, run_until, write_log
from src.lattice import snapshot_load, snapshot_save
from src.models import ChainMode, StopRule
from src.params import derive, format_derived, lattice_side
from src.toymodel import build_xi, simulate_zeta, solve_table

# Configure logging
logging.basicConfig(
    level=SimulationConfig.LOG_LEVEL,
    format='%(asctime)s - %(name)s - %(levelname)s - %(message)s'
)
logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_CAPACITY = 3


def _params(args):
    params = load_params_file(args.config)
    if getattr(args, "beta", None) is not None:
        params = params.with_beta(args.beta)
    return params


def _side(args, params, derived) -> int:
    if getattr(args, "L", None):
        return args.L
    if params.Theta is None:
        raise ValueError("give --L or set Theta in the parameter file")
    return lattice_side(params.Theta, params.beta, derived.ell_c).L


def cmd_params_show(args) -> int:
    derived = derive(_params(args))
    width = max(len(name) for name, _ in format_derived(derived))
    for name, value in format_derived(derived):
        print(f"{name:<{width}}  {value}")
    return EXIT_OK


def _stop_rule(args, derived) -> StopRule:
    max_events = args.max_events or SimulationConfig.MAX_EVENTS
    if args.stop == "horizon":
        if args.horizon is None:
            raise ValueError("--stop horizon needs --horizon")
        return StopRule(horizon=args.horizon, max_events=max_events)
    if args.stop == "exitR":
        return StopRule.exit_from_R(derived, args.horizon, max_events)
    if args.stop.startswith("cluster="):
        return StopRule(cluster_volume=int(args.stop.split("=", 1)[1]), horizon=args.horizon,
                        max_events=max_events)
    raise ValueError(f"unknown stop rule {args.stop!r}")


def cmd_simulate(args) -> int:
    params = _params(args)
    derived = derive(params)
    rng = make_rng(args.seed)
    if args.snapshot:
        config = snapshot_load(args.snapshot)
    else:
        config = sample_many(params, _side(args, params, derived), 1, rng)[0]
    log = run_until(config, _stop_rule(args, derived), rng, params.beta, params.U)
    write_log(log, args.log)
    print(f"{len(log)} events, stop={log.stop_reason}, t={log.final_time:.6g}")
    return EXIT_OK


def cmd_sample(args) -> int:
    params = _params(args)
    derived = derive(params)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    configs = sample_many(params, _side(args, params, derived), args.count, make_rng(args.seed))
    for k, config in enumerate(configs):
        snapshot_save(config, out / f"sample_{k:04d}.txt")
    print(f"Wrote {len(configs)} snapshots to {out}")
    return EXIT_OK


def cmd_enumerate(args) -> int:
    params = _params(args)
    measure = enumerate_for(params, args.L, args.mode, args.N)
    frame = measure.as_frame()
    if args.out:
        frame.to_csv(args.out, index=False)
    else:
        print(frame.to_csv(index=False), end="")
    return EXIT_OK


def cmd_toy_solve(args) -> int:
    spec = build_xi(_params(args), ChainMode.HISTORY)
    print(pd.DataFrame(solve_table(spec)).to_string(index=False))
    return EXIT_OK


def cmd_toy_simulate(args) -> int:
    spec = build_xi(_params(args), ChainMode.HISTORY)
    rng = make_rng(args.seed)
    rows = []
    for rep in range(args.reps):
        result = simulate_zeta(spec, rng, args.max_steps)
        rows.append({"replica": rep, "steps": result.steps, "truncated": result.truncated,
                     "arrivals": result.arrivals, "failures": result.failures})
    frame = pd.DataFrame(rows)
    if args.out:
        frame.to_csv(args.out, index=False)
    else:
        print(frame.to_csv(index=False), end="")
    return EXIT_OK


def cmd_nucleation_run(args) -> int:
    plan = load_plan_file(args.plan)
    if args.out:
        plan.output_dir = args.out
    records = run_nucleation(plan, args.workers)
    print(f"Wrote {len(records)} records to {plan.output_dir}")
    return EXIT_CAPACITY if truncation_dominated(records) else EXIT_OK


def cmd_nucleation_analyze(args) -> int:
    report = analyze_study(args.records, args.delta)
    print(report.model_dump_json(indent=2))
    return EXIT_OK


def cmd_analyze_tube(args) -> int:
    derived = derive(_params(args))
    deltas = [args.delta] if args.delta is not None else None
    report = detect_tube(read_log(args.log), derived, deltas, args.target_side)
    print(report.model_dump_json(indent=2))
    return EXIT_OK


def cmd_analyze_clouds(args) -> int:
    derived = derive(_params(args))
    census = history_decomposition(read_log(args.log), derived, args.period)
    print(json.dumps(summarize_census(census), indent=2))
    if args.out:
        Path(args.out).write_text(census.model_dump_json(indent=2), encoding="utf-8")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="nucleation", description=__doc__.strip().splitlines()[0])
    commands = parser.add_subparsers(dest="command", required=True)

    def with_config(p, beta=True):
        p.add_argument("--config", required=True, help="key = value parameter file")
        if beta:
            p.add_argument("--beta", type=float, help="override beta")
        return p

    params_cmd = commands.add_parser("params").add_subparsers(dest="action", required=True)
    with_config(params_cmd.add_parser("show")).set_defaults(func=cmd_params_show)

    p = with_config(commands.add_parser("simulate"))
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--stop", default="exitR", help="horizon, exitR or cluster=V")
    p.add_argument("--horizon", type=float)
    p.add_argument("--max-events", type=int)
    p.add_argument("--snapshot", help="initial snapshot (default: a mu_R draw)")
    p.add_argument("--L", type=int)
    p.add_argument("--log", required=True)
    p.set_defaults(func=cmd_simulate)

    p = with_config(commands.add_parser("sample"))
    p.add_argument("--count", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--L", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sample)

    p = with_config(commands.add_parser("enumerate"))
    p.add_argument("--L", type=int, required=True)
    p.add_argument("--mode", choices=MODES, required=True)
    p.add_argument("--N", type=int)
    p.add_argument("--out")
    p.set_defaults(func=cmd_enumerate)

    toy = commands.add_parser("toy").add_subparsers(dest="action", required=True)
    with_config(toy.add_parser("solve")).set_defaults(func=cmd_toy_solve)
    p = with_config(toy.add_parser("simulate"))
    p.add_argument("--reps", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--max-steps", type=int, default=10**7)
    p.add_argument("--out")
    p.set_defaults(func=cmd_toy_simulate)

    nucleation = commands.add_parser("nucleation").add_subparsers(dest="action", required=True)
    p = nucleation.add_parser("run")
    p.add_argument("--plan", required=True)
    p.add_argument("--out", help="override output_dir")
    p.add_argument("--workers", type=int)
    p.set_defaults(func=cmd_nucleation_run)
    p = nucleation.add_parser("analyze")
    p.add_argument("--records", required=True)
    p.add_argument("--delta", type=float)
    p.set_defaults(func=cmd_nucleation_analyze)

    analyze = commands.add_parser("analyze").add_subparsers(dest="action", required=True)
    p = with_config(analyze.add_parser("tube"))
    p.add_argument("--log", required=True)
    p.add_argument("--delta", type=float)
    p.add_argument("--target-side", type=int)
    p.set_defaults(func=cmd_analyze_tube)
    p = with_config(analyze.add_parser("clouds"))
    p.add_argument("--log", required=True)
    p.add_argument("--period", type=float)
    p.add_argument("--out")
    p.set_defaults(func=cmd_analyze_clouds)

    return parser


def main(argv: Optional[List[str]] = None) -> int:
    """
    Parse arguments and run a subcommand.

    Returns:
        int: Process exit code
    """
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except CapacityError as e:
        logger.error(f"Capacity exceeded: {e}")
        print(f"Error: {e}", file=sys.stderr)
        return EXIT_CAPACITY
    except (ValueError, OSError) as e:
        logger.error(f"Command failed: {e}")
        print(f"Error: {e}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
