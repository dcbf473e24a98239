"""Command line entry point: ``hipbot {run,bench,stress,oracle}``."""

from __future__ import annotations

import argparse
import json
import logging
import sys

import numpy as np

from . import bench, oracles, ot
from .world import write_trajectory_csv


def _floats(text):
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma separated numbers, got {text!r}") from exc


def _load(args):
    config = bench.ScenarioConfig.load(args.config) if args.config else bench.ScenarioConfig()
    if args.seeds is not None:
        config = config.override([f"seeds={json.dumps(args.seeds)}"])
    return config.override(args.set) if args.set else config


def _write(text, path):
    if path in (None, "-"):
        sys.stdout.write(text)
    else:
        with open(path, "w", newline="") as fh:
            fh.write(text)


def cmd_run(args):
    config = _load(args)
    record = bench.run_episode(config, args.seed, record=bool(args.dump_traj))
    if args.dump_traj:
        write_trajectory_csv(args.dump_traj, record.trajectory)
    print(json.dumps({"seed": record.seed, "success": record.success, "safe": record.safe,
                      "reached_goal": record.reached_goal, "D2G": round(record.d2g, 4),
                      "TS": record.time_steps, "plan_ms": round(record.plan_ms, 3)}))
    return 0


def cmd_bench(args):
    config = _load(args)
    row, _ = bench.run_batch(config)
    _write(bench.metrics_csv([row]), args.out)
    return 0


def cmd_stress(args):
    config = _load(args)
    if args.seeds is None and not (args.config and "seeds" in json.load(open(args.config))):
        config = config.override(['seeds={"base": 0, "count": 30}'])
    grid = bench.stress_sweep(config, args.velocities, args.noises)
    _write(bench.stress_csv(grid), args.out)
    return 0


def cmd_oracle(args):
    """Print the reference values the derived examples are checked against."""
    rng = np.random.default_rng(args.seed)
    out = {}
    cost = rng.uniform(size=(4, 4))
    marg = np.full(4, 0.25)
    lp_value, lp_plan = oracles.transportation_lp(cost, marg, marg)
    plan = ot.solve_balanced(cost, marg, marg, ot.SolverConfig(lambda_entropy=1e-3))
    out["transport_lp"] = {"cost": cost.round(6).tolist(), "lp_optimum": lp_value,
                           "sinkhorn_cost": plan.transport_cost(cost),
                           "marginal_error": plan.marginal_error}
    out["unbalanced_scalar"] = {"cost": 0.0, "lambda": 1.0, "lambda_kl": 1.0,
                                "minimizer": oracles.unbalanced_scalar(0.0, 1.0, 1.0, 1.0, 1.0)}
    forces = rng.normal(size=(3, 2))
    a = rng.normal(size=(3, 2, 2))
    metrics = a @ np.swapaxes(a, -1, -2)
    weights = rng.uniform(0.1, 1.0, size=3)
    out["weighted_quadratic"] = {
        "weights": weights.round(6).tolist(),
        "minimizer": oracles.weighted_quadratic_minimizer(forces, metrics, weights).tolist()}
    print(json.dumps(out, indent=2))
    return 0


def build_parser():
    parser = argparse.ArgumentParser(prog="hipbot", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="scenario JSON file (defaults apply when omitted)")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override a config key, e.g. planner.horizon=5")
        p.add_argument("--seeds", type=lambda s: [int(x) for x in s.split(",")],
                       help="comma separated seed list")

    p = sub.add_parser("run", help="simulate one episode")
    common(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--dump-traj", metavar="CSV")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("bench", help="run a seeded batch and write a metrics CSV")
    common(p)
    p.add_argument("--out", default="-")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("stress", help="velocity x noise sweep to a long-format CSV")
    common(p)
    p.add_argument("--velocities", type=_floats, required=True)
    p.add_argument("--noises", type=_floats, required=True)
    p.add_argument("--out", default="-")
    p.set_defaults(func=cmd_stress)

    p = sub.add_parser("oracle", help="print oracle reference values")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_oracle)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except bench.ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
