"""Command-line entry point: ``gridmap gen-case | simulate | bench``."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import bench
from .grid import dump_case, generate_feeder
from .scenario import (HOURS_PER_WEEK, add_noise, inject_outliers, profile_for_network,
                       sample_loads, simulate_dataset, write_dataset)
from .svr import KernelSpec

KERNEL_NAMES = {
    "poly1": KernelSpec("polynomial", 1),
    "poly2": KernelSpec("polynomial", 2),
    "poly3": KernelSpec("polynomial", 3),
    "rbf": KernelSpec("rbf"),
    "linear": KernelSpec("linear"),
}


def _csv_list(text):
    return tuple(item.strip() for item in text.split(",") if item.strip())


def _bus_list(text):
    return tuple(int(item) for item in _csv_list(text))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gridmap",
        description="Learn distribution-grid power flow mappings and benchmark them.")
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen-case", help="generate a random feeder case file")
    gen.add_argument("--n", type=int, required=True, help="number of buses")
    gen.add_argument("--topology", choices=("radial", "mesh"), default="radial")
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--out", required=True, help="output JSON path ('-' for stdout)")

    sim = sub.add_parser("simulate", help="simulate hourly measurements on a case")
    sim.add_argument("--case", required=True, help="case path, bundled name or gen:N")
    sim.add_argument("--weeks", type=int, default=9)
    sim.add_argument("--noise", type=float, default=0.0, help="relative noise std")
    sim.add_argument("--outliers", type=float, default=0.0, help="outlier sample fraction")
    sim.add_argument("--seed", type=int, default=0)
    sim.add_argument("--v-floor", type=float, default=0.9,
                     help="lowest voltage allowed at peak demand (sets load level)")
    sim.add_argument("--out", required=True, help="output CSV path")

    run = sub.add_parser("bench", help="run one benchmark experiment")
    run.add_argument("--experiment", choices=bench.EXPERIMENTS, required=True)
    run.add_argument("--case", default="gen:8", help="case path, bundled name or gen:N[:mesh]")
    run.add_argument("--topology", choices=("radial", "mesh"), default=None,
                     help="topology for generated cases")
    run.add_argument("--seed", type=int, default=0)
    run.add_argument("--format", choices=("csv", "table"), default="csv")
    run.add_argument("--out", default="-", help="report path ('-' for stdout)")
    run.add_argument("--learners", type=_csv_list, default=bench.LEARNERS,
                     help="comma list from svr,reg,lad,avg")
    run.add_argument("--kernels", type=_csv_list, default=("poly1", "poly2", "poly3", "rbf"),
                     help=f"comma list from {','.join(KERNEL_NAMES)}")
    run.add_argument("--target-bus", type=int, default=None)
    run.add_argument("--noise", type=float, default=None)
    run.add_argument("--outliers", type=float, default=None)
    run.add_argument("--observed", type=_bus_list, default=None,
                     help="observed bus ids (partial-observation only)")
    run.add_argument("--train-weeks", type=int, default=6)
    run.add_argument("--test-weeks", type=int, default=3)
    run.add_argument("--timing", action="store_true",
                     help="include wall-clock columns (output is then not reproducible)")
    return parser


def _gen_case(args):
    network = generate_feeder(args.n, args.topology, args.seed)
    text = dump_case(network)
    if args.out == "-":
        print(text)
    else:
        Path(args.out).write_text(text + "\n")


def _simulate(args):
    if args.weeks < 1:
        raise ValueError("--weeks must be >= 1")
    network = bench.load_network(args.case, seed=args.seed)
    profile = profile_for_network(network, v_floor=args.v_floor)
    injections = sample_loads(network, profile, args.weeks * HOURS_PER_WEEK,
                              bench.derive_seed(args.seed, 1))
    ds = simulate_dataset(network, injections)
    ds = add_noise(ds, args.noise, bench.derive_seed(args.seed, 2))
    ds = inject_outliers(ds, args.outliers, seed=bench.derive_seed(args.seed, 3))
    write_dataset(ds, args.out)


def config_from_args(args) -> bench.ExperimentConfig:
    unknown = [k for k in args.kernels if k not in KERNEL_NAMES]
    if unknown:
        raise ValueError(f"unknown kernels {unknown}; choose from {sorted(KERNEL_NAMES)}")
    kwargs = dict(
        experiment=args.experiment, case=args.case, seed=args.seed,
        learners=tuple(args.learners), kernels=tuple(KERNEL_NAMES[k] for k in args.kernels),
        target_bus=args.target_bus, observed=args.observed,
        train_weeks=args.train_weeks, test_weeks=args.test_weeks,
    )
    if args.topology is not None:
        kwargs["topology"] = args.topology
    elif args.experiment == "partial-observation":
        kwargs["topology"] = "mesh"
    if args.experiment == "partial-observation" and args.case == "gen:8":
        kwargs["case"] = "gen:10"
    if args.experiment == "controller-sweep" and args.case == "gen:8":
        kwargs["case"] = "feeder8"
    if args.noise is not None:
        kwargs["noise"] = args.noise
    if args.outliers is not None:
        kwargs["outliers"] = args.outliers
    return bench.ExperimentConfig(**kwargs)


def _bench(args):
    config = config_from_args(args)
    report = bench.run_experiment(config)
    bench.emit_report(report, args.out, args.format, args.timing)
    for note in report.notes:
        print(f"note: {note}", file=sys.stderr)


COMMANDS = {"gen-case": _gen_case, "simulate": _simulate, "bench": _bench}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        COMMANDS[args.command](args)
    except (ValueError, KeyError, OSError) as exc:
        print(f"gridmap: error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
