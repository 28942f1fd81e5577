"""Command line entry point: ``ctarzan simulate|figure|dump-topology``."""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from fractions import Fraction
from pathlib import Path

from .errors import CTarzanError, EquivalenceViolation
from .harness import (
    PRESETS,
    SCALES,
    Aggregate,
    ExperimentConfig,
    compare_many,
    emit_csv,
    preset_figure,
    run_ctarzan_rounds,
    run_tarzan_rounds,
)
from .overlay import Kind, build_topology, dump_topology

EXIT_CONFIG = 2
EXIT_EQUIVALENCE = 3

AGGREGATE_COLUMNS = ("kind", "param", "length", "d", "cover", "forward_hops", "return_hops", "anonymity")


def _fraction(text: str) -> Fraction:
    try:
        return Fraction(text)
    except (ValueError, ZeroDivisionError):
        raise argparse.ArgumentTypeError(f"not a number or fraction: {text!r}") from None


def _write_aggregate(agg: Aggregate, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(AGGREGATE_COLUMNS)
        w.writerow([agg.kind.value, str(agg.param), agg.length, repr(agg.d), repr(agg.cover),
                    repr(agg.forward_hops), repr(agg.return_hops), repr(agg.anonymity)])


def _run_compare(cfgs, out, workers) -> int:
    try:
        rows, _ = compare_many(cfgs, workers=workers)
    except EquivalenceViolation as exc:
        emit_csv(exc.rows, out)
        print(f"equivalence violated: {exc}", file=sys.stderr)
        return EXIT_EQUIVALENCE
    emit_csv(rows, out)
    return 0


def cmd_simulate(args) -> int:
    cfg = ExperimentConfig(n=args.n, kprime=args.kprime, hprime=args.hprime, wf=args.wf,
                           rounds=args.rounds, seed=args.seed, tau=args.tau,
                           samples_per_round=args.samples)
    if args.kind == "compare":
        return _run_compare([cfg], args.out, args.workers)
    if args.kind == "ctarzan":
        agg = run_ctarzan_rounds(cfg, workers=args.workers)
    else:
        k = args.k if args.k is not None else Fraction(3, 2) * cfg.kprime
        agg = run_tarzan_rounds(cfg, k, args.h if args.h is not None else cfg.hprime,
                                workers=args.workers)
    _write_aggregate(agg, args.out)
    return 0


def cmd_figure(args) -> int:
    cfgs = preset_figure(args.name, args.scale, seed=args.seed, samples=args.samples)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return _run_compare(cfgs, out / f"{args.name}.csv", args.workers)


def cmd_dump(args) -> int:
    topo = build_topology(Kind(args.kind), args.n, args.param, args.seed)
    with open(args.out, "w") as fh:
        dump_topology(topo, fh)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ctarzan", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="run one configuration")
    sim.add_argument("--kind", choices=("tarzan", "ctarzan", "compare"), default="compare")
    sim.add_argument("--n", type=int, default=10_000)
    sim.add_argument("--kprime", type=_fraction, default=Fraction(2))
    sim.add_argument("--hprime", type=int, default=4)
    sim.add_argument("--wf", type=float, default=1.9)
    sim.add_argument("--rounds", type=int, default=20)
    sim.add_argument("--samples", type=int, default=100, help="tunnels per round")
    sim.add_argument("--seed", type=int, default=0)
    sim.add_argument("--tau", type=float, default=1.0)
    sim.add_argument("--k", type=_fraction, help="Tarzan k (default 3k'/2)")
    sim.add_argument("--h", type=int, help="Tarzan tunnel length (default h')")
    sim.add_argument("--workers", type=int, default=1)
    sim.add_argument("--out", required=True)
    sim.set_defaults(func=cmd_simulate)

    fig = sub.add_parser("figure", help="regenerate one figure's data file")
    fig.add_argument("--name", required=True, choices=sorted(PRESETS))
    fig.add_argument("--scale", choices=sorted(SCALES), default="desk")
    fig.add_argument("--seed", type=int, default=0)
    fig.add_argument("--samples", type=int, default=100)
    fig.add_argument("--workers", type=int, default=1)
    fig.add_argument("--out", required=True, help="output directory")
    fig.set_defaults(func=cmd_figure)

    dump = sub.add_parser("dump-topology", help="write a topology as text")
    dump.add_argument("--kind", choices=[k.value for k in Kind], required=True)
    dump.add_argument("--n", type=int, required=True)
    dump.add_argument("--param", type=_fraction, required=True, help="k for Tarzan, k' for C-Tarzan")
    dump.add_argument("--seed", type=int, default=0)
    dump.add_argument("--out", required=True)
    dump.set_defaults(func=cmd_dump)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ValueError, KeyError, CTarzanError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
