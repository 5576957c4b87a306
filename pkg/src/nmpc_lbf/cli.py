"""Command line entry point ``nmpc-lbf``."""
from __future__ import annotations

import argparse
import json
import logging
import sys

from . import simulator
from .simulator import ParseError, ValidationError

EXIT_OK, EXIT_FAIL, EXIT_IO = 0, 1, 2


def _load(path):
    try:
        return simulator.load_scenario(path), None
    except (ParseError, ValidationError) as exc:
        print(f"invalid scenario: {exc}", file=sys.stderr)
        return None, EXIT_FAIL
    except OSError as exc:
        print(f"cannot read scenario: {exc}", file=sys.stderr)
        return None, EXIT_IO


def cmd_validate(args) -> int:
    sc, err = _load(args.scenario)
    if sc is None:
        return err
    print(f"ok: {sc.name}: {len(sc.robots)} robot(s), {len(sc.obstacles)} obstacle(s)")
    return EXIT_OK


def cmd_run(args) -> int:
    sc, err = _load(args.scenario)
    if sc is None:
        return err
    if args.max_ticks is not None and args.max_ticks < 0:
        print("--max-ticks must be >= 0", file=sys.stderr)
        return EXIT_FAIL
    if args.seed is not None:
        sc.seed = args.seed
    try:
        res = simulator.run(sc, args.out, seed=args.seed, max_ticks=args.max_ticks,
                            dump_datasets=args.dump_datasets, dump_weights=args.dump_weights)
    except OSError as exc:
        print(f"cannot write run logs: {exc}", file=sys.stderr)
        return EXIT_IO
    summary = simulator.summarize(res) if any(res.records.values()) else None
    print(json.dumps({"scenario": res.scenario, "outcomes": res.outcomes, "ticks": res.ticks,
                      "min_clearance_m": summary.min_clearance_m if summary else None,
                      "success": res.success}, default=str))
    return EXIT_OK if res.success else EXIT_FAIL


def cmd_plotdata(args) -> int:
    try:
        paths = simulator.write_plot_data(args.run)
    except OSError as exc:
        print(f"cannot build plot data: {exc}", file=sys.stderr)
        return EXIT_IO
    for p in paths:
        print(p)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="nmpc-lbf", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true", help="log warnings and progress")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="simulate a scenario and write logs")
    p.add_argument("--scenario", required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, default=None, help="override the scenario seed")
    p.add_argument("--max-ticks", type=int, default=None)
    p.add_argument("--dump-datasets", action="store_true")
    p.add_argument("--dump-weights", action="store_true")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("validate", help="check a scenario file")
    p.add_argument("--scenario", required=True)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("plotdata", help="resample run logs into plot-ready CSVs")
    p.add_argument("--run", required=True, help="run directory")
    p.set_defaults(func=cmd_plotdata)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR,
                        format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
