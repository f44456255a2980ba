"""Command line entry point: run, replay, validate and batch scenarios."""

from __future__ import annotations

import argparse
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import List, Optional, Tuple

from .engine import InvariantViolation, Simulation
from .membership import dump_matrix
from .replay import Divergence, VersionMismatch, replay
from .scenario import ParseError, load_scenario

EXIT_PARSE = 2
EXIT_INTERNAL = 70
OUT_ENV = "SODSIM_OUT"


def _out_dir(arg: Optional[str], scenario: Path) -> Path:
    base = Path(arg or os.environ.get(OUT_ENV) or "sodsim-out")
    return base if arg else base / scenario.stem


def _run_one(path: str, seed: Optional[int], out: Optional[str], store: Optional[str]) -> Tuple[str, int, str]:
    scenario = Path(path)
    try:
        spec = load_scenario(scenario)
    except ParseError as exc:
        return path, EXIT_PARSE, f"parse error: {exc}"
    sim = Simulation(spec, store, seed)
    try:
        report = sim.run()
    except InvariantViolation as exc:
        return path, EXIT_INTERNAL, f"internal error: invariant {exc.name}: {exc}"
    sim.write_artifacts(_out_dir(out, scenario))
    msg = (f"{report.outcome} completion={report.completion:.3f} ticks={report.end_tick} "
           f"digest={report.telemetry_digest}")
    return path, report.exit_code, msg


def cmd_run(args) -> int:
    _, code, msg = _run_one(args.scenario, args.seed, args.out, args.store)
    print(msg, file=sys.stderr if code in (EXIT_PARSE, EXIT_INTERNAL) else sys.stdout)
    return code


def cmd_validate(args) -> int:
    try:
        spec = load_scenario(args.scenario)
    except ParseError as exc:
        print(f"parse error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    print(f"ok: {spec.section('scenario')['name']} ({len(spec.drones)} drones, "
          f"{len(spec.section('mission')['objective'])} objectives, {len(spec.events)} events)")
    return 0


def cmd_replay(args) -> int:
    try:
        spec = load_scenario(args.scenario)
    except ParseError as exc:
        print(f"parse error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    try:
        result = replay(Path(args.log).read_text(), spec)
    except VersionMismatch as exc:
        print(f"version mismatch: {exc}", file=sys.stderr)
        return 1
    except InvariantViolation as exc:
        print(f"internal error: invariant {exc.name}", file=sys.stderr)
        return EXIT_INTERNAL
    if isinstance(result, Divergence):
        exp = result.expected.to_line() if result.expected else "<end of log>"
        act = result.actual.to_line() if result.actual else "<end of run>"
        print(f"divergence at record {result.index}\n  log: {exp}\n  run: {act}")
        return 1
    print(f"verified {result.records} records")
    return 0


def cmd_dump_matrix(args) -> int:
    sys.stdout.write(dump_matrix())
    return 0


def cmd_batch(args) -> int:
    paths = sorted(str(p) for p in Path(args.dir).glob("*.toml"))
    if not paths:
        print(f"no scenarios in {args.dir}", file=sys.stderr)
        return EXIT_PARSE
    base = args.out or os.environ.get(OUT_ENV) or "sodsim-out"
    outs = [str(Path(base) / Path(p).stem) for p in paths]
    jobs = max(1, args.jobs)
    if jobs == 1:
        results = [_run_one(p, None, o, None) for p, o in zip(paths, outs)]
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_one, paths, [None] * len(paths), outs, [None] * len(paths)))
    worst = 0
    for path, code, msg in results:
        print(f"{Path(path).name}: {msg}")
        worst = max(worst, code)
    return worst


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sodsim", description=__doc__)
    sub = parser.add_subparsers(dest="verb", required=True)

    p = sub.add_parser("run", help="run one scenario and write its artifacts")
    p.add_argument("scenario")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", default=None, help=f"output directory (default ${OUT_ENV}/<name>)")
    p.add_argument("--store", default=None, help="persistent knowledge store file")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("replay", help="re-run a scenario and compare with a telemetry log")
    p.add_argument("log")
    p.add_argument("scenario")
    p.set_defaults(func=cmd_replay)

    p = sub.add_parser("dump-matrix", help="print the challenge importance table as CSV")
    p.set_defaults(func=cmd_dump_matrix)

    p = sub.add_parser("batch", help="run every scenario in a directory")
    p.add_argument("dir")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_batch)

    p = sub.add_parser("validate", help="parse a scenario without running it")
    p.add_argument("scenario")
    p.set_defaults(func=cmd_validate)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
