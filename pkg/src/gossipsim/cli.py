"""``gossipsim`` command line: run, replay, bench, acceptance."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .engine import GraphMismatchError, TraceFormatError
from .graph import GraphError, read_edge_list


def _cmd_run(args) -> int:
    from .harness import ConfigError, load_config, run_experiment

    try:
        cfg = load_config(args.config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    res = run_experiment(cfg, workers=args.workers, out_dir=args.out_dir,
                         seed_offset=args.seed_offset, strict=args.strict)
    print(f"{len(res.rows)} runs, {len(res.failures)} failed; csv: {res.csv_path}, summary: {res.json_path}")
    return res.exit_code


def _cmd_replay(args) -> int:
    from .harness import replay_file

    g = None
    try:
        if args.graph:
            g = read_edge_list(Path(args.graph).read_text())
        rep = replay_file(Path(args.trace).read_text(), g)
    except (TraceFormatError, GraphMismatchError, GraphError) as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    print(f"n={rep.n} iterations={rep.iterations} rounds={rep.rounds} calls={rep.calls}")
    print(f"digest: {'match' if rep.digest_ok else 'DIVERGED'}")
    oracle = {None: "skipped", True: "pass", False: "FAIL"}[rep.oracle_ok]
    print(f"oracle: {oracle}")
    for v in rep.violations[:20]:
        print(f"violation: {v}")
    if args.states_out:
        Path(args.states_out).write_text(json.dumps(rep.final_states) + "\n")
    return 0 if rep.ok() else 1


def _cmd_bench(args) -> int:
    from .harness import ConfigError, bench, bench_csv, load_config

    try:
        cfg = load_config(args.config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    text = bench_csv(bench(cfg))
    if args.out_dir:
        out = Path(args.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "bench.csv").write_text(text)
    sys.stdout.write(text)
    return 0


def _cmd_acceptance(args) -> int:
    from .acceptance import run_all

    results = run_all(full=args.full, workers=args.workers)
    return 0 if all(r.passed for r in results) else 1


def build_parser() -> argparse.ArgumentParser:
    from .harness import default_workers

    p = argparse.ArgumentParser(prog="gossipsim", description="Round-synchronous gossip simulator.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="cmd", required=True)

    r = sub.add_parser("run", help="run an experiment config")
    r.add_argument("config")
    r.add_argument("--workers", type=int, default=default_workers())
    r.add_argument("--out-dir", default="gossipsim-out")
    r.add_argument("--seed-offset", type=int, default=0)
    r.add_argument("--strict", action="store_true", help="treat warnings as failures")
    r.set_defaults(func=_cmd_run)

    rp = sub.add_parser("replay", help="replay an exported trace and re-verify it")
    rp.add_argument("trace")
    rp.add_argument("--graph", help="edge list, if the trace has no embedded graph")
    rp.add_argument("--states-out", help="write final rumor sets as JSON")
    rp.set_defaults(func=_cmd_replay)

    b = sub.add_parser("bench", help="time protocols on the configured graphs")
    b.add_argument("config")
    b.add_argument("--out-dir")
    b.set_defaults(func=_cmd_bench)

    a = sub.add_parser("acceptance", help="run the acceptance criteria")
    a.add_argument("--full", action="store_true", help="full corpus and seed counts")
    a.add_argument("--workers", type=int, default=default_workers())
    a.set_defaults(func=_cmd_acceptance)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
