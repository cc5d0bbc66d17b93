"""Command-line entry point: ``ehrdeleg run|audit|replay|list``."""

from __future__ import annotations

import argparse
import json
import sys

from .errors import FormatError, ProtocolError
from .scenario import (
    ScenarioError,
    audit_dir,
    bundled_scenarios,
    load_config,
    replay,
    run_config,
    write_outputs,
)


def _print_steps(result) -> None:
    for s in result.steps:
        mark = "ok  " if s.ok else "FAIL"
        extra = {k: v for k, v in s.detail.items() if k != "outcomes"}
        print(f"  [{mark}] {result.config.steps[s.index].describe(s.index)} {json.dumps(extra, sort_keys=True)}")
        for row in s.detail.get("outcomes", []):
            print(f"         {row['scenario']:<22} {row['stride']:<24} "
                  f"expected={row['expected']} observed={row['observed']}")


def cmd_run(args) -> int:
    try:
        config = load_config(args.config, seed=args.seed, profile=args.profile)
    except ScenarioError as exc:
        print(f"invalid scenario: {exc}", file=sys.stderr)
        return 2
    result = run_config(config)
    out = write_outputs(result, args.out)
    print(f"scenario {config.name} seed={config.seed} profile={config.profile} "
          f"({result.elapsed:.2f}s)")
    _print_steps(result)
    print(f"ledger head {result.world.ledger.head_hash.hex()}")
    print(f"outputs written to {out}")
    if not result.ok:
        print(f"expectation failed at {result.failed_step()}", file=sys.stderr)
    return result.exit_code


def cmd_audit(args) -> int:
    try:
        report = audit_dir(args.dir)
    except (FormatError, OSError, KeyError) as exc:
        print(f"cannot audit {args.dir}: {exc}", file=sys.stderr)
        return 2
    print(report.render())
    print(f"transcript digest {report.transcript_digest}")
    print(f"ledger head {report.ledger_head}")
    return 0 if report.all_pass and report.conclusive else 1


def cmd_replay(args) -> int:
    try:
        verdict = replay(args.dir, seed=args.seed)
    except (ScenarioError, OSError) as exc:
        print(f"cannot replay {args.dir}: {exc}", file=sys.stderr)
        return 2
    print(verdict)
    return 0 if verdict.verdict == "identical" else 1


def cmd_list(args) -> int:
    for name in bundled_scenarios():
        print(name)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ehrdeleg", description="Pre-delegated multi-party EHR access simulator"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="execute a scenario file or bundled scenario")
    p.add_argument("config", help="path to a YAML scenario, or a bundled scenario name")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, help="override the scenario seed")
    p.add_argument("--profile", choices=("toy", "production"), help="override the cipher profile")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("audit", help="recompute the who-knows-what report for a run directory")
    p.add_argument("dir")
    p.set_defaults(func=cmd_audit)

    p = sub.add_parser("replay", help="re-execute a run and compare ledger record hashes")
    p.add_argument("dir")
    p.add_argument("--seed", type=int, help="replay under a different seed")
    p.set_defaults(func=cmd_replay)

    p = sub.add_parser("list", help="list bundled scenarios")
    p.set_defaults(func=cmd_list)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ProtocolError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
