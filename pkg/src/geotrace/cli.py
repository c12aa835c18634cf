"""Command-line front end.

Exit codes: 0 success, 1 configuration or usage problem, 2 integrity
failure (tampered transcript or evidence), 3 audit violations found.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
from pathlib import Path

from .actors.intermediaries import read_itpa_records
from .actors.lp import read_evidence
from .audit import audit, write_audit_report
from .crypto import load_public_registry
from .runner import ADVERSARY_MODES, run_simulation
from .simnet import replay_file
from .synthgen import ScenarioConfig, ScenarioError, load_scenario

log = logging.getLogger("geotrace")

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_INTEGRITY = 2
EXIT_VIOLATIONS = 3


class _Parser(argparse.ArgumentParser):
    """argparse exits with status 2 on usage errors; that code is reserved
    for integrity failures here, so remap usage problems to 1."""

    def error(self, message: str) -> None:  # type: ignore[override]
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _setup_logging() -> None:
    level_name = os.environ.get("GEOTRACE_LOG", "WARNING").upper()
    level = getattr(logging, level_name, None)
    if not isinstance(level, int):
        level = logging.WARNING
    logging.basicConfig(
        level=level, format="%(asctime)s %(levelname)s %(name)s: %(message)s"
    )


def _build_parser() -> _Parser:
    parser = _Parser(prog="geotrace")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="simulate tracing rounds end to end")
    run.add_argument("--scenario", help="scenario TOML file (default settings if omitted)")
    run.add_argument("--seed", type=int, default=42)
    run.add_argument("--days", type=int, help="override scenario day count")
    run.add_argument(
        "--lp-coverage", type=float, help="override fraction of users the LP covers"
    )
    run.add_argument(
        "--population", type=int, help="override scenario population size"
    )
    run.add_argument(
        "--adversary", choices=ADVERSARY_MODES, default="none",
        help="attack model to run alongside the protocol",
    )
    run.add_argument("--out", default="out", help="artifact directory")
    run.add_argument(
        "--workers", type=int, default=1,
        help="threads for metric computation (output is identical either way)",
    )
    run.add_argument(
        "--repeat", type=int, default=1,
        help="run N times and fail unless transcripts and reports are byte-identical",
    )

    aud = sub.add_parser("audit", help="audit retained evidence offline")
    aud.add_argument("--evidence", required=True)
    aud.add_argument("--itpa-records", required=True)
    aud.add_argument("--public-keys", required=True)
    aud.add_argument("--out", help="write the audit report JSON here")

    rep = sub.add_parser("replay", help="re-verify a transcript offline")
    rep.add_argument("--transcript", required=True)
    rep.add_argument("--public-keys", required=True)
    return parser


def _load_run_config(args: argparse.Namespace) -> ScenarioConfig:
    config = load_scenario(args.scenario) if args.scenario else ScenarioConfig()
    overrides = {}
    if args.days is not None:
        overrides["days"] = args.days
    if args.lp_coverage is not None:
        overrides["lp_coverage"] = args.lp_coverage
    if args.population is not None:
        overrides["population"] = args.population
    if overrides:
        config = dataclasses.replace(config, **overrides)
    return config


def _cmd_run(args: argparse.Namespace) -> int:
    config = _load_run_config(args)
    if args.repeat < 1:
        raise ScenarioError("--repeat must be at least 1")
    out_root = Path(args.out)

    results = []
    for attempt in range(args.repeat):
        out_dir = out_root if args.repeat == 1 else out_root / f"run_{attempt:02d}"
        result = run_simulation(
            config,
            seed=args.seed,
            out_dir=out_dir,
            adversary=args.adversary,
            workers=args.workers,
        )
        results.append(result)
        log.info(
            "run %d: %d rounds, audit ok=%s, replay ok=%s",
            attempt,
            len(result.outcomes),
            result.audit_report.ok,
            result.replay_ok,
        )

    if args.repeat > 1:
        first = results[0].out_dir
        for result in results[1:]:
            for name in ("transcript.jsonl", "run_report.json"):
                if (first / name).read_bytes() != (result.out_dir / name).read_bytes():
                    print(
                        f"determinism check failed: {name} differs between "
                        f"{first} and {result.out_dir}",
                        file=sys.stderr,
                    )
                    return EXIT_INTEGRITY
        print(f"determinism check passed across {args.repeat} runs")

    final = results[-1]
    summary = {
        "out_dir": str(final.out_dir),
        "rounds": len(final.outcomes),
        "audit_ok": final.audit_report.ok,
        "violations": len(final.audit_report.violations),
        "transcript_replay_ok": final.replay_ok,
        "metrics": final.report.get("metrics", {}),
    }
    print(json.dumps(summary, indent=2, sort_keys=True))
    return final.exit_code


def _cmd_audit(args: argparse.Namespace) -> int:
    try:
        evidence = read_evidence(args.evidence)
        records = read_itpa_records(args.itpa_records)
        public_keys = load_public_registry(args.public_keys)
    except (OSError, ValueError, KeyError) as exc:
        print(f"cannot load audit inputs: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    report = audit(evidence, records, public_keys)
    if args.out:
        write_audit_report(report, args.out)
    print(json.dumps(report.to_json_dict(), indent=2, sort_keys=True))
    if report.aborted:
        return EXIT_INTEGRITY
    if report.violations:
        return EXIT_VIOLATIONS
    return EXIT_OK


def _cmd_replay(args: argparse.Namespace) -> int:
    try:
        public_keys = load_public_registry(args.public_keys)
    except (OSError, ValueError, KeyError) as exc:
        print(f"cannot load public keys: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    report = replay_file(args.transcript, public_keys)
    print(
        json.dumps(
            {
                "entries": report.n_entries,
                "ok": report.ok,
                "failures": list(report.failures),
            },
            indent=2,
            sort_keys=True,
        )
    )
    return EXIT_OK if report.ok else EXIT_INTEGRITY


def main(argv: list[str] | None = None) -> int:
    _setup_logging()
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "run":
            return _cmd_run(args)
        if args.command == "audit":
            return _cmd_audit(args)
        if args.command == "replay":
            return _cmd_replay(args)
    except ScenarioError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    parser.error(f"unknown command {args.command!r}")
    return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
