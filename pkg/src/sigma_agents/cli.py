"""Command-line entry point.

    sigma-agents solve --config cfg.yaml --query "..." [--out DIR] [--trace PATH]
    sigma-agents eval --config cfg.yaml --dataset data.jsonl --out DIR [--parallelism N]
    sigma-agents replay --trace PATH
    sigma-agents validate-config --config cfg.yaml

Answers and pass@1 go to stdout, diagnostics to stderr. Exit codes: 0 on
success, 1 on usage or configuration errors, 2 when no agent answered.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

from sigma_agents.backends import build_backends
from sigma_agents.config import load_config
from sigma_agents.core import ALL_ROLES, ConfigError, Query, RunConfig, validate_config
from sigma_agents.harness import (
    DatasetRecord,
    ParseError,
    load_dataset,
    run_eval,
    solve_query,
    write_report,
)
from sigma_agents.moderator import conclusion_from_state
from sigma_agents.trace import EventKind, read_trace, replay, write_trace

logger = logging.getLogger("sigma_agents")

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_NO_ANSWER = 2


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> None:  # type: ignore[override]
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="sigma-agents", description=__doc__.splitlines()[0] if __doc__ else None)
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging on stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", required=True, help="YAML/JSON run configuration")
        p.add_argument("--backend", choices=("scripted", "http"), help="override the model backend kind")
        p.add_argument("--max-searches", type=int, help="override max_searches")
        p.add_argument("--max-steps", type=int, help="override max_steps")
        p.add_argument(
            "--normalize-timestamps", action="store_true",
            help="write timestamps as 0 so traces are byte-comparable",
        )

    solve = sub.add_parser("solve", help="answer one query")
    common(solve)
    group = solve.add_mutually_exclusive_group(required=True)
    group.add_argument("--query", help="query text")
    group.add_argument("--query-file", help="file containing the query text")
    solve.add_argument("--query-id", default="query")
    solve.add_argument("--out", default=".", help="directory for the default trace file")
    solve.add_argument("--trace", help="trace file path (default: OUT/<query-id>.trace.jsonl)")

    ev = sub.add_parser("eval", help="run a dataset sweep and report pass@1")
    common(ev)
    ev.add_argument("--dataset", required=True)
    ev.add_argument("--out", required=True, help="output directory for report.json and traces/")
    ev.add_argument("--parallelism", type=int, default=1)

    rp = sub.add_parser("replay", help="render the transcripts stored in a trace")
    rp.add_argument("--trace", required=True)

    vc = sub.add_parser("validate-config", help="check a configuration file")
    vc.add_argument("--config", required=True)
    return parser


def _config(args: argparse.Namespace) -> RunConfig:
    cfg = load_config(args.config)
    overrides = {}
    if getattr(args, "max_searches", None) is not None:
        overrides["max_searches"] = args.max_searches
    if getattr(args, "max_steps", None) is not None:
        overrides["max_steps"] = args.max_steps
    if getattr(args, "backend", None):
        model = dataclasses.replace(cfg.backends.model, kind=args.backend)
        overrides["backends"] = dataclasses.replace(cfg.backends, model=model)
    return validate_config(dataclasses.replace(cfg, **overrides)) if overrides else cfg


def _solve(args: argparse.Namespace) -> int:
    cfg = _config(args)
    base_dir = Path(args.config).resolve().parent
    if args.query_file:
        try:
            text = Path(args.query_file).read_text(encoding="utf-8").strip()
        except OSError as exc:
            raise ConfigError(f"cannot read query file: {exc}") from None
    else:
        text = args.query
    if not text or not text.strip():
        raise ConfigError("query text is empty", "--query")
    q = Query(args.query_id, text)
    backends = build_backends(cfg.backends, base_dir, q.id)
    result = solve_query(q, cfg, backends, normalized=args.normalize_timestamps)
    trace_path = Path(args.trace) if args.trace else Path(args.out) / f"{q.id}.trace.jsonl"
    write_trace(result.events, trace_path)

    print(f"answer: {result.answer if result.answer is not None else '(none)'}")
    for role in ALL_ROLES:
        state = result.states[role]
        own = conclusion_from_state(state).answer
        print(
            f"{role.value}: {own if own is not None else '-'} "
            f"(status={state.status.value}, searches={state.searches_used}, steps={state.step})"
        )
    print(f"trace: {trace_path}")
    if result.final is None:
        logger.error("no answer: %s", result.error)
        return EXIT_NO_ANSWER
    return EXIT_OK


def _eval(args: argparse.Namespace) -> int:
    cfg = _config(args)
    base_dir = Path(args.config).resolve().parent
    try:
        dataset = load_dataset(args.dataset)
    except FileNotFoundError:
        raise ConfigError(f"dataset not found: {args.dataset}") from None
    if not dataset:
        raise ConfigError(f"dataset has no records: {args.dataset}")
    if args.parallelism < 1:
        raise ConfigError("must be >= 1", "--parallelism")
    # validate backend settings once before the sweep
    build_backends(cfg.backends, base_dir, dataset[0].id)

    def factory(record: DatasetRecord):
        return build_backends(cfg.backends, base_dir, record.id)

    out = Path(args.out)
    report = run_eval(
        dataset, cfg, factory,
        parallelism=args.parallelism,
        trace_dir=out / "traces",
        normalized=args.normalize_timestamps,
    )
    write_report(report, out / "report.json", normalized=args.normalize_timestamps)
    for record in report.records:
        mark = "correct" if record.correct else "wrong"
        print(f"{record.id}: {record.final_answer if record.final_answer is not None else '(none)'} {mark}")
    print(f"pass@1 {round(report.pass_at_1, 4)}")
    return EXIT_OK


def _replay(args: argparse.Namespace) -> int:
    try:
        events = read_trace(args.trace)
    except OSError as exc:
        raise ConfigError(str(exc)) from None
    agents = replay(events)
    for role in ALL_ROLES:
        if role not in agents:
            continue
        agent = agents[role]
        print(f"=== {role.value} ({agent.status.value}, steps={agent.step}) ===")
        for segment in agent.transcript:
            print(f"[{segment.kind.value}] {segment.text}")
        print()
    for event in events:
        if event.kind is EventKind.MODERATOR_DECISION:
            print("=== Moderator ===")
            print(event.payload.get("justification") or f"no answer: {event.payload.get('error')}")
    return EXIT_OK


def _validate(args: argparse.Namespace) -> int:
    load_config(args.config)
    print("config ok")
    return EXIT_OK


COMMANDS = {
    "solve": _solve,
    "eval": _eval,
    "replay": _replay,
    "validate-config": _validate,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        stream=sys.stderr,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, ParseError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
