"""Dataset loading, pass@1 scoring and evaluation sweeps."""

from __future__ import annotations

import json
import logging
import re
import time
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Any, Callable, Optional, Sequence, Union

from sigma_agents.agent_runtime import AllAgentsFailed, run_all_agents
from sigma_agents.backends import Backends
from sigma_agents.core import (
    ALL_ROLES,
    AgentRole,
    AgentState,
    AgentStatus,
    FinalAnswer,
    Query,
    RunConfig,
    to_data,
)
from sigma_agents.moderator import NoAnswer, PriorityScheme, synthesize
from sigma_agents.protocol import normalize_answer
from sigma_agents.trace import EventKind, TraceEvent, TraceRecorder, write_trace

logger = logging.getLogger(__name__)

LETTERS = "ABCDEFGHIJKLMNOPQRSTUVWXYZ"


class ParseError(ValueError):
    def __init__(self, message: str, path: str | Path, lineno: int) -> None:
        self.lineno = lineno
        super().__init__(f"{path}:{lineno}: {message}")


class DuplicateId(ParseError):
    pass


class EmptyDataset(ValueError):
    pass


@dataclass(frozen=True)
class DatasetRecord:
    id: str
    question: str
    answer: str
    choices: Optional[tuple[str, ...]] = None
    subject: Optional[str] = None
    lineno: int = 0

    def gold_index(self) -> Optional[int]:
        """Index of the gold choice, given either as choice text or as a letter."""
        if not self.choices:
            return None
        gold = normalize_answer(self.answer)
        for i, choice in enumerate(self.choices):
            if normalize_answer(choice) == gold:
                return i
        if len(gold) == 1 and gold.upper() in LETTERS[: len(self.choices)]:
            return LETTERS.index(gold.upper())
        return None

    def to_query(self) -> Query:
        text = self.question
        if self.choices:
            options = "\n".join(f"({LETTERS[i]}) {c}" for i, c in enumerate(self.choices))
            text = f"{text}\n\nChoices:\n{options}"
        return Query(self.id, text, self.answer)


def load_dataset(path: str | Path) -> list[DatasetRecord]:
    """Read ``{id, question, answer, choices?, subject?}`` records, one per line."""
    records: list[DatasetRecord] = []
    seen: set[str] = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                raw = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"invalid JSON ({exc.msg})", path, lineno) from None
            if not isinstance(raw, dict):
                raise ParseError("record must be an object", path, lineno)
            for key in ("id", "question", "answer"):
                if raw.get(key) is None or not str(raw[key]).strip():
                    raise ParseError(f"missing or empty field {key!r}", path, lineno)
            choices = raw.get("choices")
            if choices is not None:
                if not isinstance(choices, list) or not choices or len(choices) > len(LETTERS):
                    raise ParseError("choices must be a non-empty list", path, lineno)
                choices = tuple(str(c) for c in choices)
            record = DatasetRecord(
                id=str(raw["id"]),
                question=str(raw["question"]),
                answer=str(raw["answer"]),
                choices=choices,
                subject=raw.get("subject"),
                lineno=lineno,
            )
            if choices is not None and record.gold_index() is None:
                raise ParseError("answer is not one of the choices", path, lineno)
            if record.id in seen:
                raise DuplicateId(f"duplicate id {record.id!r}", path, lineno)
            seen.add(record.id)
            records.append(record)
    return records


_INT = re.compile(r"[+-]?\d+")
_FRACTION = re.compile(r"([+-]?\d+)\s*/\s*([+-]?\d+)")


def _as_rational(value: str) -> Optional[Fraction]:
    if _INT.fullmatch(value):
        return Fraction(int(value))
    match = _FRACTION.fullmatch(value)
    if match and int(match.group(2)) != 0:
        return Fraction(int(match.group(1)), int(match.group(2)))
    return None


def score_answer(
    predicted: Optional[str], gold: str, choices: Optional[Sequence[str]] = None
) -> bool:
    """Exact-match scoring after normalization.

    Integers and simple fractions compare as rationals. Decimals are not
    unified with fractions. For multiple choice, the gold letter or the full
    gold choice text both count.
    """
    if predicted is None:
        return False
    pred = normalize_answer(predicted)
    if choices:
        record = DatasetRecord("_", "_", gold, tuple(choices))
        index = record.gold_index()
        if index is None:
            return pred == normalize_answer(gold)
        return pred in (LETTERS[index].lower(), normalize_answer(choices[index]))
    want = normalize_answer(gold)
    a, b = _as_rational(pred), _as_rational(want)
    if a is not None and b is not None:
        return a == b
    return pred == want


# --------------------------------------------------------------------------
# Single query
# --------------------------------------------------------------------------


@dataclass
class SolveResult:
    query: Query
    states: dict[AgentRole, AgentState]
    final: Optional[FinalAnswer]
    status: str  # answered | no_answer | all_failed
    events: list[TraceEvent] = field(default_factory=list)
    error: Optional[str] = None

    @property
    def answer(self) -> Optional[str]:
        return self.final.answer if self.final else None


def solve_query(
    q: Query,
    cfg: RunConfig,
    backends: Backends,
    *,
    normalized: bool = False,
    concurrent: bool = True,
) -> SolveResult:
    """Run the four agents on ``q`` and moderate their conclusions."""
    recorder = TraceRecorder(normalized=normalized)
    recorder.emit(EventKind.RUN_START, payload={
        "query": to_data(q),
        "instructions": to_data(cfg.instructions),
        "config": {
            "max_searches": cfg.max_searches,
            "max_steps": cfg.max_steps,
            "top_k": cfg.top_k,
            "candidate_pool": cfg.candidate_pool,
            "decoding": to_data(cfg.decoding),
            "priority": to_data(cfg.priority),
            "majority_first": cfg.majority_first,
        },
    })
    status, error, final = "answered", None, None
    try:
        states = run_all_agents(q, cfg, backends, recorder, concurrent=concurrent)
    except AllAgentsFailed as exc:
        states, status, error = exc.states, "all_failed", str(exc)
    if status == "answered":
        try:
            final = synthesize(q, states, PriorityScheme(cfg.priority), cfg.majority_first)
        except NoAnswer as exc:
            status, error = "no_answer", str(exc)
    recorder.emit(EventKind.MODERATOR_DECISION, payload={
        "answer": final.answer if final else None,
        "supporting_roles": to_data(final.supporting_roles) if final else [],
        "resolution_log": to_data(final.resolution_log) if final else [],
        "justification": final.justification if final else None,
        "error": error,
    })
    recorder.emit(EventKind.RUN_END, payload={
        "status": status,
        "answer": final.answer if final else None,
        "searches": {r.value: states[r].searches_used for r in ALL_ROLES},
        "steps": {r.value: states[r].step for r in ALL_ROLES},
    })
    return SolveResult(q, states, final, status, recorder.events(), error)


# --------------------------------------------------------------------------
# Sweeps
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class RecordResult:
    id: str
    final_answer: Optional[str]
    correct: bool
    status: str
    searches: dict[str, int]
    steps: dict[str, int]
    agent_status: dict[str, str]
    wall_time: float = 0.0
    error: Optional[str] = None


@dataclass(frozen=True)
class RunReport:
    records: tuple[RecordResult, ...]
    pass_at_1: float
    mean_searches: float
    failure_counts: dict[str, int]

    def to_dict(self, normalized: bool = False) -> dict[str, Any]:
        data = to_data(self)
        if normalized:
            for record in data["records"]:
                record["wall_time"] = 0.0
        return data


def aggregate(results: Sequence[RecordResult]) -> RunReport:
    n = len(results)
    correct = sum(1 for r in results if r.correct)
    total_searches = sum(sum(r.searches.values()) for r in results)
    failures: Counter[str] = Counter()
    for r in results:
        if r.status != "answered":
            failures[r.status] += 1
        for status in r.agent_status.values():
            if status != AgentStatus.CONCLUDED.value:
                failures[status] += 1
    return RunReport(
        records=tuple(results),
        pass_at_1=correct / n if n else 0.0,
        mean_searches=total_searches / n if n else 0.0,
        failure_counts=dict(sorted(failures.items())),
    )


def _trace_name(index: int, record_id: str) -> str:
    safe = re.sub(r"[^A-Za-z0-9._-]", "_", record_id)
    return f"{index:04d}-{safe}.jsonl"


BackendSource = Union[Backends, Callable[[DatasetRecord], Backends]]


def run_eval(
    dataset: Sequence[DatasetRecord],
    cfg: RunConfig,
    backends: BackendSource,
    *,
    parallelism: int = 1,
    trace_dir: str | Path | None = None,
    normalized: bool = False,
) -> RunReport:
    """Solve every record and score pass@1.

    ``backends`` is either one shared backend triple or a factory called per
    record. Per-record failures are scored as incorrect and never stop the
    sweep. Results keep dataset order regardless of ``parallelism``.
    """
    if not dataset:
        raise EmptyDataset("dataset has no records")

    def one(item: tuple[int, DatasetRecord]) -> RecordResult:
        index, record = item
        started = time.perf_counter()
        try:
            triple = backends(record) if callable(backends) else backends
            result = solve_query(record.to_query(), cfg, triple, normalized=normalized)
        except Exception as exc:  # noqa: BLE001 - a sweep never aborts on one record
            logger.exception("record %s failed", record.id)
            return RecordResult(
                record.id, None, False, "error", {}, {}, {},
                0.0 if normalized else time.perf_counter() - started, str(exc),
            )
        if trace_dir is not None:
            write_trace(result.events, Path(trace_dir) / _trace_name(index, record.id))
        return RecordResult(
            id=record.id,
            final_answer=result.answer,
            correct=score_answer(result.answer, record.answer, record.choices),
            status=result.status,
            searches={r.value: result.states[r].searches_used for r in ALL_ROLES},
            steps={r.value: result.states[r].step for r in ALL_ROLES},
            agent_status={r.value: result.states[r].status.value for r in ALL_ROLES},
            wall_time=0.0 if normalized else time.perf_counter() - started,
            error=result.error,
        )

    items = list(enumerate(dataset))
    if parallelism <= 1:
        results = [one(item) for item in items]
    else:
        with ThreadPoolExecutor(max_workers=parallelism, thread_name_prefix="record") as pool:
            results = list(pool.map(one, items))
    return aggregate(results)


def write_report(report: RunReport, path: str | Path, normalized: bool = False) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    line = json.dumps(report.to_dict(normalized), sort_keys=True, ensure_ascii=False)
    path.write_text(line + "\n", encoding="utf-8")
    return path
