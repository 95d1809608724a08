"""Line-delimited trace events and transcript replay."""

from __future__ import annotations

import enum
import json
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Iterable, Optional

from sigma_agents.core import (
    ALL_ROLES,
    AgentInstruction,
    AgentRole,
    AgentState,
    AgentStatus,
    Segment,
    SegmentKind,
    from_data,
    to_data,
)


class EventKind(str, enum.Enum):
    RUN_START = "RunStart"
    AGENT_STEP = "AgentStep"
    SEARCH_ISSUED = "SearchIssued"
    RESULTS_INJECTED = "ResultsInjected"
    AGENT_TERMINAL = "AgentTerminal"
    MODERATOR_DECISION = "ModeratorDecision"
    RUN_END = "RunEnd"


@dataclass(frozen=True)
class TraceEvent:
    kind: EventKind
    timestamp: float
    role: Optional[AgentRole]
    step: Optional[int]
    payload: dict[str, Any] = field(default_factory=dict)

    def to_json(self) -> str:
        record = {
            "event": self.kind.value,
            "timestamp": self.timestamp,
            "role": self.role.value if self.role else None,
            "step": self.step,
            "payload": self.payload,
        }
        return json.dumps(record, sort_keys=True, ensure_ascii=False, separators=(",", ":"))

    @classmethod
    def from_json(cls, line: str) -> "TraceEvent":
        record = json.loads(line)
        role = record.get("role")
        return cls(
            kind=EventKind(record["event"]),
            timestamp=record["timestamp"],
            role=AgentRole(role) if role else None,
            step=record.get("step"),
            payload=record.get("payload") or {},
        )


class TraceRecorder:
    """Collects events for one query run.

    Each agent appends only to its own list, so workers never contend; the
    merged stream orders run-level start events, then agents in role order,
    then run-level end events, which keeps the file independent of thread
    scheduling. With ``normalized=True`` all timestamps are 0.
    """

    def __init__(self, normalized: bool = False, clock: Callable[[], float] = time.time) -> None:
        self.normalized = normalized
        self._clock = clock
        self._head: list[TraceEvent] = []
        self._agents: dict[AgentRole, list[TraceEvent]] = {r: [] for r in ALL_ROLES}
        self._tail: list[TraceEvent] = []

    def _now(self) -> float:
        return 0.0 if self.normalized else self._clock()

    def emit(
        self,
        kind: EventKind,
        role: Optional[AgentRole] = None,
        step: Optional[int] = None,
        payload: Optional[dict[str, Any]] = None,
    ) -> TraceEvent:
        event = TraceEvent(kind, self._now(), role, step, payload or {})
        if role is not None:
            self._agents[role].append(event)
        elif kind is EventKind.RUN_START:
            self._head.append(event)
        else:
            self._tail.append(event)
        return event

    def events(self) -> list[TraceEvent]:
        merged = list(self._head)
        for role in ALL_ROLES:
            merged.extend(self._agents[role])
        merged.extend(self._tail)
        return merged


def dumps(events: Iterable[TraceEvent]) -> str:
    return "".join(e.to_json() + "\n" for e in events)


def write_trace(events: Iterable[TraceEvent], path: str | Path) -> Path:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(dumps(events), encoding="utf-8")
    except OSError as exc:
        raise OSError(f"cannot write trace to {path}: {exc}") from exc
    return path


def read_trace(path: str | Path) -> list[TraceEvent]:
    path = Path(path)
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise OSError(f"cannot read trace {path}: {exc}") from exc
    return [TraceEvent.from_json(line) for line in lines if line.strip()]


@dataclass
class ReplayedAgent:
    role: AgentRole
    transcript: list[Segment]
    step: int = 0
    budget_remaining: int = 0
    status: AgentStatus = AgentStatus.RUNNING
    error: Optional[str] = None

    def as_state(self) -> AgentState:
        return AgentState(
            self.role, list(self.transcript), self.step,
            self.budget_remaining, self.status, self.error,
        )


def replay(events: Iterable[TraceEvent]) -> dict[AgentRole, ReplayedAgent]:
    """Rebuild every agent's terminal transcript from a trace.

    Initial segments come from the ``RunStart`` event, each ``AgentStep``
    appends the segments it produced, and ``AgentTerminal`` sets the final
    counters and status.
    """
    agents: dict[AgentRole, ReplayedAgent] = {}
    for event in events:
        if event.kind is EventKind.RUN_START:
            question = event.payload["query"]["text"]
            for raw in event.payload["instructions"]:
                instruction = from_data(AgentInstruction, raw)
                agents[instruction.role] = ReplayedAgent(
                    instruction.role,
                    [
                        Segment(SegmentKind.INSTRUCTION, instruction.prompt_text, -1),
                        Segment(SegmentKind.QUERY, question, -1),
                    ],
                    budget_remaining=event.payload["config"]["max_searches"],
                )
        elif event.kind is EventKind.AGENT_STEP and event.role is not None:
            agent = agents[event.role]
            agent.transcript.extend(from_data(list[Segment], event.payload["segments"]))
        elif event.kind is EventKind.AGENT_TERMINAL and event.role is not None:
            agent = agents[event.role]
            agent.step = event.payload["step"]
            agent.budget_remaining = event.payload["budget_remaining"]
            agent.status = AgentStatus(event.payload["status"])
            agent.error = event.payload.get("error")
    return agents


def segments_data(segments: Iterable[Segment]) -> list[Any]:
    return to_data(list(segments))
