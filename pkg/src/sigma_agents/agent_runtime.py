"""Independent reasoning-search loops, one per specialist agent.

Each agent alternates model generation with on-demand retrieval until it
produces an answer, hits the step cap, or its backend fails. Search budgets
limit retrieval only: an agent that has spent its budget keeps reasoning and
is told its further search requests were not executed.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional

from sigma_agents.backends import BackendError, Backends, GenerationRequest, prompt_header
from sigma_agents.core import (
    ALL_ROLES,
    ActionKind,
    AgentInstruction,
    AgentRole,
    AgentState,
    AgentStatus,
    Query,
    RankedChunk,
    RunConfig,
    SearchRequest,
    Segment,
    SegmentKind,
    to_data,
)
from sigma_agents.protocol import END_SEARCH, extract_answer, format_search_results, search_queries
from sigma_agents.retrieval import EmbeddingCache, retrieve
from sigma_agents.trace import EventKind, TraceRecorder

logger = logging.getLogger(__name__)

SEGMENT_SEPARATOR = "\n\n"
BUDGET_NOTICE = (
    "[Search budget exhausted: the query above was not executed. "
    "Continue with your own reasoning and give a final answer.]"
)


class AllAgentsFailed(RuntimeError):
    def __init__(self, states: dict[AgentRole, AgentState]) -> None:
        self.states = states
        causes = "; ".join(f"{r.value}: {s.error}" for r, s in states.items())
        super().__init__(f"all agents failed ({causes})")


@dataclass(frozen=True)
class StepOutcome:
    action: ActionKind
    generated_text: str
    search: Optional[tuple[SearchRequest, tuple[RankedChunk, ...]]] = None

    def __post_init__(self) -> None:
        # a Search step blocked by the budget carries no search
        if self.search is not None and self.action is not ActionKind.SEARCH:
            raise ValueError("only Search steps carry a search")


def init_state(instruction: AgentInstruction, q: Query, cfg: RunConfig) -> AgentState:
    return AgentState(
        role=instruction.role,
        transcript=[
            Segment(SegmentKind.INSTRUCTION, instruction.prompt_text, -1),
            Segment(SegmentKind.QUERY, q.text, -1),
        ],
        step=0,
        budget_remaining=cfg.max_searches,
        status=AgentStatus.RUNNING,
    )


def render_transcript(state: AgentState) -> str:
    return SEGMENT_SEPARATOR.join(s.text for s in state.transcript)


def render_prompt(state: AgentState) -> str:
    return prompt_header(state.role, state.step) + "\n" + render_transcript(state)


def classify_action(text: str) -> ActionKind:
    if search_queries(text):
        return ActionKind.SEARCH
    if extract_answer(text) is not None:
        return ActionKind.SYNTHESIZE
    return ActionKind.REASON


def _generate(state: AgentState, backends: Backends, cfg: RunConfig) -> str:
    return backends.model.generate(
        GenerationRequest(
            prompt=render_prompt(state),
            stop_sequences=(END_SEARCH,),
            max_tokens=cfg.decoding.max_tokens,
            temperature=cfg.decoding.temperature,
            seed=cfg.decoding.seed,
        )
    )


def run_step(
    state: AgentState,
    q: Query,
    backends: Backends,
    cfg: RunConfig,
    recorder: Optional[TraceRecorder] = None,
    embedder: Optional[EmbeddingCache] = None,
) -> StepOutcome:
    """One generate-update cycle. Raises BackendError without touching the
    step counter; the caller decides how to terminate."""
    t = state.step
    role = state.role
    text = _generate(state, backends, cfg)
    action = classify_action(text)
    produced: list[Segment] = []
    search = None

    if action is ActionKind.SEARCH:
        produced.append(Segment(SegmentKind.SEARCH_QUERY, text, t))
        state.append(produced[-1])
        if state.budget_remaining > 0:
            ordinal = cfg.max_searches - state.budget_remaining + 1
            req = SearchRequest(role, search_queries(text)[0], ordinal)
            if recorder:
                recorder.emit(EventKind.SEARCH_ISSUED, role, t, {"request": to_data(req)})
            try:
                result = retrieve(q, state, req, backends, cfg, embedder)
            except BackendError:
                # keep the trace replayable up to the failure point
                if recorder:
                    recorder.emit(EventKind.AGENT_STEP, role, t, {
                        "action": action.value,
                        "segments": to_data(produced),
                    })
                raise
            block = format_search_results(result.ranked, cfg.result_char_limit)
            produced.append(Segment(SegmentKind.SEARCH_RESULTS, block, t))
            state.append(produced[-1])
            state.budget_remaining -= 1
            search = (req, result.ranked)
            if recorder:
                recorder.emit(EventKind.RESULTS_INJECTED, role, t, {
                    "ordinal": ordinal,
                    "candidates": [c.doc_id for c in result.candidates],
                    "passage": result.passage.text if result.passage else None,
                    "ranked": [
                        {"doc_id": r.chunk.doc_id, "similarity": r.similarity}
                        for r in result.ranked
                    ],
                })
        else:
            produced.append(Segment(SegmentKind.NOTICE, BUDGET_NOTICE, t))
            state.append(produced[-1])
    elif action is ActionKind.SYNTHESIZE:
        produced.append(Segment(SegmentKind.CONCLUSION, text, t))
        state.append(produced[-1])
    else:
        produced.append(Segment(SegmentKind.REASONING, text, t))
        state.append(produced[-1])

    state.step += 1
    if recorder:
        recorder.emit(EventKind.AGENT_STEP, role, t, {
            "action": action.value,
            "segments": to_data(produced),
        })
    return StepOutcome(action, text, search)


def _step_limit_status(state: AgentState) -> AgentStatus:
    # agents that kept asking for searches past their budget are reported
    # separately from agents that merely reasoned too long
    if any(s.kind is SegmentKind.NOTICE for s in state.transcript):
        return AgentStatus.BUDGET_EXHAUSTED
    return AgentStatus.STEP_LIMIT_REACHED


def run_agent(
    state: AgentState,
    q: Query,
    backends: Backends,
    cfg: RunConfig,
    recorder: Optional[TraceRecorder] = None,
    embedder: Optional[EmbeddingCache] = None,
) -> AgentState:
    """Drive ``state`` to a terminal status and return it."""
    if state.status is not AgentStatus.RUNNING:
        raise ValueError(f"{state.role.value} is already terminal")
    embedder = embedder or EmbeddingCache(backends.embedder)
    while True:
        if state.step >= cfg.max_steps:
            state.finish(_step_limit_status(state))
            break
        try:
            outcome = run_step(state, q, backends, cfg, recorder, embedder)
        except BackendError as exc:
            logger.warning("%s agent failed at step %d: %s", state.role.value, state.step, exc)
            state.finish(AgentStatus.FAILED, str(exc))
            break
        if outcome.action is ActionKind.SYNTHESIZE:
            state.finish(AgentStatus.CONCLUDED)
            break
    if recorder:
        recorder.emit(EventKind.AGENT_TERMINAL, state.role, state.step, {
            "status": state.status.value,
            "step": state.step,
            "budget_remaining": state.budget_remaining,
            "searches_used": state.searches_used,
            "error": state.error,
        })
    return state


def run_all_agents(
    q: Query,
    cfg: RunConfig,
    backends: Backends,
    recorder: Optional[TraceRecorder] = None,
    concurrent: bool = True,
    embedder: Optional[EmbeddingCache] = None,
) -> dict[AgentRole, AgentState]:
    """Run the four agents independently and collect their terminal states.

    Agents share no mutable state besides the (thread-safe) embedding cache.
    Raises :class:`AllAgentsFailed` only when every agent failed.
    """
    embedder = embedder or EmbeddingCache(backends.embedder)
    states = {role: init_state(cfg.instruction_for(role), q, cfg) for role in ALL_ROLES}

    def work(role: AgentRole) -> AgentState:
        return run_agent(states[role], q, backends, cfg, recorder, embedder)

    if concurrent:
        with ThreadPoolExecutor(max_workers=len(ALL_ROLES), thread_name_prefix="agent") as pool:
            finished = dict(zip(ALL_ROLES, pool.map(work, ALL_ROLES)))
    else:
        finished = {role: work(role) for role in ALL_ROLES}
    if all(s.status is AgentStatus.FAILED for s in finished.values()):
        raise AllAgentsFailed(finished)
    return finished
