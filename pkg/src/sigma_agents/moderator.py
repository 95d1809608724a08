"""Deterministic synthesis of the four agents' conclusions.

No model is called here. Each concluding agent's final reasoning is split
into sentence-level propositions, which are collated in priority order and
deduplicated. The final answer is whichever answer the highest-priority
non-abstaining agent gave. Majority only decides when ``majority_first`` is
enabled.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, replace
from typing import Iterable, Mapping, Optional, Sequence

from sigma_agents.core import (
    ALL_ROLES,
    DEFAULT_PRIORITY,
    AgentConclusion,
    AgentRole,
    AgentState,
    AgentStatus,
    FinalAnswer,
    Proposition,
    Query,
    ResolutionRecord,
    SegmentKind,
    Verification,
)
from sigma_agents.protocol import NO_RESULTS, extract_answer, normalize_answer


class NoAnswer(RuntimeError):
    """Every agent abstained or failed."""


@dataclass(frozen=True)
class PriorityScheme:
    order: tuple[AgentRole, ...] = DEFAULT_PRIORITY

    def __post_init__(self) -> None:
        if len(self.order) != len(ALL_ROLES) or set(self.order) != set(ALL_ROLES):
            raise ValueError("priority scheme must rank each role exactly once")

    def rank(self, role: AgentRole) -> int:
        return self.order.index(role)


DEFAULT_SCHEME = PriorityScheme()


# --------------------------------------------------------------------------
# Propositions
# --------------------------------------------------------------------------

_SENTENCE_BREAK = re.compile(r"(?<=[.!?])\s+")
_TERMINAL_PUNCT = ".!?;:,"
_CITATION = re.compile(r"\[\d+\]")
_NUMBER = re.compile(r"\d+(?:\.\d+)?")
MIN_TERMS = 3


def normalize_claim(text: str) -> str:
    value = " ".join(text.split()).lower()
    while value and value[-1] in _TERMINAL_PUNCT:
        value = " ".join(value[:-1].split())
    return value


def split_sentences(text: str) -> list[str]:
    pieces = [p for p in _SENTENCE_BREAK.split(text.strip()) if p.strip()]
    if len(pieces) <= 1:
        return pieces
    return [p for p in pieces if len(p.split()) >= MIN_TERMS]


def _states_final_answer(sentence: str, answer: Optional[str]) -> bool:
    lowered = sentence.lower()
    if "\\boxed{" in sentence or "final answer" in lowered:
        return True
    if answer and _NUMBER.fullmatch(answer):
        return answer in _NUMBER.findall(sentence)
    return False


def _cites(sentence: str, evidence: Sequence[str]) -> bool:
    if not evidence:
        return False
    if _CITATION.search(sentence):
        return True
    evidence_numbers = {n for text in evidence for n in _NUMBER.findall(text)}
    return any(n in evidence_numbers for n in _NUMBER.findall(sentence))


def extract_propositions(
    conclusion: AgentConclusion, evidence: Sequence[str] = ()
) -> list[Proposition]:
    """Sentence-level claims from an agent's final reasoning.

    ``evidence`` is the text of results the agent actually received. A claim
    is Verified when it cites that evidence (a ``[m]`` marker or a number
    that occurs in it) or states the agent's final answer.
    """
    props = []
    for sentence in split_sentences(conclusion.raw_text):
        text = normalize_claim(sentence)
        if not text:
            continue
        verified = _states_final_answer(sentence, conclusion.answer) or _cites(sentence, evidence)
        props.append(
            Proposition(
                text,
                conclusion.role,
                Verification.VERIFIED if verified else Verification.SPECULATIVE,
            )
        )
    return props


def _evidence(state: AgentState) -> list[str]:
    return [
        s.text
        for s in state.transcript
        if s.kind is SegmentKind.SEARCH_RESULTS and NO_RESULTS not in s.text
    ]


def conclusion_from_state(state: AgentState) -> AgentConclusion:
    """The agent's conclusion; non-concluded agents abstain (answer None)."""
    if state.status is not AgentStatus.CONCLUDED:
        return AgentConclusion(state.role, "", None, ())
    raw = next(s.text for s in reversed(state.transcript) if s.kind is SegmentKind.CONCLUSION)
    conclusion = AgentConclusion(state.role, raw, extract_answer(raw))
    return replace(conclusion, propositions=tuple(extract_propositions(conclusion, _evidence(state))))


def collate(conclusions: Mapping[AgentRole, AgentConclusion], scheme: PriorityScheme) -> list[Proposition]:
    return [
        prop
        for role in scheme.order
        if role in conclusions
        for prop in conclusions[role].propositions
    ]


def deduplicate(props: Iterable[Proposition]) -> list[Proposition]:
    seen: set[str] = set()
    kept = []
    for prop in props:
        key = normalize_claim(prop.text)
        if key in seen:
            continue
        seen.add(key)
        kept.append(prop)
    return kept


# --------------------------------------------------------------------------
# Answer resolution
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class Resolution:
    answer: str
    supporting_roles: frozenset[AgentRole]
    log: tuple[ResolutionRecord, ...]


def resolve_answer(
    conclusions: Mapping[AgentRole, AgentConclusion],
    scheme: PriorityScheme = DEFAULT_SCHEME,
    majority_first: bool = False,
) -> Resolution:
    groups: dict[str, list[AgentRole]] = {}
    for role in scheme.order:
        conclusion = conclusions.get(role)
        if conclusion is None or conclusion.answer is None:
            continue
        groups.setdefault(normalize_answer(conclusion.answer), []).append(role)
    if not groups:
        raise NoAnswer("no agent produced an answer")

    # dict order follows the best-ranked supporter of each group
    ordered = list(groups.items())
    if majority_first:
        winner = max(ordered, key=lambda g: (len(g[1]), -scheme.rank(g[1][0])))
    else:
        winner = ordered[0]
    answer, supporters = winner
    log = []
    for other, roles in ordered:
        if other == answer:
            continue
        if majority_first and len(roles) != len(supporters):
            reason = f"{len(roles)} supporter(s) against {len(supporters)}"
        else:
            reason = f"outranked by {supporters[0].value}"
        log.append(ResolutionRecord(other, tuple(roles), reason))
    return Resolution(answer, frozenset(supporters), tuple(log))


def render_justification(
    q: Query,
    props: Sequence[Proposition],
    resolution: Resolution,
    scheme: PriorityScheme,
) -> str:
    lines = [f"Question: {q.text}", ""]
    for role in scheme.order:
        own = [p for p in props if p.origin_role is role]
        if not own:
            continue
        lines.append(f"{role.value}:")
        for prop in own:
            tag = "verified" if prop.verification is Verification.VERIFIED else "speculative"
            lines.append(f"- {prop.text} [{tag}]")
        lines.append("")
    for record in resolution.log:
        names = ", ".join(r.value for r in record.supporters)
        lines.append(f"Set aside: {record.answer} ({names}); {record.reason}")
    if resolution.log:
        lines.append("")
    lines.append(f"Final answer: {resolution.answer}")
    return "\n".join(lines)


def synthesize(
    q: Query,
    states: Mapping[AgentRole, AgentState],
    scheme: PriorityScheme = DEFAULT_SCHEME,
    majority_first: bool = False,
) -> FinalAnswer:
    """Combine terminal agent states into a :class:`FinalAnswer`.

    Pure function of its inputs. Raises :class:`NoAnswer` when nobody
    answered.
    """
    if any(s.status is AgentStatus.RUNNING for s in states.values()):
        raise ValueError("moderation needs every agent to be terminal")
    conclusions = {role: conclusion_from_state(states[role]) for role in scheme.order if role in states}
    resolution = resolve_answer(conclusions, scheme, majority_first)
    props = deduplicate(collate(conclusions, scheme))
    return FinalAnswer(
        answer=resolution.answer,
        supporting_roles=resolution.supporting_roles,
        resolution_log=resolution.log,
        justification=render_justification(q, props, resolution, scheme),
        propositions=tuple(props),
    )
