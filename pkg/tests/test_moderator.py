import itertools
import random

import pytest

from sigma_agents.agent_runtime import run_all_agents
from sigma_agents.core import (
    ALL_ROLES,
    AgentConclusion,
    AgentRole,
    AgentState,
    AgentStatus,
    Proposition,
    Query,
    Segment,
    SegmentKind,
    Verification,
)
from sigma_agents.moderator import (
    DEFAULT_SCHEME,
    NoAnswer,
    PriorityScheme,
    conclusion_from_state,
    deduplicate,
    extract_propositions,
    normalize_claim,
    resolve_answer,
    split_sentences,
    synthesize,
)

F, L, C, M = AgentRole.FACTUAL, AgentRole.LOGICAL, AgentRole.COMPUTATIONAL, AgentRole.COMPLETENESS
Q = Query("q", "How many n <= 2024 are coprime to 2024?")


def concluded(role, text, results=()):
    transcript = [Segment(SegmentKind.INSTRUCTION, "i", -1), Segment(SegmentKind.QUERY, Q.text, -1)]
    for t, block in enumerate(results):
        transcript.append(Segment(SegmentKind.SEARCH_RESULTS, block, t))
    transcript.append(Segment(SegmentKind.CONCLUSION, text, len(results)))
    return AgentState(role, transcript, len(results) + 1, 0, AgentStatus.CONCLUDED)


def stopped(role, status=AgentStatus.STEP_LIMIT_REACHED):
    return AgentState(role, [Segment(SegmentKind.QUERY, Q.text, -1)], 16, 0, status)


def answer_only(role, answer):
    return AgentConclusion(role, f"\\boxed{{{answer}}}", answer)


def test_two_propositions_verified():
    results = ["<|begin_search_results|>\n[1] 2024 = 2^3 × 11 × 23\n<|end_search_results|>"]
    state = concluded(C, "2024 = 2^3 × 11 × 23. Therefore φ(2024) = 880. \\boxed{880}", results)
    conclusion = conclusion_from_state(state)
    assert conclusion.answer == "880"
    # the bare trailing \boxed{} is a fragment and is not a proposition
    assert [p.text for p in conclusion.propositions] == ["2024 = 2^3 × 11 × 23", "therefore φ(2024) = 880"]
    first, second = conclusion.propositions
    assert first.verification is Verification.VERIFIED  # numbers occur in the results
    assert second.verification is Verification.VERIFIED  # states the answer
    assert all(p.origin_role is C for p in conclusion.propositions)


def test_speculative_without_evidence():
    conclusion = AgentConclusion(L, "Perhaps the structure of the group matters here. \\boxed{880}", "880")
    props = extract_propositions(conclusion)
    assert props[0].verification is Verification.SPECULATIVE


def test_five_sentences_and_two_fragments():
    text = (
        "The problem concerns coprime integers. "
        "Euler's totient counts them. "
        "Ok. "
        "The factorization of 2024 is needed. "
        "Right! "
        "The product formula then applies. "
        "The count is therefore 880."
    )
    sentences = split_sentences(text)
    assert len(sentences) == 5
    props = extract_propositions(AgentConclusion(F, text, "880"))
    assert len(props) == 5


def test_single_short_sentence_is_kept():
    assert split_sentences("\\boxed{7}") == ["\\boxed{7}"]


def test_normalize_claim():
    assert normalize_claim("  The   Count IS 880.  ") == "the count is 880"
    assert normalize_claim("x!?") == "x"


def _props(texts, role=F):
    return [Proposition(t, role, Verification.SPECULATIVE) for t in texts]


def test_deduplicate_eight_with_three_duplicates():
    texts = [
        "a is b", "c is d", "A is b.", "e is f", "c  is d", "g is h", "i is j", "E is F!",
    ]
    kept = deduplicate(_props(texts))
    assert [p.text for p in kept] == ["a is b", "c is d", "e is f", "g is h", "i is j"]
    assert deduplicate(kept) == kept


def test_deduplicate_keeps_first_origin():
    props = _props(["x y z"], C) + _props(["X y z."], F)
    assert [p.origin_role for p in deduplicate(props)] == [C]


def test_resolve_unanimous():
    res = resolve_answer({r: answer_only(r, "880") for r in ALL_ROLES})
    assert res.answer == "880"
    assert res.supporting_roles == frozenset(ALL_ROLES)
    assert res.log == ()


def test_resolve_priority_beats_majority():
    conclusions = {r: answer_only(r, "884") for r in (F, L, M)}
    conclusions[C] = answer_only(C, "880")
    res = resolve_answer(conclusions)
    assert res.answer == "880"
    assert res.supporting_roles == frozenset({C})
    assert len(res.log) == 1
    assert res.log[0].answer == "884"
    assert set(res.log[0].supporters) == {F, L, M}


def test_resolve_majority_first_flag():
    conclusions = {r: answer_only(r, "884") for r in (F, L, M)}
    conclusions[C] = answer_only(C, "880")
    res = resolve_answer(conclusions, majority_first=True)
    assert res.answer == "884"
    assert res.log[0].answer == "880"


def test_resolve_majority_tie_goes_to_priority():
    conclusions = {F: answer_only(F, "1"), L: answer_only(L, "1"), C: answer_only(C, "2"), M: answer_only(M, "2")}
    assert resolve_answer(conclusions, majority_first=True).answer == "2"


def test_resolve_only_completeness():
    conclusions = {r: AgentConclusion(r, "", None) for r in (F, L, C)}
    conclusions[M] = answer_only(M, "42")
    res = resolve_answer(conclusions)
    assert res.answer == "42" and res.supporting_roles == frozenset({M})


def test_resolve_groups_equivalent_spellings():
    conclusions = {C: answer_only(C, "880."), F: answer_only(F, " 880 ")}
    assert resolve_answer(conclusions).supporting_roles == frozenset({C, F})


def test_resolve_nobody():
    with pytest.raises(NoAnswer):
        resolve_answer({r: AgentConclusion(r, "", None) for r in ALL_ROLES})


def test_priority_scheme_validation():
    with pytest.raises(ValueError):
        PriorityScheme((F, F, L, C))
    assert DEFAULT_SCHEME.order == (C, F, L, M)


def test_synthesize_totient_example(totient_query, totient_cfg, totient_backends):
    states = run_all_agents(totient_query, totient_cfg, totient_backends)
    final = synthesize(totient_query, states)
    assert final.answer == "880"
    assert final.supporting_roles == frozenset(ALL_ROLES)
    text = final.justification.lower()
    assert "factorization" in text
    assert "totient" in text and "formula" in text
    assert text.rstrip().endswith("final answer: 880")
    assert synthesize(totient_query, states) == final


def test_synthesize_all_failed():
    states = {r: stopped(r, AgentStatus.FAILED) for r in ALL_ROLES}
    with pytest.raises(NoAnswer):
        synthesize(Q, states)


def test_synthesize_rejects_running_agents():
    states = {r: concluded(r, "\\boxed{1}") for r in ALL_ROLES}
    states[F] = AgentState(F, [Segment(SegmentKind.QUERY, "q", -1)])
    with pytest.raises(ValueError):
        synthesize(Q, states)


def test_abstainers_add_no_propositions():
    states = {r: stopped(r) for r in ALL_ROLES}
    states[L] = concluded(L, "The gcd condition means coprime. Hence the count is 880. \\boxed{880}")
    final = synthesize(Q, states)
    assert final.answer == "880"
    assert {p.origin_role for p in final.propositions} == {L}


# --------------------------------------------------------------------------
# Properties over random fixtures
# --------------------------------------------------------------------------

SENTENCES = [
    "The totient counts coprime integers.",
    "2024 factors as 2^3 × 11 × 23.",
    "The product formula gives the count.",
    "We cross check with inclusion exclusion.",
    "The answer might be even.",
]


def random_states(rng):
    states = {}
    for role in ALL_ROLES:
        kind = rng.random()
        if kind < 0.25:
            states[role] = stopped(role, rng.choice([AgentStatus.FAILED, AgentStatus.STEP_LIMIT_REACHED]))
        else:
            body = " ".join(rng.sample(SENTENCES, rng.randint(0, 3)))
            states[role] = concluded(role, f"{body} \\boxed{{{rng.choice(['880', '884', '42'])}}}".strip())
    return states


@pytest.mark.parametrize("seed", range(30))
def test_moderator_properties(seed):
    rng = random.Random(seed)
    states = random_states(rng)
    try:
        final = synthesize(Q, states)
    except NoAnswer:
        assert all(s.status is not AgentStatus.CONCLUDED for s in states.values())
        return
    # permutation stability
    for perm in itertools.islice(itertools.permutations(ALL_ROLES), 0, 24, 5):
        assert synthesize(Q, {r: states[r] for r in perm}) == final
    # priority dominance: the best-ranked answering agent decides
    top = next(r for r in DEFAULT_SCHEME.order if states[r].status is AgentStatus.CONCLUDED)
    assert final.answer == conclusion_from_state(states[top]).answer
    assert top in final.supporting_roles
    # dedup idempotence
    assert deduplicate(final.propositions) == list(final.propositions)
    # abstention monotonicity: silencing a lower-ranked agent keeps the answer
    for r in DEFAULT_SCHEME.order[DEFAULT_SCHEME.rank(top) + 1:]:
        muted = dict(states)
        muted[r] = stopped(r)
        assert synthesize(Q, muted).answer == final.answer
