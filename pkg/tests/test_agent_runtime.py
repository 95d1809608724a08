import hashlib
import random

import pytest

from sigma_agents.agent_runtime import (
    BUDGET_NOTICE,
    AllAgentsFailed,
    StepOutcome,
    classify_action,
    init_state,
    render_transcript,
    run_agent,
    run_all_agents,
    run_step,
)
from sigma_agents.backends import (
    BackendError,
    Backends,
    HashEmbedder,
    ScriptedModel,
    ScriptedPlaybook,
    parse_header,
    strip_header,
)
from sigma_agents.core import (
    ALL_ROLES,
    ActionKind,
    AgentInstruction,
    AgentRole,
    AgentStatus,
    Query,
    RunConfig,
    SegmentKind,
)
from sigma_agents.protocol import BEGIN_SEARCH, END_SEARCH, NO_RESULTS

from conftest import TOTIENT_QUESTION, scripted

F, L, C, M = AgentRole.FACTUAL, AgentRole.LOGICAL, AgentRole.COMPUTATIONAL, AgentRole.COMPLETENESS


def ask(query):
    return f"Looking something up. {BEGIN_SEARCH} {query} {END_SEARCH}"


def test_init_state_factual():
    cfg = RunConfig(max_searches=2)
    q = Query("q", TOTIENT_QUESTION)
    state = init_state(AgentInstruction(F, "You are the Factual specialist."), q, cfg)
    assert [s.kind for s in state.transcript] == [SegmentKind.INSTRUCTION, SegmentKind.QUERY]
    assert state.transcript[1].text == TOTIENT_QUESTION
    assert (state.step, state.budget_remaining, state.status) == (0, 2, AgentStatus.RUNNING)


def test_init_state_zero_budget():
    state = init_state(AgentInstruction(C, "x"), Query("q", "t"), RunConfig(max_searches=0))
    assert state.budget_remaining == 0


@pytest.mark.parametrize(
    "text,kind",
    [
        (ask("euler totient"), ActionKind.SEARCH),
        ("So the count is \\boxed{880}.", ActionKind.SYNTHESIZE),
        ("Final answer: 880", ActionKind.SYNTHESIZE),
        ("Let me think about the structure of 2024.", ActionKind.REASON),
        (f"{BEGIN_SEARCH}   {END_SEARCH}", ActionKind.REASON),
        (ask("x") + " \\boxed{1}", ActionKind.SEARCH),
    ],
)
def test_classify_action(text, kind):
    assert classify_action(text) is kind


def test_step_outcome_invariant():
    with pytest.raises(ValueError):
        StepOutcome(ActionKind.REASON, "x", search=(None, ()))


def _single(role, steps, corpus, cfg=None, default=""):
    cfg = cfg or RunConfig()
    backends = scripted(corpus, {(role, t): text for t, text in enumerate(steps)}, default)
    state = init_state(cfg.instruction_for(role), Query("q", TOTIENT_QUESTION), cfg)
    return run_agent(state, Query("q", TOTIENT_QUESTION), backends, cfg), state


def test_search_then_answer(corpus):
    state, _ = _single(F, [ask("Euler totient function definition"), "It is \\boxed{880}."], corpus)
    assert state.status is AgentStatus.CONCLUDED
    assert state.searches_used == 1
    assert state.budget_remaining == 1
    assert state.step == 2
    kinds = [s.kind for s in state.transcript]
    assert kinds == [
        SegmentKind.INSTRUCTION, SegmentKind.QUERY, SegmentKind.SEARCH_QUERY,
        SegmentKind.SEARCH_RESULTS, SegmentKind.CONCLUSION,
    ]
    assert "counts the positive integers up to n" in state.transcript[3].text


def test_never_answering_agent_hits_step_limit(corpus):
    state, _ = _single(L, [], corpus, default="Still thinking.")
    assert state.status is AgentStatus.STEP_LIMIT_REACHED
    assert state.step == 16
    assert sum(s.kind is SegmentKind.REASONING for s in state.transcript) == 16


def test_budget_blocks_third_search(corpus):
    steps = [ask("euler totient"), ask("prime factor"), ask("coprime gcd"), "\\boxed{880}"]
    state, _ = _single(C, steps, corpus)
    kinds = [s.kind for s in state.transcript]
    assert kinds.count(SegmentKind.SEARCH_RESULTS) == 2
    assert kinds.count(SegmentKind.NOTICE) == 1
    assert state.transcript[-2].text == BUDGET_NOTICE
    assert state.budget_remaining == 0
    assert state.status is AgentStatus.CONCLUDED


def test_budget_exhausted_status(corpus):
    state, _ = _single(C, [], corpus, cfg=RunConfig(max_searches=1), default=ask("totient"))
    assert state.status is AgentStatus.BUDGET_EXHAUSTED
    assert state.searches_used == 1
    assert state.step == 16


def test_zero_budget_never_searches(corpus):
    calls = []

    class CountingSearch:
        def search(self, query, max_results):
            calls.append(query)
            return corpus.search(query, max_results)

    cfg = RunConfig(max_searches=0)
    backends = Backends(ScriptedModel(ScriptedPlaybook({(F, 0): ask("x"), (F, 1): "\\boxed{1}"})),
                        HashEmbedder(), CountingSearch())
    state = init_state(cfg.instruction_for(F), Query("q", "t"), cfg)
    run_agent(state, Query("q", "t"), backends, cfg)
    assert calls == [] and state.searches_used == 0


def test_empty_search_results_are_injected(corpus):
    state, _ = _single(F, [ask("zebra quokka"), "\\boxed{1}"], corpus)
    block = state.transcript[3]
    assert block.kind is SegmentKind.SEARCH_RESULTS
    assert NO_RESULTS in block.text


class FailingModel:
    def __init__(self, good_steps):
        self.good_steps = good_steps
        self.calls = 0

    def generate(self, request):
        self.calls += 1
        if self.calls > self.good_steps:
            raise BackendError("connection refused", 2, "model")
        return "Reasoning about the problem."


def test_failed_agent_keeps_partial_transcript(corpus):
    cfg = RunConfig()
    q = Query("q", "t")
    backends = Backends(FailingModel(2), HashEmbedder(), corpus)
    state = init_state(cfg.instruction_for(M), q, cfg)
    run_agent(state, q, backends, cfg)
    assert state.status is AgentStatus.FAILED
    assert "connection refused" in state.error
    assert state.step == 2
    assert len(state.transcript) == 4


def test_all_agents_failed(corpus):
    backends = Backends(FailingModel(0), HashEmbedder(), corpus)
    with pytest.raises(AllAgentsFailed) as err:
        run_all_agents(Query("q", "t"), RunConfig(), backends)
    assert set(err.value.states) == set(ALL_ROLES)
    assert all(s.status is AgentStatus.FAILED for s in err.value.states.values())


def test_run_agent_rejects_terminal_state(corpus):
    state, _ = _single(F, ["\\boxed{1}"], corpus)
    with pytest.raises(ValueError):
        run_agent(state, Query("q", "t"), scripted(corpus, {}), RunConfig())


# --------------------------------------------------------------------------
# Invariants over random playbooks
# --------------------------------------------------------------------------

def random_playbook(rng, max_len=10):
    steps = {}
    for role in ALL_ROLES:
        n = rng.randint(0, max_len)
        for t in range(n):
            choice = rng.random()
            if choice < 0.5:
                steps[(role, t)] = ask(rng.choice(["euler totient", "prime factor 2024", "coprime gcd", "zebra"]))
            elif choice < 0.9:
                steps[(role, t)] = f"Thinking step {t}."
            else:
                steps[(role, t)] = "\\boxed{880}"
    return steps


class Snooping:
    """Model wrapper that checks each prompt extends the previous one."""

    def __init__(self, inner):
        self.inner = inner
        self.last = {}
        self.violations = []

    def generate(self, request):
        role, step, hyde = parse_header(request.prompt)
        if hyde is None:
            body = strip_header(request.prompt)
            prev = self.last.get(role)
            if prev is not None and not body.startswith(prev):
                self.violations.append((role, step))
            self.last[role] = body
        return self.inner.generate(request)


@pytest.mark.parametrize("seed", range(25))
def test_runtime_invariants(seed, corpus):
    rng = random.Random(seed)
    cfg = RunConfig(max_searches=rng.choice([0, 1, 2, 5]), max_steps=rng.randint(1, 12))
    snoop = Snooping(ScriptedModel(ScriptedPlaybook(random_playbook(rng), "Pondering.")))
    backends = Backends(snoop, HashEmbedder(), corpus)
    q = Query("q", TOTIENT_QUESTION)
    states = run_all_agents(q, cfg, backends, concurrent=False)
    assert snoop.violations == []
    for role, state in states.items():
        assert state.role is role
        assert state.status is not AgentStatus.RUNNING
        assert state.searches_used <= cfg.max_searches
        assert state.searches_used + state.budget_remaining == cfg.max_searches
        assert state.step <= cfg.max_steps
        # each step produced one model segment, stamped with its step index
        produced = [s for s in state.transcript if s.step_index >= 0]
        model_segments = [s for s in produced if s.kind not in (SegmentKind.SEARCH_RESULTS, SegmentKind.NOTICE)]
        assert [s.step_index for s in model_segments] == list(range(state.step))
        # only this agent's own generations appear in its transcript
        for s in model_segments:
            assert s.text == snoop.inner.playbook.lookup(role, s.step_index)


def _fingerprint(states):
    return {
        role: (
            s.status, s.step, s.budget_remaining,
            hashlib.sha256(render_transcript(s).encode()).hexdigest(),
        )
        for role, s in states.items()
    }


@pytest.mark.parametrize("seed", range(5))
def test_isolation_per_agent_matches_solo_run(seed, corpus):
    rng = random.Random(100 + seed)
    cfg = RunConfig(max_searches=2, max_steps=8)
    playbook = ScriptedPlaybook(random_playbook(rng, 8), "Pondering.")
    backends = Backends(ScriptedModel(playbook), HashEmbedder(), corpus)
    q = Query("q", TOTIENT_QUESTION)
    together = run_all_agents(q, cfg, backends, concurrent=True)
    for role in ALL_ROLES:
        solo = init_state(cfg.instruction_for(role), q, cfg)
        run_agent(solo, q, backends, cfg)
        assert solo.transcript == together[role].transcript
        assert solo.status is together[role].status


def test_sequential_and_concurrent_agree(totient_query, totient_cfg, totient_backends):
    a = run_all_agents(totient_query, totient_cfg, totient_backends, concurrent=False)
    b = run_all_agents(totient_query, totient_cfg, totient_backends, concurrent=True)
    assert _fingerprint(a) == _fingerprint(b)


def test_totient_example_search_counts(totient_query, totient_cfg, totient_backends):
    states = run_all_agents(totient_query, totient_cfg, totient_backends)
    assert {r: s.searches_used for r, s in states.items()} == {F: 2, L: 1, C: 2, M: 2}
    assert all(s.status is AgentStatus.CONCLUDED for s in states.values())


def test_run_step_reports_search(corpus):
    cfg = RunConfig()
    q = Query("q", TOTIENT_QUESTION)
    state = init_state(cfg.instruction_for(C), q, cfg)
    backends = scripted(corpus, {(C, 0): ask("factor 2024 prime decomposition")})
    outcome = run_step(state, q, backends, cfg)
    assert outcome.action is ActionKind.SEARCH
    req, ranked = outcome.search
    assert req.query_text == "factor 2024 prime decomposition" and req.ordinal == 1
    assert 0 < len(ranked) <= cfg.top_k
