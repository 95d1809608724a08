from __future__ import annotations

from pathlib import Path

import pytest

from sigma_agents.backends import Backends, HashEmbedder, LocalCorpusSearch, ScriptedModel, ScriptedPlaybook
from sigma_agents.config import load_config
from sigma_agents.core import Query

FIXTURES = Path(__file__).parent / "fixtures"
TOTIENT_DIR = FIXTURES / "totient_2024"
EVAL4_DIR = FIXTURES / "eval4"

TOTIENT_QUESTION = "Find the number of positive integers n <= 2024 such that gcd(n, 2024) = 1."

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def totient_query() -> Query:
    return Query("totient-2024", TOTIENT_QUESTION, "880")


@pytest.fixture
def totient_cfg():
    return load_config(TOTIENT_DIR / "config.yaml")


@pytest.fixture
def corpus() -> LocalCorpusSearch:
    return LocalCorpusSearch.from_jsonl(TOTIENT_DIR / "corpus.jsonl")


@pytest.fixture
def totient_backends(corpus) -> Backends:
    playbook = ScriptedPlaybook.load(TOTIENT_DIR / "playbook.yaml")
    return Backends(ScriptedModel(playbook), HashEmbedder(256), corpus)


def scripted(corpus: LocalCorpusSearch, steps: dict, default: str = "", **kw) -> Backends:
    return Backends(ScriptedModel(ScriptedPlaybook(steps, default, **kw)), HashEmbedder(256), corpus)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
