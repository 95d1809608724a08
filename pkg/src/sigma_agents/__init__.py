"""Multi-agent search-augmented reasoning with deterministic moderation.

Four specialist agents (Factual, Logical, Computational, Completeness) each
interleave generation with budgeted retrieval; a rule-based moderator merges
their conclusions into one answer.
"""

from sigma_agents.agent_runtime import AllAgentsFailed, run_agent, run_all_agents, init_state
from sigma_agents.backends import (
    BackendError,
    Backends,
    HashEmbedder,
    HttpEmbedder,
    HttpModel,
    HttpSearch,
    LocalCorpusSearch,
    ScriptedModel,
    ScriptedPlaybook,
    build_backends,
)
from sigma_agents.config import load_config
from sigma_agents.core import AgentRole, Query, RunConfig, validate_config
from sigma_agents.harness import load_dataset, run_eval, score_answer, solve_query
from sigma_agents.moderator import NoAnswer, PriorityScheme, synthesize

__all__ = [
    "AgentRole",
    "AllAgentsFailed",
    "BackendError",
    "Backends",
    "HashEmbedder",
    "HttpEmbedder",
    "HttpModel",
    "HttpSearch",
    "LocalCorpusSearch",
    "NoAnswer",
    "PriorityScheme",
    "Query",
    "RunConfig",
    "ScriptedModel",
    "ScriptedPlaybook",
    "build_backends",
    "init_state",
    "load_config",
    "load_dataset",
    "run_agent",
    "run_all_agents",
    "run_eval",
    "score_answer",
    "solve_query",
    "synthesize",
    "validate_config",
]
