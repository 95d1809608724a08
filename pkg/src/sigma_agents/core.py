"""Domain types shared across the runtime, retrieval, moderator and harness.

Everything here is a plain dataclass. Values other than :class:`AgentState`
are frozen; ``AgentState`` is mutated only by the worker that owns it.
The ``to_data`` / ``from_data`` pair converts any of these types to and from
JSON-compatible structures for the trace format.
"""

from __future__ import annotations

import dataclasses
import enum
import types
import typing
from dataclasses import dataclass, field
from typing import Any, Mapping, Optional, Union


class AgentRole(str, enum.Enum):
    FACTUAL = "Factual"
    LOGICAL = "Logical"
    COMPUTATIONAL = "Computational"
    COMPLETENESS = "Completeness"


ALL_ROLES: tuple[AgentRole, ...] = tuple(AgentRole)


class SegmentKind(str, enum.Enum):
    INSTRUCTION = "Instruction"
    QUERY = "Query"
    REASONING = "Reasoning"
    SEARCH_QUERY = "SearchQuery"
    SEARCH_RESULTS = "SearchResults"
    # injected when a search is requested with no budget left
    NOTICE = "Notice"
    CONCLUSION = "Conclusion"


class AgentStatus(str, enum.Enum):
    RUNNING = "Running"
    CONCLUDED = "Concluded"
    BUDGET_EXHAUSTED = "BudgetExhausted"
    STEP_LIMIT_REACHED = "StepLimitReached"
    FAILED = "Failed"


class ActionKind(str, enum.Enum):
    SEARCH = "Search"
    REASON = "Reason"
    SYNTHESIZE = "Synthesize"


class ChunkSource(str, enum.Enum):
    LOCAL_CORPUS = "LocalCorpus"
    REMOTE_SEARCH = "RemoteSearch"


class Verification(str, enum.Enum):
    VERIFIED = "Verified"
    SPECULATIVE = "Speculative"


# --------------------------------------------------------------------------
# Errors
# --------------------------------------------------------------------------


class ConfigError(ValueError):
    """Invalid run configuration. ``path`` names the offending field."""

    def __init__(self, message: str, path: str = "") -> None:
        self.path = path
        super().__init__(f"{path}: {message}" if path else message)


class MissingRole(ConfigError):
    pass


class InvalidBudget(ConfigError):
    pass


class InvalidDecoding(ConfigError):
    pass


class StateFrozenError(RuntimeError):
    """Raised when appending to a terminal agent transcript."""


# --------------------------------------------------------------------------
# Query / instructions / transcript
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class Query:
    id: str
    text: str
    gold_answer: Optional[str] = None

    def __post_init__(self) -> None:
        if not self.text.strip():
            raise ValueError("query text must be non-empty")


@dataclass(frozen=True)
class AgentInstruction:
    role: AgentRole
    prompt_text: str

    def __post_init__(self) -> None:
        if not self.prompt_text.strip():
            raise ValueError(f"instruction for {self.role.value} is empty")


@dataclass(frozen=True)
class Segment:
    kind: SegmentKind
    text: str
    # -1 for the initial instruction/query segments, else the producing step t
    step_index: int


@dataclass
class AgentState:
    role: AgentRole
    transcript: list[Segment]
    step: int = 0
    budget_remaining: int = 0
    status: AgentStatus = AgentStatus.RUNNING
    error: Optional[str] = None

    def append(self, segment: Segment) -> None:
        if self.status is not AgentStatus.RUNNING:
            raise StateFrozenError(f"{self.role.value} transcript is terminal")
        self.transcript.append(segment)

    def finish(self, status: AgentStatus, error: Optional[str] = None) -> None:
        if status is AgentStatus.RUNNING:
            raise ValueError("finish() needs a terminal status")
        self.status = status
        self.error = error

    @property
    def searches_used(self) -> int:
        return sum(1 for s in self.transcript if s.kind is SegmentKind.SEARCH_RESULTS)

    @property
    def is_terminal(self) -> bool:
        return self.status is not AgentStatus.RUNNING


@dataclass(frozen=True)
class SearchRequest:
    agent_role: AgentRole
    query_text: str
    ordinal: int

    def __post_init__(self) -> None:
        if not self.query_text.strip():
            raise ValueError("search query must be non-empty")


@dataclass(frozen=True)
class Chunk:
    doc_id: str
    text: str
    source: ChunkSource = ChunkSource.LOCAL_CORPUS

    def __post_init__(self) -> None:
        if not self.text:
            raise ValueError(f"chunk {self.doc_id!r} has empty text")


@dataclass(frozen=True)
class RankedChunk:
    chunk: Chunk
    similarity: float

    def __post_init__(self) -> None:
        if not -1.0 - 1e-9 <= self.similarity <= 1.0 + 1e-9:
            raise ValueError(f"similarity {self.similarity} outside [-1, 1]")


@dataclass(frozen=True)
class EmbeddingVector:
    values: tuple[float, ...]

    def __post_init__(self) -> None:
        if not self.values:
            raise ValueError("embedding must have positive dimension")

    @property
    def dimension(self) -> int:
        return len(self.values)


@dataclass(frozen=True)
class Proposition:
    text: str
    origin_role: AgentRole
    verification: Verification = Verification.SPECULATIVE


@dataclass(frozen=True)
class AgentConclusion:
    role: AgentRole
    raw_text: str
    answer: Optional[str]
    propositions: tuple[Proposition, ...] = ()


@dataclass(frozen=True)
class ResolutionRecord:
    """One discarded answer group and why it lost."""

    answer: str
    supporters: tuple[AgentRole, ...]
    reason: str


@dataclass(frozen=True)
class FinalAnswer:
    answer: str
    supporting_roles: frozenset[AgentRole]
    resolution_log: tuple[ResolutionRecord, ...] = ()
    justification: str = ""
    propositions: tuple[Proposition, ...] = ()

    def __post_init__(self) -> None:
        if not self.supporting_roles:
            raise ValueError("a final answer needs at least one supporting role")


# --------------------------------------------------------------------------
# Configuration
# --------------------------------------------------------------------------

SEARCH_PROTOCOL_HINT = (
    "When you need outside knowledge, write <|begin_search_query|> your query "
    "<|end_search_query|> and wait for the results, which will appear between "
    "<|begin_search_results|> and <|end_search_results|>. Search only when you "
    "are genuinely uncertain. When you are done, give the final answer as "
    "\\boxed{answer}."
)

DEFAULT_PROMPTS: dict[AgentRole, str] = {
    AgentRole.FACTUAL: (
        "You are the Factual specialist. Identify the definitions, theorems and "
        "numeric facts the problem depends on and make sure each one is correct. "
        + SEARCH_PROTOCOL_HINT
    ),
    AgentRole.LOGICAL: (
        "You are the Logical specialist. Build the argument structure: reduce the "
        "problem to known results and check that each inference follows. "
        + SEARCH_PROTOCOL_HINT
    ),
    AgentRole.COMPUTATIONAL: (
        "You are the Computational specialist. Carry out every calculation "
        "explicitly and verify candidate answers numerically. "
        + SEARCH_PROTOCOL_HINT
    ),
    AgentRole.COMPLETENESS: (
        "You are the Completeness specialist. Look for missed cases, boundary "
        "conditions and alternative methods that cross-check the result. "
        + SEARCH_PROTOCOL_HINT
    ),
}

DEFAULT_PRIORITY: tuple[AgentRole, ...] = (
    AgentRole.COMPUTATIONAL,
    AgentRole.FACTUAL,
    AgentRole.LOGICAL,
    AgentRole.COMPLETENESS,
)


def default_instructions() -> tuple[AgentInstruction, ...]:
    return tuple(AgentInstruction(role, DEFAULT_PROMPTS[role]) for role in ALL_ROLES)


@dataclass(frozen=True)
class DecodingParams:
    temperature: float = 0.0
    seed: int = 42
    max_tokens: int = 1024


@dataclass(frozen=True)
class ModelSettings:
    kind: str = "scripted"  # scripted | http
    playbook: Optional[str] = None
    playbooks: dict[str, str] = field(default_factory=dict)
    base_url: Optional[str] = None
    path: str = "/v1/chat/completions"
    model: str = "qwen2.5-7b-instruct"
    timeout: float = 60.0
    api_key_env: str = "SIGMA_MODEL_API_KEY"


@dataclass(frozen=True)
class EmbeddingSettings:
    kind: str = "hash"  # hash | http
    dim: int = 256
    base_url: Optional[str] = None
    path: str = "/embed"
    timeout: float = 10.0
    api_key_env: str = "SIGMA_EMBED_API_KEY"


@dataclass(frozen=True)
class SearchSettings:
    kind: str = "local"  # local | http
    corpus: Optional[str] = None
    base_url: Optional[str] = None
    path: str = "/search"
    timeout: float = 10.0
    api_key_env: str = "SIGMA_SEARCH_API_KEY"


@dataclass(frozen=True)
class BackendSettings:
    model: ModelSettings = field(default_factory=ModelSettings)
    embedding: EmbeddingSettings = field(default_factory=EmbeddingSettings)
    search: SearchSettings = field(default_factory=SearchSettings)
    retries: int = 2
    backoff: float = 0.5


@dataclass(frozen=True)
class RunConfig:
    instructions: tuple[AgentInstruction, ...] = field(default_factory=default_instructions)
    max_searches: int = 2
    max_steps: int = 16
    top_k: int = 3
    candidate_pool: int = 10
    result_char_limit: int = 2000
    decoding: DecodingParams = field(default_factory=DecodingParams)
    backends: BackendSettings = field(default_factory=BackendSettings)
    priority: tuple[AgentRole, ...] = DEFAULT_PRIORITY
    majority_first: bool = False

    def instruction_for(self, role: AgentRole) -> AgentInstruction:
        for instruction in self.instructions:
            if instruction.role is role:
                return instruction
        raise MissingRole(f"no instruction for {role.value}", "instructions")


def validate_config(cfg: RunConfig) -> RunConfig:
    """Return ``cfg`` unchanged if every invariant holds, else raise ConfigError."""
    roles = [i.role for i in cfg.instructions]
    missing = [r.value for r in ALL_ROLES if r not in roles]
    if missing:
        raise MissingRole(f"missing instruction(s) for {', '.join(missing)}", "instructions")
    if len(roles) != len(set(roles)):
        raise MissingRole("each role must be configured exactly once", "instructions")
    if isinstance(cfg.max_searches, bool) or not isinstance(cfg.max_searches, int) or cfg.max_searches < 0:
        raise InvalidBudget("must be a non-negative integer", "max_searches")
    for name in ("max_steps", "top_k", "candidate_pool", "result_char_limit"):
        value = getattr(cfg, name)
        if isinstance(value, bool) or not isinstance(value, int) or value < 1:
            raise ConfigError("must be a positive integer", name)
    d = cfg.decoding
    if not isinstance(d.temperature, (int, float)) or d.temperature < 0:
        raise InvalidDecoding("must be >= 0", "decoding.temperature")
    if isinstance(d.seed, bool) or not isinstance(d.seed, int):
        raise InvalidDecoding("must be an integer", "decoding.seed")
    if isinstance(d.max_tokens, bool) or not isinstance(d.max_tokens, int) or d.max_tokens < 1:
        raise InvalidDecoding("must be a positive integer", "decoding.max_tokens")
    if sorted(cfg.priority, key=ALL_ROLES.index) != list(ALL_ROLES) or len(cfg.priority) != 4:
        raise ConfigError("must list each role exactly once", "priority")
    b = cfg.backends
    if b.retries < 0:
        raise ConfigError("must be >= 0", "backends.retries")
    if b.model.kind not in ("scripted", "http"):
        raise ConfigError(f"unknown kind {b.model.kind!r}", "backends.model.kind")
    if b.embedding.kind not in ("hash", "http"):
        raise ConfigError(f"unknown kind {b.embedding.kind!r}", "backends.embedding.kind")
    if b.embedding.dim < 1:
        raise ConfigError("must be a positive integer", "backends.embedding.dim")
    if b.search.kind not in ("local", "http"):
        raise ConfigError(f"unknown kind {b.search.kind!r}", "backends.search.kind")
    return cfg


# --------------------------------------------------------------------------
# Serialization
# --------------------------------------------------------------------------


def _sort_key(item: Any) -> Any:
    if isinstance(item, enum.Enum):
        return (0, list(type(item)).index(item))
    return (1, repr(item))


def to_data(obj: Any) -> Any:
    """Convert a domain value to JSON-compatible data (deterministically)."""
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        return {f.name: to_data(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, enum.Enum):
        return obj.value
    if isinstance(obj, (list, tuple)):
        return [to_data(v) for v in obj]
    if isinstance(obj, (set, frozenset)):
        return [to_data(v) for v in sorted(obj, key=_sort_key)]
    if isinstance(obj, Mapping):
        return {str(to_data(k)): to_data(v) for k, v in obj.items()}
    return obj


def from_data(tp: Any, data: Any) -> Any:
    """Inverse of :func:`to_data` for the annotated type ``tp``."""
    if tp is Any:
        return data
    origin = typing.get_origin(tp)
    args = typing.get_args(tp)
    if origin is Union or (hasattr(types, "UnionType") and origin is getattr(types, "UnionType")):
        if data is None and type(None) in args:
            return None
        non_none = [a for a in args if a is not type(None)]
        return from_data(non_none[0], data)
    if origin in (list, typing.List):
        return [from_data(args[0], v) for v in data]
    if origin in (tuple, typing.Tuple):
        if len(args) == 2 and args[1] is Ellipsis:
            return tuple(from_data(args[0], v) for v in data)
        return tuple(from_data(a, v) for a, v in zip(args, data))
    if origin in (frozenset, set):
        return origin(from_data(args[0], v) for v in data)
    if origin in (dict, Mapping, typing.Dict) or origin is getattr(typing, "Mapping", None):
        key_t, val_t = args if args else (str, Any)
        return {from_data(key_t, k): from_data(val_t, v) for k, v in data.items()}
    if isinstance(tp, type) and issubclass(tp, enum.Enum):
        return tp(data)
    if isinstance(tp, type) and dataclasses.is_dataclass(tp):
        hints = typing.get_type_hints(tp)
        kwargs = {
            f.name: from_data(hints[f.name], data[f.name])
            for f in dataclasses.fields(tp)
            if f.name in data
        }
        return tp(**kwargs)
    if tp is float and isinstance(data, int):
        return float(data)
    return data
