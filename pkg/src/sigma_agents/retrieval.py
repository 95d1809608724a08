"""On-demand retrieval: first-stage search, hypothetical passage generation,
and cosine reranking of candidates against that passage."""

from __future__ import annotations

import functools
import math
import threading
from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence

from sigma_agents.backends import (
    Backends,
    EmbeddingBackend,
    GenerationRequest,
    ModelBackend,
    SearchBackend,
    prompt_header,
)
from sigma_agents.core import (
    AgentRole,
    AgentState,
    Chunk,
    DecodingParams,
    EmbeddingVector,
    Query,
    RankedChunk,
    RunConfig,
    SearchRequest,
    SegmentKind,
)


class DimensionMismatch(ValueError):
    pass


class ZeroVector(ValueError):
    pass


@dataclass(frozen=True)
class HypotheticalPassage:
    text: str
    agent_role: AgentRole
    search_ordinal: int

    def __post_init__(self) -> None:
        if not self.text.strip():
            raise ValueError("hypothetical passage must be non-empty")


HYPO_TEMPLATE = """{persona}

Original problem:
{question}

Your reasoning so far:
{reasoning}

Current search query: {sub_query}

Write one concise passage, in the style of a reference text, that would ideally answer the search query for this problem. Do not mention that the passage is hypothetical."""


def _reasoning_so_far(state: AgentState) -> str:
    kept = [
        s.text
        for s in state.transcript
        if s.kind not in (SegmentKind.INSTRUCTION, SegmentKind.QUERY)
    ]
    return "\n\n".join(kept) if kept else "(none yet)"


def hypo_prompt(q: Query, state: AgentState, req: SearchRequest) -> str:
    persona = next(
        (s.text for s in state.transcript if s.kind is SegmentKind.INSTRUCTION), ""
    )
    body = HYPO_TEMPLATE.format(
        persona=persona,
        question=q.text,
        reasoning=_reasoning_so_far(state),
        sub_query=req.query_text,
    )
    return prompt_header(state.role, state.step, hyde=req.ordinal) + "\n" + body


def hypo_generate(
    q: Query,
    state: AgentState,
    req: SearchRequest,
    model: ModelBackend,
    decoding: DecodingParams | None = None,
) -> HypotheticalPassage:
    """Ask the model for a passage that would ideally answer ``req``.

    An empty generation falls back to the sub-query text itself.
    """
    if req.agent_role is not state.role:
        raise ValueError("search request does not belong to this agent")
    decoding = decoding or DecodingParams()
    text = model.generate(
        GenerationRequest(
            prompt=hypo_prompt(q, state, req),
            max_tokens=decoding.max_tokens,
            temperature=decoding.temperature,
            seed=decoding.seed,
        )
    )
    if not text.strip():
        text = req.query_text
    return HypotheticalPassage(text.strip(), state.role, req.ordinal)


def cosine_similarity(a: EmbeddingVector, b: EmbeddingVector) -> float:
    if a.dimension != b.dimension:
        raise DimensionMismatch(f"{a.dimension} != {b.dimension}")
    # fsum is order-independent, so permuted vectors give bitwise-equal scores
    norm_a = math.sqrt(math.fsum(x * x for x in a.values))
    norm_b = math.sqrt(math.fsum(x * x for x in b.values))
    if norm_a == 0.0 or norm_b == 0.0:
        raise ZeroVector("cosine similarity is undefined for a zero vector")
    dot = math.fsum(x * y for x, y in zip(a.values, b.values))
    return max(-1.0, min(1.0, dot / (norm_a * norm_b)))


class EmbeddingCache:
    """Memoizes embeddings by exact text; safe to share between agent threads."""

    def __init__(self, backend: EmbeddingBackend) -> None:
        self.backend = backend
        self._vectors: dict[str, EmbeddingVector] = {}
        self._lock = threading.Lock()

    def embed_batch(self, texts: Sequence[str]) -> list[EmbeddingVector]:
        with self._lock:
            missing = list(dict.fromkeys(t for t in texts if t not in self._vectors))
        if missing:
            vectors = self.backend.embed_batch(missing)
            with self._lock:
                for text, vector in zip(missing, vectors):
                    self._vectors.setdefault(text, vector)
        with self._lock:
            return [self._vectors[t] for t in texts]


def rank_and_select(
    passage: HypotheticalPassage,
    candidates: Sequence[Chunk],
    k: int,
    embedder: EmbeddingBackend,
) -> list[RankedChunk]:
    """Top-``k`` candidates by cosine similarity to the passage.

    Sorted by descending similarity. Near-equal scores are ordered by exact
    rational comparison, and only exactly equal similarities keep retrieval
    order, so the result does not depend on floating-point summation noise.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    if not candidates:
        return []
    vectors = embedder.embed_batch([passage.text] + [c.text for c in candidates])
    anchor, rest = vectors[0], vectors[1:]
    sims = [cosine_similarity(anchor, vector) for vector in rest]
    exact: dict[int, tuple[Fraction, Fraction]] = {}

    def parts(i: int) -> tuple[Fraction, Fraction]:
        if i not in exact:
            exact[i] = _exact_parts(anchor, rest[i])
        return exact[i]

    def before(i: int, j: int) -> int:
        if abs(sims[i] - sims[j]) > NEAR_TIE:
            return -1 if sims[i] > sims[j] else 1
        order = _compare_exact(parts(i), parts(j))
        if order:
            return -order
        return -1 if i < j else (1 if i > j else 0)

    picked = sorted(range(len(candidates)), key=functools.cmp_to_key(before))[:k]
    return [RankedChunk(candidates[i], sims[i]) for i in picked]


# Float cosines are accurate to a few ulps, so scores further apart than this
# are already in the right order; closer pairs are compared exactly.
NEAR_TIE = 1e-12


def _exact_parts(anchor: EmbeddingVector, vector: EmbeddingVector) -> tuple[Fraction, Fraction]:
    """Exact (a.b, |b|^2); the anchor norm is shared and cancels out."""
    dot = sum(
        (Fraction(x) * Fraction(y) for x, y in zip(anchor.values, vector.values) if x and y),
        Fraction(0),
    )
    norm = sum((Fraction(y) ** 2 for y in vector.values if y), Fraction(0))
    return dot, norm


def _compare_exact(p: tuple[Fraction, Fraction], q: tuple[Fraction, Fraction]) -> int:
    """Sign of dot_p/sqrt(norm_p) - dot_q/sqrt(norm_q), without rounding."""
    (dp, np_), (dq, nq) = p, q
    sp, sq = (dp > 0) - (dp < 0), (dq > 0) - (dq < 0)
    if sp != sq:
        return 1 if sp > sq else -1
    lhs, rhs = dp * dp * nq, dq * dq * np_
    if lhs == rhs:
        return 0
    larger = 1 if lhs > rhs else -1
    return larger if sp > 0 else -larger


def search(req: SearchRequest, backend: SearchBackend, max_results: int = 10) -> list[Chunk]:
    if not req.query_text.strip():
        raise ValueError("search query must be non-empty")
    return list(backend.search(req.query_text, max_results))


@dataclass(frozen=True)
class RetrievalResult:
    request: SearchRequest
    candidates: tuple[Chunk, ...]
    passage: HypotheticalPassage | None
    ranked: tuple[RankedChunk, ...]


def retrieve(
    q: Query,
    state: AgentState,
    req: SearchRequest,
    backends: Backends,
    cfg: RunConfig,
    embedder: EmbeddingBackend | None = None,
) -> RetrievalResult:
    """Search, write a hypothetical passage, and rerank candidates against it.

    No passage is generated when the first-stage search finds nothing.
    """
    candidates = search(req, backends.search, cfg.candidate_pool)
    if not candidates:
        return RetrievalResult(req, (), None, ())
    passage = hypo_generate(q, state, req, backends.model, cfg.decoding)
    ranked = rank_and_select(passage, candidates, cfg.top_k, embedder or backends.embedder)
    return RetrievalResult(req, tuple(candidates), passage, tuple(ranked))
