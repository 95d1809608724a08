"""Model, embedding and search providers.

Every provider has an offline implementation (scripted playbook, feature-hash
embedder, local JSONL corpus) and an HTTP implementation. HTTP failures are
retried with exponential backoff and always surface as :class:`BackendError`.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import os
import re
import time
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Mapping, Optional, Protocol, Sequence

import httpx
import yaml

from sigma_agents.core import (
    AgentRole,
    BackendSettings,
    Chunk,
    ChunkSource,
    EmbeddingVector,
    ModelSettings,
)
from sigma_agents.protocol import BEGIN_SEARCH, END_SEARCH

logger = logging.getLogger(__name__)


class BackendError(RuntimeError):
    def __init__(self, cause: str, retries: int = 0, backend: str = "") -> None:
        self.cause = cause
        self.retries = retries
        self.backend = backend
        label = f"{backend} " if backend else ""
        super().__init__(f"{label}backend failed after {retries} retries: {cause}")


@dataclass(frozen=True)
class GenerationRequest:
    prompt: str
    stop_sequences: tuple[str, ...] = ()
    max_tokens: int = 1024
    temperature: float = 0.0
    seed: int = 42

    def __post_init__(self) -> None:
        if self.max_tokens <= 0:
            raise ValueError("max_tokens must be positive")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")


class ModelBackend(Protocol):
    def generate(self, request: GenerationRequest) -> str: ...


class EmbeddingBackend(Protocol):
    def embed_batch(self, texts: Sequence[str]) -> list[EmbeddingVector]: ...


class SearchBackend(Protocol):
    def search(self, query: str, max_results: int) -> list[Chunk]: ...


@dataclass
class Backends:
    model: ModelBackend
    embedder: EmbeddingBackend
    search: SearchBackend


# --------------------------------------------------------------------------
# Prompt header used by the scripted model
# --------------------------------------------------------------------------

_HEADER = re.compile(r"^«role=(\w+) step=(\d+)(?: hyde=(\d+))?»\n?")


def prompt_header(role: AgentRole, step: int, hyde: Optional[int] = None) -> str:
    extra = f" hyde={hyde}" if hyde is not None else ""
    return f"«role={role.value} step={step}{extra}»"


def parse_header(prompt: str) -> Optional[tuple[AgentRole, int, Optional[int]]]:
    match = _HEADER.match(prompt)
    if not match:
        return None
    hyde = match.group(3)
    return AgentRole(match.group(1)), int(match.group(2)), int(hyde) if hyde else None


def strip_header(prompt: str) -> str:
    return _HEADER.sub("", prompt, count=1)


# --------------------------------------------------------------------------
# Scripted model
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class ScriptedPlaybook:
    """Fixed generations keyed by ``(role, step)``.

    ``hyde`` entries are keyed by ``(role, search ordinal)`` and answer the
    hypothetical-passage prompts; unmapped keys fall back to the defaults, so
    the playbook is total.
    """

    steps: Mapping[tuple[AgentRole, int], str] = field(default_factory=dict)
    default: str = ""
    hyde: Mapping[tuple[AgentRole, int], str] = field(default_factory=dict)
    hyde_default: str = ""

    def lookup(self, role: AgentRole, step: int) -> str:
        return self.steps.get((role, step), self.default)

    def lookup_hyde(self, role: AgentRole, ordinal: int) -> str:
        return self.hyde.get((role, ordinal), self.hyde_default)

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "ScriptedPlaybook":
        """Build from ``{steps: {Role: [..] | {n: ..}}, default, hyde, hyde_default}``."""
        return cls(
            steps=_keyed_entries(data.get("steps") or {}),
            default=str(data.get("default", "")),
            hyde=_keyed_entries(data.get("hyde") or {}, start=1),
            hyde_default=str(data.get("hyde_default", "")),
        )

    @classmethod
    def load(cls, path: str | Path) -> "ScriptedPlaybook":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(yaml.safe_load(fh) or {})


def _keyed_entries(raw: Mapping[str, Any], start: int = 0) -> dict[tuple[AgentRole, int], str]:
    out: dict[tuple[AgentRole, int], str] = {}
    for role_name, entries in raw.items():
        role = AgentRole(role_name)
        if isinstance(entries, Mapping):
            items = ((int(k), v) for k, v in entries.items())
        else:
            items = enumerate(entries, start=start)
        for index, text in items:
            out[(role, index)] = str(text)
    return out


class ScriptedModel:
    """Deterministic stand-in for the language model; ignores decoding params."""

    def __init__(self, playbook: ScriptedPlaybook) -> None:
        self.playbook = playbook

    def generate(self, request: GenerationRequest) -> str:
        parsed = parse_header(request.prompt)
        if parsed is None:
            return self.playbook.default
        role, step, hyde = parsed
        if hyde is not None:
            return self.playbook.lookup_hyde(role, hyde)
        return self.playbook.lookup(role, step)


# --------------------------------------------------------------------------
# HTTP plumbing
# --------------------------------------------------------------------------


def _post_with_retries(
    client: httpx.Client,
    url: str,
    body: dict[str, Any],
    *,
    retries: int,
    backoff: float,
    backend: str,
    sleep: Callable[[float], None] = time.sleep,
) -> Any:
    last = "unknown error"
    for attempt in range(retries + 1):
        if attempt:
            sleep(backoff * 2 ** (attempt - 1))
        try:
            response = client.post(url, json=body)
            if response.status_code >= 500 or response.status_code == 429:
                last = f"HTTP {response.status_code}"
                continue
            if response.status_code >= 400:
                # client errors will not improve on retry
                raise BackendError(f"HTTP {response.status_code}", attempt, backend)
            return response.json()
        except BackendError:
            raise
        except httpx.TimeoutException as exc:
            last = f"timeout: {type(exc).__name__}"
        except httpx.HTTPError as exc:
            last = f"{type(exc).__name__}: {exc}"
        except ValueError as exc:
            last = f"invalid JSON: {exc}"
    raise BackendError(last, retries, backend)


def _auth_headers(env_name: str) -> dict[str, str]:
    key = os.environ.get(env_name, "").strip()
    return {"Authorization": f"Bearer {key}"} if key else {}


class HttpModel:
    """Chat-completions client.

    Sends ``{model, messages, stop, temperature, seed, max_tokens}`` and reads
    ``choices[0].message.content``. The scripted-model header line is removed
    from the prompt before sending. Because servers drop the matched stop
    sequence, a reply that stopped inside an open search query gets its
    closing delimiter restored.
    """

    def __init__(
        self,
        base_url: str,
        *,
        model: str,
        path: str = "/v1/chat/completions",
        timeout: float = 60.0,
        retries: int = 2,
        backoff: float = 0.5,
        api_key_env: str = "SIGMA_MODEL_API_KEY",
        transport: Optional[httpx.BaseTransport] = None,
        sleep: Callable[[float], None] = time.sleep,
    ) -> None:
        self.url = base_url.rstrip("/") + path
        self.model = model
        self.retries = retries
        self.backoff = backoff
        self._sleep = sleep
        self._client = httpx.Client(
            timeout=timeout, headers=_auth_headers(api_key_env), transport=transport
        )

    def generate(self, request: GenerationRequest) -> str:
        body = {
            "model": self.model,
            "messages": [{"role": "user", "content": strip_header(request.prompt)}],
            "stop": list(request.stop_sequences),
            "temperature": request.temperature,
            "seed": request.seed,
            "max_tokens": request.max_tokens,
        }
        data = _post_with_retries(
            self._client, self.url, body,
            retries=self.retries, backoff=self.backoff, backend="model", sleep=self._sleep,
        )
        try:
            choice = data["choices"][0]
            text = choice.get("message", {}).get("content")
            if text is None:
                text = choice.get("text", "")
        except (KeyError, IndexError, TypeError, AttributeError) as exc:
            raise BackendError(f"malformed response: {exc!r}", 0, "model") from exc
        text = str(text)
        if choice.get("finish_reason") == "stop" and text.rfind(BEGIN_SEARCH) > text.rfind(END_SEARCH):
            text += END_SEARCH
        return text

    def close(self) -> None:
        self._client.close()


# --------------------------------------------------------------------------
# Embeddings
# --------------------------------------------------------------------------

_TERM = re.compile(r"[^\W_]+")


def _unit_basis(dim: int) -> EmbeddingVector:
    return EmbeddingVector((1.0,) + (0.0,) * (dim - 1))


def _bucket(term: str, dim: int) -> int:
    digest = hashlib.blake2b(term.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "big") % dim


class HashEmbedder:
    """Bag-of-terms feature hashing: lowercase alphanumeric terms, hashed into
    ``dim`` buckets, counted, then L2-normalized."""

    def __init__(self, dim: int = 256) -> None:
        if dim < 1:
            raise ValueError("dim must be positive")
        self.dim = dim

    def embed(self, text: str) -> EmbeddingVector:
        counts = Counter(_bucket(t, self.dim) for t in _TERM.findall(text.lower()))
        if not counts:
            logger.warning("text %r has no terms; using unit basis vector", text[:40])
            return _unit_basis(self.dim)
        values = [0.0] * self.dim
        for bucket, n in counts.items():
            values[bucket] = float(n)
        norm = math.sqrt(sum(v * v for v in values))
        return EmbeddingVector(tuple(v / norm for v in values))

    def embed_batch(self, texts: Sequence[str]) -> list[EmbeddingVector]:
        return [self.embed(t) for t in texts]


class HttpEmbedder:
    """``POST {inputs: [...]}`` -> ``{vectors: [[...]]}`` with a fixed dimension."""

    def __init__(
        self,
        base_url: str,
        *,
        path: str = "/embed",
        timeout: float = 10.0,
        retries: int = 2,
        backoff: float = 0.5,
        api_key_env: str = "SIGMA_EMBED_API_KEY",
        transport: Optional[httpx.BaseTransport] = None,
        sleep: Callable[[float], None] = time.sleep,
    ) -> None:
        self.url = base_url.rstrip("/") + path
        self.retries = retries
        self.backoff = backoff
        self.dim: Optional[int] = None
        self._sleep = sleep
        self._client = httpx.Client(
            timeout=timeout, headers=_auth_headers(api_key_env), transport=transport
        )

    def embed_batch(self, texts: Sequence[str]) -> list[EmbeddingVector]:
        data = _post_with_retries(
            self._client, self.url, {"inputs": list(texts)},
            retries=self.retries, backoff=self.backoff, backend="embedding", sleep=self._sleep,
        )
        try:
            rows = [[float(x) for x in row] for row in data["vectors"]]
        except (KeyError, TypeError, ValueError) as exc:
            raise BackendError(f"malformed response: {exc!r}", 0, "embedding") from exc
        if len(rows) != len(texts):
            raise BackendError(f"expected {len(texts)} vectors, got {len(rows)}", 0, "embedding")
        out = []
        for row in rows:
            if self.dim is None:
                self.dim = len(row)
            if not row or len(row) != self.dim:
                raise BackendError(f"vector dimension {len(row)} != {self.dim}", 0, "embedding")
            if not any(row):
                logger.warning("embedding service returned a zero vector; using unit basis")
                out.append(_unit_basis(self.dim))
            else:
                out.append(EmbeddingVector(tuple(row)))
        return out

    def close(self) -> None:
        self._client.close()


# --------------------------------------------------------------------------
# Search
# --------------------------------------------------------------------------


class LocalCorpusSearch:
    """First-stage retriever over an in-memory corpus.

    A document's score is the number of distinct query terms (lowercased,
    whitespace-delimited) it contains; zero-score documents are dropped and
    ties keep corpus order.
    """

    def __init__(self, documents: Sequence[Chunk]) -> None:
        self.documents = list(documents)
        self._terms = [frozenset(d.text.lower().split()) for d in self.documents]

    @classmethod
    def from_jsonl(cls, path: str | Path) -> "LocalCorpusSearch":
        docs = []
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                if not line.strip():
                    continue
                try:
                    record = json.loads(line)
                    docs.append(Chunk(str(record["doc_id"]), str(record["text"]), ChunkSource.LOCAL_CORPUS))
                except (ValueError, KeyError, TypeError) as exc:
                    raise ValueError(f"{path}:{lineno}: bad corpus record: {exc}") from exc
        return cls(docs)

    def search(self, query: str, max_results: int) -> list[Chunk]:
        wanted = set(query.lower().split())
        scored = [
            (len(wanted & terms), index)
            for index, terms in enumerate(self._terms)
        ]
        ranked = sorted((s for s in scored if s[0] > 0), key=lambda s: (-s[0], s[1]))
        return [self.documents[index] for _, index in ranked[:max_results]]


class HttpSearch:
    """``POST {query, max_results}`` -> ``{results: [{doc_id, text}]}``."""

    def __init__(
        self,
        base_url: str,
        *,
        path: str = "/search",
        timeout: float = 10.0,
        retries: int = 2,
        backoff: float = 0.5,
        api_key_env: str = "SIGMA_SEARCH_API_KEY",
        transport: Optional[httpx.BaseTransport] = None,
        sleep: Callable[[float], None] = time.sleep,
    ) -> None:
        self.url = base_url.rstrip("/") + path
        self.retries = retries
        self.backoff = backoff
        self._sleep = sleep
        self._client = httpx.Client(
            timeout=timeout, headers=_auth_headers(api_key_env), transport=transport
        )

    def search(self, query: str, max_results: int) -> list[Chunk]:
        data = _post_with_retries(
            self._client, self.url, {"query": query, "max_results": max_results},
            retries=self.retries, backoff=self.backoff, backend="search", sleep=self._sleep,
        )
        try:
            results = data["results"]
            chunks = [
                Chunk(str(r["doc_id"]), str(r["text"]), ChunkSource.REMOTE_SEARCH)
                for r in results
                if str(r.get("text", ""))
            ]
        except (KeyError, TypeError, AttributeError) as exc:
            raise BackendError(f"malformed response: {exc!r}", 0, "search") from exc
        return chunks[:max_results]

    def close(self) -> None:
        self._client.close()


# --------------------------------------------------------------------------
# Assembly from configuration
# --------------------------------------------------------------------------


def _resolve(path: str, base_dir: Optional[Path]) -> Path:
    p = Path(path)
    return p if p.is_absolute() or base_dir is None else base_dir / p


def _base_url(configured: Optional[str], env_name: str, what: str) -> str:
    url = os.environ.get(env_name, "").strip() or (configured or "")
    if not url:
        raise ValueError(f"backends.{what}.base_url is required for the http backend")
    return url


def load_playbook(settings: ModelSettings, query_id: Optional[str], base_dir: Optional[Path]) -> ScriptedPlaybook:
    path = settings.playbook
    if query_id is not None:
        path = settings.playbooks.get(query_id, path)
    if not path:
        raise ValueError("backends.model.playbook is required for the scripted backend")
    return ScriptedPlaybook.load(_resolve(path, base_dir))


def build_backends(
    settings: BackendSettings,
    base_dir: Optional[Path] = None,
    query_id: Optional[str] = None,
) -> Backends:
    """Instantiate the backend triple described by ``settings``.

    Relative file paths resolve against ``base_dir`` (usually the config
    file's directory). ``query_id`` selects a per-query scripted playbook
    when one is configured.
    """
    m = settings.model
    if m.kind == "scripted":
        model: ModelBackend = ScriptedModel(load_playbook(m, query_id, base_dir))
    else:
        model = HttpModel(
            _base_url(m.base_url, "SIGMA_MODEL_BASE_URL", "model"),
            model=m.model, path=m.path, timeout=m.timeout,
            retries=settings.retries, backoff=settings.backoff, api_key_env=m.api_key_env,
        )
    e = settings.embedding
    if e.kind == "hash":
        embedder: EmbeddingBackend = HashEmbedder(e.dim)
    else:
        embedder = HttpEmbedder(
            _base_url(e.base_url, "SIGMA_EMBED_BASE_URL", "embedding"),
            path=e.path, timeout=e.timeout,
            retries=settings.retries, backoff=settings.backoff, api_key_env=e.api_key_env,
        )
    s = settings.search
    if s.kind == "local":
        if not s.corpus:
            raise ValueError("backends.search.corpus is required for the local backend")
        search: SearchBackend = LocalCorpusSearch.from_jsonl(_resolve(s.corpus, base_dir))
    else:
        search = HttpSearch(
            _base_url(s.base_url, "SIGMA_SEARCH_BASE_URL", "search"),
            path=s.path, timeout=s.timeout,
            retries=settings.retries, backoff=settings.backoff, api_key_env=s.api_key_env,
        )
    return Backends(model=model, embedder=embedder, search=search)
