"""Search-token protocol: scanning model output, extracting answers, and
formatting retrieval results for re-injection into a transcript."""

from __future__ import annotations

import enum
import re
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

from sigma_agents.core import RankedChunk

BEGIN_SEARCH = "<|begin_search_query|>"
END_SEARCH = "<|end_search_query|>"
BEGIN_RESULTS = "<|begin_search_results|>"
END_RESULTS = "<|end_search_results|>"
NO_RESULTS = "No results found."


class SpanKind(str, enum.Enum):
    SEARCH_QUERY = "SearchQuery"
    ANSWER = "Answer"
    PLAIN = "Plain"


@dataclass(frozen=True)
class TokenSpan:
    """A slice ``text[start:end]`` of a scanned generation.

    For search spans ``payload`` is the stripped query; the whitespace that
    surrounded it inside the delimiters is kept in ``padding`` so that
    :meth:`render` reproduces the original slice exactly.
    """

    kind: SpanKind
    start: int
    end: int
    payload: str
    padding: tuple[str, str] = ("", "")

    def render(self) -> str:
        if self.kind is SpanKind.SEARCH_QUERY:
            lead, trail = self.padding
            return f"{BEGIN_SEARCH}{lead}{self.payload}{trail}{END_SEARCH}"
        return self.payload


def scan_generation(text: str) -> list[TokenSpan]:
    """Split ``text`` into ordered Plain and SearchQuery spans.

    Each closing delimiter pairs with the nearest unmatched opener before it
    (innermost match). Openers or closers without a partner stay in Plain
    spans. Offsets are code-point indices into ``text``.
    """
    spans: list[TokenSpan] = []
    plain_start = 0
    cursor = 0
    while True:
        close = text.find(END_SEARCH, cursor)
        if close < 0:
            break
        open_ = text.rfind(BEGIN_SEARCH, plain_start, close)
        if open_ < 0:
            # orphan closer: remains plain text
            cursor = close + len(END_SEARCH)
            continue
        if open_ > plain_start:
            spans.append(TokenSpan(SpanKind.PLAIN, plain_start, open_, text[plain_start:open_]))
        inner = text[open_ + len(BEGIN_SEARCH):close]
        stripped = inner.strip()
        if stripped:
            lead = inner[: len(inner) - len(inner.lstrip())]
            trail = inner[len(inner.rstrip()):]
        else:
            lead, trail = inner, ""
        end = close + len(END_SEARCH)
        spans.append(TokenSpan(SpanKind.SEARCH_QUERY, open_, end, stripped, (lead, trail)))
        plain_start = cursor = end
    if plain_start < len(text) or not spans:
        spans.append(TokenSpan(SpanKind.PLAIN, plain_start, len(text), text[plain_start:]))
    return spans


def search_queries(text: str) -> list[str]:
    """Non-blank search query payloads found in ``text``, in order."""
    return [
        s.payload
        for s in scan_generation(text)
        if s.kind is SpanKind.SEARCH_QUERY and s.payload
    ]


def reconstruct(spans: Iterable[TokenSpan]) -> str:
    return "".join(s.render() for s in spans)


# --------------------------------------------------------------------------
# Answers
# --------------------------------------------------------------------------

_BOXED = "\\boxed{"
_FINAL_LINE = re.compile(r"final answer\s*:\s*(.*\S)", re.IGNORECASE)
_PLAIN_INT = re.compile(r"[+-]?\d+")
_GROUPED_INT = re.compile(r"[+-]?\d{1,3}(?:,\d{3})+")


def normalize_answer(answer: str) -> str:
    """Canonical form used for comparing answers.

    Trims, collapses whitespace, strips trailing periods, canonicalizes
    integers (leading zeros, thousands separators) and lowercases anything
    non-numeric. Idempotent.
    """
    value = " ".join(answer.split())
    while value.endswith("."):
        value = " ".join(value[:-1].split())
    if _PLAIN_INT.fullmatch(value) or _GROUPED_INT.fullmatch(value):
        return str(int(value.replace(",", "")))
    return value.lower()


def _boxed_payloads(text: str) -> list[str]:
    payloads = []
    i = text.find(_BOXED)
    while i >= 0:
        j = i + len(_BOXED)
        depth = 1
        k = j
        while k < len(text) and depth:
            if text[k] == "{":
                depth += 1
            elif text[k] == "}":
                depth -= 1
            k += 1
        if depth == 0:
            payloads.append(text[j : k - 1])
        i = text.find(_BOXED, i + 1)
    return payloads


def extract_answer(text: str) -> Optional[str]:
    """Normalized payload of the last ``\\boxed{...}`` in ``text``, falling
    back to the last "Final answer: x" line. ``None`` when neither is found."""
    for payload in reversed(_boxed_payloads(text)):
        normalized = normalize_answer(payload)
        if normalized:
            return normalized
    for line in reversed(text.splitlines()):
        match = _FINAL_LINE.search(line)
        if match:
            normalized = normalize_answer(match.group(1))
            if normalized:
                return normalized
    return None


# --------------------------------------------------------------------------
# Results block
# --------------------------------------------------------------------------


def format_search_results(ranked: Sequence[RankedChunk], limit_chars: int) -> str:
    """Render ranked chunks as a delimited results block.

    Entries are ``[m] text`` lines in rank order. Whole entries are added
    while the payload stays within ``limit_chars``; the first entry is always
    present, cut short if it alone exceeds the limit.
    """
    if not ranked:
        return f"{BEGIN_RESULTS}\n{NO_RESULTS}\n{END_RESULTS}"
    entries: list[str] = []
    used = 0
    for rank, item in enumerate(ranked, start=1):
        entry = f"[{rank}] {item.chunk.text}"
        cost = len(entry) + (1 if entries else 0)
        if not entries:
            entries.append(entry[: max(limit_chars, len(f"[{rank}] "))])
            used = len(entries[0])
            continue
        if used + cost > limit_chars:
            break
        entries.append(entry)
        used += cost
    body = "\n".join(entries)
    return f"{BEGIN_RESULTS}\n{body}\n{END_RESULTS}"
