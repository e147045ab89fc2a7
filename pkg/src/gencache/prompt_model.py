"""Canonical prompt and response representations plus wire-text parsing.

Responses travel as UTF-8 text. A flat key-value JSON object is promoted to
the structured form used by clustering and validation; anything else (plain
text, nested documents, arrays, bare scalars) stays plain.
"""

from __future__ import annotations

import json
import time
import uuid
from dataclasses import dataclass
from typing import TYPE_CHECKING, Any, Iterable

if TYPE_CHECKING:
    from .embeddings import Embedding

STRUCTURED = "structured"
PLAIN = "plain"


@dataclass(frozen=True)
class PromptRecord:
    """One request: the full constructed prompt plus its user-visible segment."""

    id: str
    full_text: str
    user_text: str
    received_at: float

    def __post_init__(self) -> None:
        if self.user_text not in self.full_text:
            raise ValueError("user_text must be contained in full_text")

    @classmethod
    def create(
        cls,
        full_text: str,
        user_text: str | None = None,
        request_id: str | None = None,
    ) -> "PromptRecord":
        return cls(
            id=request_id or str(uuid.uuid4()),
            full_text=full_text,
            user_text=full_text if user_text is None else user_text,
            received_at=time.time(),
        )


@dataclass(frozen=True)
class ResponseDoc:
    """A response in structured (ordered key-value) or plain-text form."""

    kind: str
    entries: tuple[tuple[str, str], ...] = ()
    text: str = ""

    def __post_init__(self) -> None:
        if self.kind not in (STRUCTURED, PLAIN):
            raise ValueError(f"unknown response kind: {self.kind!r}")
        if self.kind == PLAIN and self.entries:
            raise ValueError("plain responses carry no entries")
        keys = [k for k, _ in self.entries]
        if len(set(keys)) != len(keys):
            raise ValueError("structured response keys must be unique")

    @classmethod
    def structured(cls, entries: Iterable[tuple[str, str]]) -> "ResponseDoc":
        return cls(kind=STRUCTURED, entries=tuple((str(k), str(v)) for k, v in entries))

    @classmethod
    def plain(cls, text: str) -> "ResponseDoc":
        return cls(kind=PLAIN, text=text)

    @property
    def value_count(self) -> int:
        # Plain text counts as a single value; an empty structured doc has none.
        return len(self.entries) if self.kind == STRUCTURED else 1

    def value_texts(self) -> list[str]:
        if self.kind == STRUCTURED:
            return [v for _, v in self.entries]
        return [self.text]

    def get(self, key: str, default: str | None = None) -> str | None:
        for k, v in self.entries:
            if k == key:
                return v
        return default


@dataclass(frozen=True)
class Exemplar:
    """A (prompt, response) pair with embeddings; the unit of cluster membership."""

    prompt: PromptRecord
    response: ResponseDoc
    prompt_embedding: "Embedding"
    response_embeddings: tuple["Embedding", ...]

    def __post_init__(self) -> None:
        if len(self.response_embeddings) != self.response.value_count:
            raise ValueError("one response embedding per value is required")


def _canonical_scalar(value: Any) -> str:
    """Stringify JSON scalars: lowercase booleans, no exponent notation."""
    if value is None:
        return "null"
    if value is True:
        return "true"
    if value is False:
        return "false"
    if isinstance(value, float):
        text = f"{value:.12f}".rstrip("0").rstrip(".")
        return text or "0"
    return str(value)


def parse_response(text: str) -> ResponseDoc:
    """Parse wire text; only flat key-value objects become structured docs."""
    try:
        parsed = json.loads(text)
    except (ValueError, RecursionError):
        return ResponseDoc.plain(text)
    if not isinstance(parsed, dict):
        return ResponseDoc.plain(text)
    entries: list[tuple[str, str]] = []
    for key, value in parsed.items():
        if isinstance(value, (dict, list)):
            # Nested documents degrade to plain; per-value embeddings are
            # defined over flat pairs only.
            return ResponseDoc.plain(text)
        entries.append((key, _canonical_scalar(value)))
    return ResponseDoc.structured(entries)


def serialize_response(doc: ResponseDoc) -> str:
    """Canonical wire form: compact JSON for structured docs, text verbatim."""
    if doc.kind == PLAIN:
        return doc.text
    return json.dumps(dict(doc.entries), separators=(",", ":"), ensure_ascii=False)


def make_exemplar(prompt: PromptRecord, response: ResponseDoc, embedder) -> Exemplar:
    """Embed a prompt/response pair into cluster-ready form."""
    return Exemplar(
        prompt=prompt,
        response=response,
        prompt_embedding=embedder.embed_text(prompt.full_text),
        response_embeddings=tuple(embedder.embed_response_values(response)),
    )
