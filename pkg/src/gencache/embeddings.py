"""Text embeddings and cosine similarity.

Two providers share one interface: a deterministic hashed bag-of-tokens
embedder that runs offline (the default for tests and benchmarks), and a
client for a remote embedding service speaking a minimal HTTP protocol
(POST {endpoint}/embed with {"texts": [...]} returning {"vectors": [...]}).
"""

from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass

import httpx
import numpy as np

from .prompt_model import ResponseDoc

DEFAULT_DIMS = 384
HASHED_LOCAL = "hashed-local"
REMOTE = "remote"

_TOKEN_RE = re.compile(r"[0-9a-z]+")


class EmbeddingError(RuntimeError):
    """Transport or protocol failure from a remote embedder; safe to retry."""


@dataclass(frozen=True)
class Embedding:
    """Fixed-dimension vector; unit L2 norm unless it is all-zero."""

    values: np.ndarray

    @property
    def dims(self) -> int:
        return int(self.values.shape[0])

    def is_zero(self) -> bool:
        return not np.any(self.values)


def as_unit_embedding(vec: np.ndarray) -> Embedding:
    """Normalize to unit norm; an all-zero input stays the zero vector."""
    vec = np.asarray(vec, dtype=np.float64)
    norm = float(np.linalg.norm(vec))
    if norm > 0.0:
        vec = vec / norm
    else:
        vec = vec.copy()
    vec.setflags(write=False)
    return Embedding(vec)


@dataclass(frozen=True)
class EmbedderConfig:
    kind: str = HASHED_LOCAL
    dims: int = DEFAULT_DIMS
    endpoint: str | None = None

    def __post_init__(self) -> None:
        if self.kind not in (HASHED_LOCAL, REMOTE):
            raise ValueError(f"unknown embedder kind: {self.kind!r}")
        if self.dims < 8:
            raise ValueError("embedding dims must be >= 8")
        if self.kind == REMOTE and not self.endpoint:
            raise ValueError("remote embedder requires an endpoint")


class Embedder:
    """Interface shared by the local and remote providers."""

    dims: int

    def embed_text(self, text: str) -> Embedding:
        raise NotImplementedError

    def embed_texts(self, texts: list[str]) -> list[Embedding]:
        return [self.embed_text(t) for t in texts]

    def embed_response_values(self, response: ResponseDoc) -> list[Embedding]:
        """One embedding per response value, in document order.

        Plain responses yield a single-element list; an empty structured
        document yields an empty list.
        """
        if response.kind == "structured" and not response.entries:
            return []
        return self.embed_texts(response.value_texts())


def _token_index(token: str, dims: int) -> int:
    digest = hashlib.blake2b(token.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "big") % dims


class HashedEmbedder(Embedder):
    """Deterministic bag-of-tokens embedder.

    Lowercases the text, splits it on non-alphanumeric runs, counts each
    token at a fixed hashed index, then L2-normalizes. Text with no tokens
    at all yields the zero vector. Pure function of (text, dims).
    """

    def __init__(self, dims: int = DEFAULT_DIMS) -> None:
        if dims < 8:
            raise ValueError("embedding dims must be >= 8")
        self.dims = dims

    def embed_text(self, text: str) -> Embedding:
        vec = np.zeros(self.dims, dtype=np.float64)
        for token in _TOKEN_RE.findall(text.lower()):
            vec[_token_index(token, self.dims)] += 1.0
        return as_unit_embedding(vec)


class RemoteEmbedder(Embedder):
    """Client for the embed-over-HTTP protocol.

    POST {endpoint}/embed with body {"texts": [...]} and expect
    {"vectors": [[...], ...]} holding one length-``dims`` vector per text.
    Transport and shape failures surface as EmbeddingError.
    """

    def __init__(
        self,
        endpoint: str,
        dims: int = DEFAULT_DIMS,
        timeout: float = 10.0,
        transport: httpx.BaseTransport | None = None,
    ) -> None:
        self.endpoint = endpoint.rstrip("/")
        self.dims = dims
        self._client = httpx.Client(timeout=timeout, transport=transport)

    def embed_texts(self, texts: list[str]) -> list[Embedding]:
        if not texts:
            return []
        try:
            resp = self._client.post(f"{self.endpoint}/embed", json={"texts": texts})
            resp.raise_for_status()
            payload = resp.json()
        except (httpx.HTTPError, ValueError) as exc:
            raise EmbeddingError(f"embed request failed: {exc}") from exc
        vectors = payload.get("vectors") if isinstance(payload, dict) else None
        if not isinstance(vectors, list) or len(vectors) != len(texts):
            raise EmbeddingError("embed response malformed: expected one vector per text")
        out = []
        for vec in vectors:
            arr = np.asarray(vec, dtype=np.float64)
            if arr.shape != (self.dims,):
                raise EmbeddingError(f"embed response has wrong dimension: {arr.shape}")
            out.append(as_unit_embedding(arr))
        return out

    def embed_text(self, text: str) -> Embedding:
        return self.embed_texts([text])[0]


def build_embedder(config: EmbedderConfig) -> Embedder:
    if config.kind == REMOTE:
        assert config.endpoint is not None
        return RemoteEmbedder(config.endpoint, dims=config.dims)
    return HashedEmbedder(dims=config.dims)


def cosine(a: Embedding, b: Embedding) -> float:
    """Standard cosine similarity; zero vectors compare as 0 to everything."""
    if a.dims != b.dims:
        raise ValueError(f"embedding dimension mismatch: {a.dims} vs {b.dims}")
    if a.is_zero() or b.is_zero():
        return 0.0
    value = float(np.dot(a.values, b.values))
    return max(-1.0, min(1.0, value))
