"""Online clustering of exemplars by joint prompt/response similarity.

Store-time assignment gates on both the prompt similarity (cosine to the
cluster prompt centroid) and the response similarity (mean cosine across
value slots), each against its own threshold, then picks the argmax of the
combined score. The serve path, which has no response yet, uses the
prompt-only nearest-cluster lookup.

Centroids are maintained as running vector sums and renormalized on read,
which makes incremental updates bit-identical to a from-scratch recompute
that adds members in insertion order.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field

import numpy as np

from .embeddings import Embedding, as_unit_embedding, cosine
from .prompt_model import Exemplar, PromptRecord, parse_response, serialize_response

DEFAULT_MAX_EXEMPLARS = 12  # 3 * nu at the default nu=4


@dataclass(frozen=True)
class ClusterThresholds:
    """Strict lower bounds a candidate cluster must exceed on both scores."""

    t_prompt: float = 0.8
    t_response: float = 0.75

    def __post_init__(self) -> None:
        for name, value in (("t_prompt", self.t_prompt), ("t_response", self.t_response)):
            if not 0.0 < value <= 1.0:
                raise ValueError(f"{name} must be in (0, 1], got {value}")


@dataclass
class Cluster:
    """One group of exemplars plus its codegen bookkeeping.

    ``response_arity`` is the number of embedded value slots (1 for plain
    responses, the entry count for structured ones); every member shares it.
    """

    id: int
    response_arity: int
    response_kind: str
    exemplars: list[Exemplar] = field(default_factory=list)
    retries_used: int = 0
    has_cache: bool = False
    sealed: bool = False
    _prompt_sum: np.ndarray = field(default=None, repr=False)  # type: ignore[assignment]
    _response_sums: list[np.ndarray] = field(default_factory=list, repr=False)

    @property
    def size(self) -> int:
        return len(self.exemplars)

    @property
    def prompt_centroid(self) -> Embedding:
        return as_unit_embedding(self._prompt_sum / max(1, len(self.exemplars)))

    @property
    def response_centroids(self) -> list[Embedding]:
        n = max(1, len(self.exemplars))
        return [as_unit_embedding(s / n) for s in self._response_sums]


@dataclass(frozen=True)
class AssignResult:
    cluster_id: int
    created: bool
    s_p: float
    s_r: float
    stored: bool  # False when the chosen cluster was sealed and dropped the exemplar


class ClusterStore:
    """Linear-scan cluster store with serialized mutations.

    Cluster ids are dense and monotonically increasing; clusters are never
    removed (cache eviction keeps them), so ``clusters[i].id == i``. Prompt
    centroids are mirrored in a dense matrix so nearest-cluster queries are
    a single matrix-vector product.
    """

    def __init__(
        self,
        dims: int,
        thresholds: ClusterThresholds | None = None,
        max_exemplars: int = DEFAULT_MAX_EXEMPLARS,
    ) -> None:
        if max_exemplars < 1:
            raise ValueError("max_exemplars must be positive")
        self.dims = dims
        self.thresholds = thresholds or ClusterThresholds()
        self.max_exemplars = max_exemplars
        self.clusters: list[Cluster] = []
        self.lock = threading.RLock()
        self._matrix = np.zeros((64, dims), dtype=np.float64)

    def __len__(self) -> int:
        return len(self.clusters)

    def get(self, cluster_id: int) -> Cluster:
        with self.lock:
            return self.clusters[cluster_id]

    # -- similarity -------------------------------------------------------

    def prompt_similarity(self, cluster: Cluster, e_p: Embedding) -> float:
        return cosine(e_p, cluster.prompt_centroid)

    def response_similarity(self, cluster: Cluster, resp_embs) -> float | None:
        """Mean per-slot cosine, or None when the arity gate rejects.

        Two empty response docs (arity 0 on both sides) are structurally
        identical, so their similarity is defined as 1.0.
        """
        if len(resp_embs) != cluster.response_arity:
            return None
        if cluster.response_arity == 0:
            return 1.0
        centroids = cluster.response_centroids
        sims = [cosine(e, c) for e, c in zip(resp_embs, centroids)]
        return float(sum(sims) / len(sims))

    # -- mutation ---------------------------------------------------------

    def assign(self, exemplar: Exemplar, thresholds: ClusterThresholds | None = None) -> AssignResult:
        """Place an exemplar: argmax of (s_p + s_r) over dual-threshold passers.

        Both thresholds are strict. With no qualifying cluster a new one is
        seeded with the exemplar. Ties break toward the lowest cluster id.
        """
        th = thresholds or self.thresholds
        with self.lock:
            best: Cluster | None = None
            best_score = best_sp = best_sr = 0.0
            if self.clusters:
                sims = self._matrix[: len(self.clusters)] @ exemplar.prompt_embedding.values
                for cluster in self.clusters:
                    s_p = max(-1.0, min(1.0, float(sims[cluster.id])))
                    if s_p <= th.t_prompt:
                        continue
                    if cluster.response_kind != exemplar.response.kind:
                        # Plain responses cluster only with plain, structured
                        # with structured, even at equal value counts.
                        continue
                    s_r = self.response_similarity(cluster, exemplar.response_embeddings)
                    if s_r is None or s_r <= th.t_response:
                        continue
                    score = s_p + s_r
                    if best is None or score > best_score:
                        best, best_score, best_sp, best_sr = cluster, score, s_p, s_r
            if best is None:
                cluster = self._create(exemplar)
                s_p = self.prompt_similarity(cluster, exemplar.prompt_embedding)
                s_r = self.response_similarity(cluster, exemplar.response_embeddings)
                return AssignResult(cluster.id, True, s_p, s_r if s_r is not None else 0.0, True)
            stored = self._append(best, exemplar)
            return AssignResult(best.id, False, best_sp, best_sr, stored)

    def add_exemplar(self, cluster: Cluster, exemplar: Exemplar) -> bool:
        """Append to a cluster; a full cluster seals and rejects the exemplar."""
        if len(exemplar.response_embeddings) != cluster.response_arity:
            raise ValueError("exemplar response arity does not match the cluster")
        if exemplar.response.kind != cluster.response_kind:
            raise ValueError("exemplar response kind does not match the cluster")
        with self.lock:
            return self._append(cluster, exemplar)

    def _append(self, cluster: Cluster, exemplar: Exemplar) -> bool:
        if cluster.sealed or len(cluster.exemplars) >= self.max_exemplars:
            cluster.sealed = True
            return False
        cluster.exemplars.append(exemplar)
        cluster._prompt_sum = cluster._prompt_sum + exemplar.prompt_embedding.values
        for j, emb in enumerate(exemplar.response_embeddings):
            cluster._response_sums[j] = cluster._response_sums[j] + emb.values
        if len(cluster.exemplars) >= self.max_exemplars:
            cluster.sealed = True
        self._sync_row(cluster)
        return True

    def _create(self, exemplar: Exemplar) -> Cluster:
        cluster = Cluster(
            id=len(self.clusters),
            response_arity=len(exemplar.response_embeddings),
            response_kind=exemplar.response.kind,
            exemplars=[exemplar],
            _prompt_sum=exemplar.prompt_embedding.values.copy(),
            _response_sums=[e.values.copy() for e in exemplar.response_embeddings],
        )
        self.clusters.append(cluster)
        if len(cluster.exemplars) >= self.max_exemplars:
            cluster.sealed = True
        self._ensure_capacity()
        self._sync_row(cluster)
        return cluster

    def _ensure_capacity(self) -> None:
        if len(self.clusters) > self._matrix.shape[0]:
            grown = np.zeros((self._matrix.shape[0] * 2, self.dims), dtype=np.float64)
            grown[: self._matrix.shape[0]] = self._matrix
            self._matrix = grown

    def _sync_row(self, cluster: Cluster) -> None:
        self._matrix[cluster.id] = cluster.prompt_centroid.values

    # -- lookup -----------------------------------------------------------

    def nearest_by_prompt(self, e_p: Embedding, t_prompt: float) -> int | None:
        """Best cluster by prompt similarity alone, if it clears the threshold.

        Used on the serve path where no response exists yet. Ties break
        toward the lowest cluster id.
        """
        with self.lock:
            n = len(self.clusters)
            if n == 0:
                return None
            sims = self._matrix[:n] @ e_p.values
            best = int(np.argmax(sims))
            if float(sims[best]) > t_prompt:
                return best
            return None

    def summaries(self) -> list[dict]:
        with self.lock:
            return [
                {
                    "id": c.id,
                    "size": c.size,
                    "response_arity": c.response_arity,
                    "response_kind": c.response_kind,
                    "sealed": c.sealed,
                    "has_cache": c.has_cache,
                    "retries_used": c.retries_used,
                }
                for c in self.clusters
            ]

    # -- persistence ------------------------------------------------------

    def dump_records(self) -> list[dict]:
        """Snapshot records; centroids are recomputed on load, not stored."""
        with self.lock:
            records = []
            for c in self.clusters:
                records.append(
                    {
                        "id": c.id,
                        "sealed": c.sealed,
                        "has_cache": c.has_cache,
                        "retries_used": c.retries_used,
                        "exemplars": [
                            {
                                "prompt_id": ex.prompt.id,
                                "full_text": ex.prompt.full_text,
                                "user_text": ex.prompt.user_text,
                                "received_at": ex.prompt.received_at,
                                "response": serialize_response(ex.response),
                            }
                            for ex in c.exemplars
                        ],
                    }
                )
            return records

    @classmethod
    def load_records(
        cls,
        records: list[dict],
        embedder,
        thresholds: ClusterThresholds | None = None,
        max_exemplars: int = DEFAULT_MAX_EXEMPLARS,
    ) -> "ClusterStore":
        """Rebuild a store from snapshot records, re-embedding every exemplar."""
        store = cls(embedder.dims, thresholds, max_exemplars)
        for position, record in enumerate(records):
            if record.get("id") != position:
                raise ValueError(f"cluster record {position} has id {record.get('id')}")
            exemplar_records = record.get("exemplars", [])
            if not exemplar_records:
                raise ValueError(f"cluster {position} has no exemplars")
            exemplars = []
            for ex_rec in exemplar_records:
                prompt = PromptRecord(
                    id=str(ex_rec["prompt_id"]),
                    full_text=ex_rec["full_text"],
                    user_text=ex_rec.get("user_text", ex_rec["full_text"]),
                    received_at=float(ex_rec.get("received_at", 0.0)),
                )
                response = parse_response(ex_rec["response"])
                exemplars.append(
                    Exemplar(
                        prompt=prompt,
                        response=response,
                        prompt_embedding=embedder.embed_text(prompt.full_text),
                        response_embeddings=tuple(embedder.embed_response_values(response)),
                    )
                )
            cluster = store._create(exemplars[0])
            for ex in exemplars[1:]:
                if not store._append(cluster, ex):
                    raise ValueError(f"cluster {position} exceeds the exemplar cap")
            cluster.sealed = bool(record.get("sealed", False)) or cluster.sealed
            cluster.has_cache = bool(record.get("has_cache", False))
            cluster.retries_used = int(record.get("retries_used", 0))
        return store
