"""The request pipeline.

Serve path: embed the prompt, find the nearest cluster by prompt similarity,
and if that cluster has a cached program whose structural regex accepts the
prompt, execute it locally and return the result after sanity checks. Any
failure along the cache path silently degrades to the LLM path.

Miss path: call the backend, store the (prompt, response) exemplar in the
cluster database via the dual-threshold assignment, and kick off program
synthesis in the background once the cluster holds enough exemplars.
Exemplars are never stored for requests served from cache.
"""

from __future__ import annotations

import json
import math
import os
import threading
import time
from concurrent.futures import Future, ThreadPoolExecutor, wait
from dataclasses import asdict, dataclass, field

from .cache_store import CacheStore, CacheStoreConfig
from .clustering import Cluster, ClusterStore, ClusterThresholds
from .codegen import (
    BackendError,
    ChatMessage,
    CodegenConfig,
    LlmBackend,
    generate_cache_with_stats,
)
from .embeddings import Embedder
from .programs import (
    CompileError,
    ExecLimits,
    execute,
    sanity_check,
    structural_match,
)
from .prompt_model import PLAIN, PromptRecord, make_exemplar, parse_response, serialize_response
from .tokens import estimate_tokens

SERVED_FROM_CACHE = "cache"
SERVED_FROM_LLM = "llm"

RATIO_SENTINEL = math.inf  # ratio value while there are no hits yet


class UnknownRequestError(KeyError):
    """Feedback referenced a request id this runtime never served."""


class SnapshotError(RuntimeError):
    """Persisted state could not be loaded; the runtime is left untouched."""


@dataclass
class Timings:
    embed_ms: float = 0.0
    cluster_search_ms: float = 0.0
    regex_validate_ms: float = 0.0
    program_exec_ms: float = 0.0
    llm_ms: float = 0.0
    db_insert_ms: float = 0.0

    def as_dict(self) -> dict:
        return asdict(self)


@dataclass
class TokenCounts:
    spent_input: int = 0
    spent_output: int = 0
    saved_estimate: int = 0

    def as_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class RequestOutcome:
    request_id: str
    response_text: str
    served_from: str
    cluster_id: int | None
    timings: Timings
    tokens: TokenCounts

    def as_dict(self) -> dict:
        return {
            "id": self.request_id,
            "response": self.response_text,
            "served_from": self.served_from,
            "cluster_id": self.cluster_id,
            "timings": self.timings.as_dict(),
            "tokens": self.tokens.as_dict(),
        }


@dataclass
class Metrics:
    requests: int = 0
    hits: int = 0
    misses: int = 0
    codegen_llm_calls: int = 0
    validator_llm_calls: int = 0
    codegen_accepted: int = 0
    tokens_spent_input: int = 0
    tokens_spent_output: int = 0
    tokens_saved_input: int = 0
    tokens_saved_output: int = 0
    feedback_deletions: int = 0
    # One (codegen_llm_calls, hits) sample per request, enabling the
    # cost-ratio series at any window granularity.
    history: list[tuple[int, int]] = field(default_factory=list)

    def as_dict(self) -> dict:
        return {
            "requests": self.requests,
            "hits": self.hits,
            "misses": self.misses,
            "codegen_llm_calls": self.codegen_llm_calls,
            "validator_llm_calls": self.validator_llm_calls,
            "codegen_accepted": self.codegen_accepted,
            "tokens_spent_input": self.tokens_spent_input,
            "tokens_spent_output": self.tokens_spent_output,
            "tokens_saved_input": self.tokens_saved_input,
            "tokens_saved_output": self.tokens_saved_output,
            "feedback_deletions": self.feedback_deletions,
        }


def cost_ratio_series(metrics: Metrics, window: int = 100) -> list[float]:
    """Cumulative codegen LLM calls over cumulative hits at window boundaries.

    While there are no hits the ratio is the infinity sentinel (encoded as
    null in JSON reports).
    """
    if window <= 0:
        raise ValueError("window must be positive")
    series = []
    for calls, hits in metrics.history[window - 1 :: window]:
        series.append(calls / hits if hits else RATIO_SENTINEL)
    return series


class CacheRuntime:
    """Wires the embedder, cluster store, program cache, and backends."""

    def __init__(
        self,
        embedder: Embedder,
        codegen_backend: LlmBackend,
        validator_backend: LlmBackend,
        thresholds: ClusterThresholds | None = None,
        codegen: CodegenConfig | None = None,
        cache_config: CacheStoreConfig | None = None,
        exec_limits: ExecLimits | None = None,
        codegen_workers: int = 2,
        script_process_cap: int = 4,
    ) -> None:
        self.embedder = embedder
        self.codegen_backend = codegen_backend
        self.validator_backend = validator_backend
        self.codegen_cfg = codegen or CodegenConfig()
        self.thresholds = thresholds or ClusterThresholds()
        self.clusters = ClusterStore(
            embedder.dims, self.thresholds, max_exemplars=self.codegen_cfg.max_cluster_exemplars
        )
        self.cache = CacheStore(cache_config)
        self.exec_limits = exec_limits or ExecLimits()
        self.metrics = Metrics()
        self._metrics_lock = threading.Lock()
        self._requests: dict[str, tuple[str, int | None]] = {}
        self._requests_lock = threading.Lock()
        self._inflight: set[int] = set()
        self._inflight_lock = threading.Lock()
        self._script_gate = threading.BoundedSemaphore(max(1, script_process_cap))
        # codegen_workers=0 runs synthesis inline after the response is
        # formed: deterministic ordering for benchmarks, same observable
        # cache behavior.
        self._pool = ThreadPoolExecutor(max_workers=codegen_workers) if codegen_workers > 0 else None
        self._pending: list[Future] = []

    # -- request handling ---------------------------------------------------

    def handle_request(self, prompt: PromptRecord, backend: LlmBackend) -> RequestOutcome:
        timings = Timings()

        start = time.perf_counter()
        e_p = self.embedder.embed_text(prompt.full_text)
        timings.embed_ms = (time.perf_counter() - start) * 1000.0

        start = time.perf_counter()
        cluster_id = self.clusters.nearest_by_prompt(e_p, self.thresholds.t_prompt)
        timings.cluster_search_ms = (time.perf_counter() - start) * 1000.0

        if cluster_id is not None:
            entry = self.cache.get(cluster_id)
            if entry is not None:
                outcome = self._try_serve_from_cache(prompt, cluster_id, entry.program, timings)
                if outcome is not None:
                    return outcome

        return self._serve_from_llm(prompt, backend, timings)

    def _try_serve_from_cache(self, prompt, cluster_id, program, timings) -> RequestOutcome | None:
        start = time.perf_counter()
        matched = structural_match(program, prompt.full_text)
        timings.regex_validate_ms = (time.perf_counter() - start) * 1000.0
        if not matched:
            return None
        start = time.perf_counter()
        result = execute(program, prompt.full_text, self.exec_limits, gate=self._script_gate)
        exec_ms = (time.perf_counter() - start) * 1000.0
        cluster = self.clusters.get(cluster_id)
        expected_arity = 0 if cluster.response_kind == PLAIN else cluster.response_arity
        if not sanity_check(result, expected_arity):
            return None  # declined: fall through to the LLM path
        timings.program_exec_ms = exec_ms
        response_text = serialize_response(result.response)
        saved = estimate_tokens(prompt.full_text) + estimate_tokens(response_text)
        tokens = TokenCounts(spent_input=0, spent_output=0, saved_estimate=saved)
        with self._metrics_lock:
            self.metrics.requests += 1
            self.metrics.hits += 1
            self.metrics.tokens_saved_input += estimate_tokens(prompt.full_text)
            self.metrics.tokens_saved_output += estimate_tokens(response_text)
            self._record_history_locked()
        with self._requests_lock:
            self._requests[prompt.id] = (SERVED_FROM_CACHE, cluster_id)
        return RequestOutcome(
            request_id=prompt.id,
            response_text=response_text,
            served_from=SERVED_FROM_CACHE,
            cluster_id=cluster_id,
            timings=timings,
            tokens=tokens,
        )

    def _serve_from_llm(self, prompt, backend, timings) -> RequestOutcome:
        start = time.perf_counter()
        # Empty prompts are legal requests; the chat wire form needs content.
        completion = backend.complete([ChatMessage(role="user", content=prompt.full_text or " ")])
        timings.llm_ms = (time.perf_counter() - start) * 1000.0

        start = time.perf_counter()
        doc = parse_response(completion.text)
        exemplar = make_exemplar(prompt, doc, self.embedder)
        assignment = self.clusters.assign(exemplar)
        timings.db_insert_ms = (time.perf_counter() - start) * 1000.0

        cluster = self.clusters.get(assignment.cluster_id)
        tokens = TokenCounts(
            spent_input=completion.input_tokens,
            spent_output=completion.output_tokens,
            saved_estimate=0,
        )
        with self._metrics_lock:
            self.metrics.requests += 1
            self.metrics.misses += 1
            self.metrics.tokens_spent_input += completion.input_tokens
            self.metrics.tokens_spent_output += completion.output_tokens
            self._record_history_locked()
        with self._requests_lock:
            self._requests[prompt.id] = (SERVED_FROM_LLM, assignment.cluster_id)
        outcome = RequestOutcome(
            request_id=prompt.id,
            response_text=completion.text,
            served_from=SERVED_FROM_LLM,
            cluster_id=assignment.cluster_id,
            timings=timings,
            tokens=tokens,
        )
        self._maybe_schedule_codegen(cluster)
        return outcome

    def _record_history_locked(self) -> None:
        self.metrics.history.append((self.metrics.codegen_llm_calls, self.metrics.hits))

    # -- background codegen -------------------------------------------------

    def _maybe_schedule_codegen(self, cluster: Cluster) -> None:
        cfg = self.codegen_cfg
        with self._inflight_lock:
            if cluster.has_cache or cluster.retries_used >= cfg.rho:
                return
            if len(cluster.exemplars) < cfg.nu:
                return
            if cluster.id in self._inflight:
                return
            self._inflight.add(cluster.id)
        if self._pool is None:
            self._run_codegen(cluster)
        else:
            self._pending = [f for f in self._pending if not f.done()]
            self._pending.append(self._pool.submit(self._run_codegen, cluster))

    def _run_codegen(self, cluster: Cluster) -> None:
        try:
            result, stats = generate_cache_with_stats(
                cluster,
                self.codegen_backend,
                self.validator_backend,
                self.codegen_cfg,
                exec_limits=self.exec_limits,
            )
            with self._metrics_lock:
                self.metrics.codegen_llm_calls += stats.codegen_calls
                self.metrics.validator_llm_calls += stats.validator_calls
                self.metrics.tokens_spent_input += stats.input_tokens
                self.metrics.tokens_spent_output += stats.output_tokens
                if result is not None:
                    self.metrics.codegen_accepted += 1
            if result is not None:
                evicted = self.cache.put(cluster.id, result.program)
                with self.clusters.lock:
                    cluster.has_cache = True
                    for old_id in evicted:
                        if old_id != cluster.id:
                            self.clusters.get(old_id).has_cache = False
        except Exception:
            # Background synthesis must never take down the serving path.
            pass
        finally:
            with self._inflight_lock:
                self._inflight.discard(cluster.id)

    def drain(self) -> None:
        """Barrier: wait until queued codegen work has finished."""
        if self._pool is None:
            return
        while True:
            pending = [f for f in self._pending if not f.done()]
            if pending:
                wait(pending)
                continue
            with self._inflight_lock:
                if not self._inflight:
                    return
            time.sleep(0.005)

    def close(self) -> None:
        if self._pool is not None:
            self._pool.shutdown(wait=True)

    # -- feedback -----------------------------------------------------------

    def record_feedback(self, request_id: str, valid: bool) -> bool:
        """Negative feedback on a cache hit deletes the cached program while
        retaining the cluster; returns whether a deletion occurred."""
        with self._requests_lock:
            if request_id not in self._requests:
                raise UnknownRequestError(request_id)
            served_from, cluster_id = self._requests[request_id]
        if served_from != SERVED_FROM_CACHE or valid or cluster_id is None:
            return False
        deleted = self.cache.delete_for_feedback(cluster_id)
        if deleted:
            with self.clusters.lock:
                self.clusters.get(cluster_id).has_cache = False
            with self._metrics_lock:
                self.metrics.feedback_deletions += 1
        return deleted

    # -- persistence ----------------------------------------------------------

    def save_state(self, data_dir: str) -> None:
        """Persist the cluster database and the program cache."""
        os.makedirs(data_dir, exist_ok=True)
        records = self.clusters.dump_records()
        path = os.path.join(data_dir, "clusters.ndjson")
        with open(path, "w", encoding="utf-8") as handle:
            for record in records:
                handle.write(json.dumps(record, ensure_ascii=False) + "\n")
        self.cache.save(os.path.join(data_dir, "cache"))

    def load_state(self, data_dir: str) -> None:
        """Replace in-memory state with a persisted snapshot.

        Centroids are recomputed and programs recompiled. On any parse or
        integrity failure a SnapshotError is raised and the current state is
        left untouched.
        """
        clusters_path = os.path.join(data_dir, "clusters.ndjson")
        cache_dir = os.path.join(data_dir, "cache")
        try:
            records = []
            with open(clusters_path, "r", encoding="utf-8") as handle:
                for line in handle:
                    line = line.strip()
                    if line:
                        records.append(json.loads(line))
            new_clusters = ClusterStore.load_records(
                records,
                self.embedder,
                self.thresholds,
                max_exemplars=self.codegen_cfg.max_cluster_exemplars,
            )
            if os.path.exists(os.path.join(cache_dir, "index")):
                new_cache = CacheStore.load(cache_dir, self.cache.config)
            else:
                new_cache = CacheStore(self.cache.config)
            for entry in new_cache.entries():
                if entry.cluster_id >= len(new_clusters):
                    raise ValueError(f"cache entry {entry.cluster_id} has no cluster")
        except (OSError, ValueError, KeyError, TypeError, CompileError) as exc:
            raise SnapshotError(f"cannot restore state: {exc}") from exc
        # The cache index is the authority for has_cache after a reload.
        for cluster in new_clusters.clusters:
            cluster.has_cache = False
        for entry in new_cache.entries():
            new_clusters.get(entry.cluster_id).has_cache = True
        self.clusters = new_clusters
        self.cache = new_cache
