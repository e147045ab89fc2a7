"""Bounded store of validated programs keyed by cluster id.

LRU eviction enforces both an entry-count cap and a total-bytes cap. Evicting
or deleting an entry never touches the cluster itself; clusters are retained
so a program can be regenerated later. Recency is a monotonic counter rather
than wall-clock time, which keeps tests deterministic.
"""

from __future__ import annotations

import json
import os
import threading
import time
from collections import OrderedDict
from dataclasses import dataclass

from .programs import CompiledProgram, compile_program, program_from_json, serialize_program


@dataclass
class CacheEntry:
    cluster_id: int
    program: CompiledProgram
    created_at: float
    last_used_at: int
    hits: int = 0

    @property
    def size_bytes(self) -> int:
        return self.program.size_bytes


@dataclass(frozen=True)
class CacheStoreConfig:
    max_entries: int = 4096
    max_total_bytes: int = 64 * 1024 * 1024

    def __post_init__(self) -> None:
        if self.max_entries <= 0 or self.max_total_bytes <= 0:
            raise ValueError("cache capacity limits must be positive")


class CacheStore:
    def __init__(self, config: CacheStoreConfig | None = None) -> None:
        self.config = config or CacheStoreConfig()
        self._entries: OrderedDict[int, CacheEntry] = OrderedDict()  # LRU order, oldest first
        self._total_bytes = 0
        self._clock = 0
        self._lock = threading.RLock()

    def __len__(self) -> int:
        with self._lock:
            return len(self._entries)

    @property
    def total_bytes(self) -> int:
        with self._lock:
            return self._total_bytes

    def put(self, cluster_id: int, program: CompiledProgram) -> list[int]:
        """Insert or replace an entry; returns the cluster ids whose entries
        were evicted to restore capacity (the clusters themselves survive)."""
        with self._lock:
            if cluster_id in self._entries:
                self._total_bytes -= self._entries.pop(cluster_id).size_bytes
            self._clock += 1
            entry = CacheEntry(
                cluster_id=cluster_id,
                program=program,
                created_at=time.time(),
                last_used_at=self._clock,
            )
            self._entries[cluster_id] = entry
            self._total_bytes += entry.size_bytes
            evicted: list[int] = []
            while len(self._entries) > self.config.max_entries or (
                self._total_bytes > self.config.max_total_bytes and self._entries
            ):
                old_id, old = self._entries.popitem(last=False)
                self._total_bytes -= old.size_bytes
                evicted.append(old_id)
            return evicted

    def get(self, cluster_id: int) -> CacheEntry | None:
        """Retrieve for use: bumps recency and the hit counter."""
        with self._lock:
            entry = self._entries.get(cluster_id)
            if entry is None:
                return None
            self._clock += 1
            entry.last_used_at = self._clock
            entry.hits += 1
            self._entries.move_to_end(cluster_id)
            return entry

    def has(self, cluster_id: int) -> bool:
        with self._lock:
            return cluster_id in self._entries

    def delete_for_feedback(self, cluster_id: int) -> bool:
        """Drop the entry after a negative hit; idempotent."""
        with self._lock:
            entry = self._entries.pop(cluster_id, None)
            if entry is None:
                return False
            self._total_bytes -= entry.size_bytes
            return True

    def entries(self) -> list[CacheEntry]:
        with self._lock:
            return list(self._entries.values())

    # -- persistence ------------------------------------------------------

    def save(self, cache_dir: str) -> None:
        """Write programs/{id}.prog files plus the index, one record per line."""
        programs_dir = os.path.join(cache_dir, "programs")
        os.makedirs(programs_dir, exist_ok=True)
        with self._lock:
            lines = []
            for entry in self._entries.values():
                filename = f"{entry.cluster_id}.prog"
                with open(os.path.join(programs_dir, filename), "w", encoding="utf-8") as handle:
                    handle.write(serialize_program(entry.program.source))
                lines.append(
                    json.dumps(
                        {
                            "cluster_id": entry.cluster_id,
                            "file": filename,
                            "size": entry.size_bytes,
                            "created_at": entry.created_at,
                        }
                    )
                )
        with open(os.path.join(cache_dir, "index"), "w", encoding="utf-8") as handle:
            handle.write("\n".join(lines) + ("\n" if lines else ""))

    @classmethod
    def load(cls, cache_dir: str, config: CacheStoreConfig | None = None) -> "CacheStore":
        """Rebuild from disk with fresh (cold) recency; raises ValueError or
        OSError on a corrupt layout."""
        store = cls(config)
        index_path = os.path.join(cache_dir, "index")
        with open(index_path, "r", encoding="utf-8") as handle:
            for line_no, line in enumerate(handle, 1):
                line = line.strip()
                if not line:
                    continue
                record = json.loads(line)
                cluster_id = int(record["cluster_id"])
                program_path = os.path.join(cache_dir, "programs", str(record["file"]))
                with open(program_path, "r", encoding="utf-8") as prog_handle:
                    source = program_from_json(prog_handle.read())
                program = compile_program(source)
                store.put(cluster_id, program)
        return store
