"""Service configuration: a flat key-value text file with env overrides.

File format: one ``key = value`` pair per line, ``#`` comments allowed.
Environment variables override file values using the prefix ``GENCACHE_``
with dots replaced by underscores and the key uppercased, e.g.
``GENCACHE_THRESHOLDS_T_PROMPT=0.85``.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

from .cache_store import CacheStoreConfig
from .clustering import ClusterThresholds
from .codegen import CodegenConfig
from .embeddings import EmbedderConfig
from .programs import ExecLimits

ENV_PREFIX = "GENCACHE_"


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ServiceConfig:
    listen_addr: str = "127.0.0.1:8080"
    data_dir: str = "./gencache-data"
    backend_endpoint: str = ""
    backend_model: str = ""
    codegen_workers: int = 2
    embedder: EmbedderConfig = field(default_factory=EmbedderConfig)
    thresholds: ClusterThresholds = field(default_factory=ClusterThresholds)
    codegen: CodegenConfig = field(default_factory=CodegenConfig)
    cache: CacheStoreConfig = field(default_factory=CacheStoreConfig)
    exec_limits: ExecLimits = field(default_factory=ExecLimits)


def _parse_bool(raw: str) -> bool:
    low = raw.strip().lower()
    if low in ("true", "1", "yes", "on"):
        return True
    if low in ("false", "0", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {raw!r}")


# key -> (type tag, default getter description). Order defines the canonical
# serialization layout.
_KEYS: dict[str, str] = {
    "listen_addr": "str",
    "data_dir": "str",
    "backend.endpoint": "str",
    "backend.model": "str",
    "codegen.workers": "int",
    "embedder.kind": "str",
    "embedder.dims": "int",
    "embedder.endpoint": "str",
    "thresholds.t_prompt": "float",
    "thresholds.t_response": "float",
    "codegen.nu": "int",
    "codegen.gamma_percent": "float",
    "codegen.rho": "int",
    "codegen.mode": "str",
    "codegen.byte_equal_shortcut": "bool",
    "cache.max_entries": "int",
    "cache.max_total_bytes": "int",
    "executor.timeout_ms": "int",
    "executor.max_output_bytes": "int",
}


def _flatten(cfg: ServiceConfig) -> dict[str, str]:
    return {
        "listen_addr": cfg.listen_addr,
        "data_dir": cfg.data_dir,
        "backend.endpoint": cfg.backend_endpoint,
        "backend.model": cfg.backend_model,
        "codegen.workers": str(cfg.codegen_workers),
        "embedder.kind": cfg.embedder.kind,
        "embedder.dims": str(cfg.embedder.dims),
        "embedder.endpoint": cfg.embedder.endpoint or "",
        "thresholds.t_prompt": repr(cfg.thresholds.t_prompt),
        "thresholds.t_response": repr(cfg.thresholds.t_response),
        "codegen.nu": str(cfg.codegen.nu),
        "codegen.gamma_percent": repr(cfg.codegen.gamma_percent),
        "codegen.rho": str(cfg.codegen.rho),
        "codegen.mode": cfg.codegen.mode,
        "codegen.byte_equal_shortcut": "true" if cfg.codegen.byte_equal_shortcut else "false",
        "cache.max_entries": str(cfg.cache.max_entries),
        "cache.max_total_bytes": str(cfg.cache.max_total_bytes),
        "executor.timeout_ms": str(cfg.exec_limits.timeout_ms),
        "executor.max_output_bytes": str(cfg.exec_limits.max_output_bytes),
    }


def _inflate(values: dict[str, str]) -> ServiceConfig:
    def get(key: str, default: str) -> str:
        return values.get(key, default)

    try:
        embedder = EmbedderConfig(
            kind=get("embedder.kind", "hashed-local"),
            dims=int(get("embedder.dims", "384")),
            endpoint=get("embedder.endpoint", "") or None,
        )
        thresholds = ClusterThresholds(
            t_prompt=float(get("thresholds.t_prompt", "0.8")),
            t_response=float(get("thresholds.t_response", "0.75")),
        )
        codegen = CodegenConfig(
            nu=int(get("codegen.nu", "4")),
            gamma_percent=float(get("codegen.gamma_percent", "50")),
            rho=int(get("codegen.rho", "30")),
            mode=get("codegen.mode", "declarative"),
            byte_equal_shortcut=_parse_bool(get("codegen.byte_equal_shortcut", "true")),
        )
        cache = CacheStoreConfig(
            max_entries=int(get("cache.max_entries", "4096")),
            max_total_bytes=int(get("cache.max_total_bytes", str(64 * 1024 * 1024))),
        )
        exec_limits = ExecLimits(
            timeout_ms=int(get("executor.timeout_ms", "2000")),
            max_output_bytes=int(get("executor.max_output_bytes", str(64 * 1024))),
        )
        return ServiceConfig(
            listen_addr=get("listen_addr", "127.0.0.1:8080"),
            data_dir=get("data_dir", "./gencache-data"),
            backend_endpoint=get("backend.endpoint", ""),
            backend_model=get("backend.model", ""),
            codegen_workers=int(get("codegen.workers", "2")),
            embedder=embedder,
            thresholds=thresholds,
            codegen=codegen,
            cache=cache,
            exec_limits=exec_limits,
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _env_overrides() -> dict[str, str]:
    overrides = {}
    for key in _KEYS:
        env_name = ENV_PREFIX + key.upper().replace(".", "_")
        if env_name in os.environ:
            overrides[key] = os.environ[env_name]
    return overrides


def parse_config_text(text: str) -> ServiceConfig:
    values: dict[str, str] = {}
    for line_no, raw_line in enumerate(text.splitlines(), 1):
        line = raw_line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"line {line_no}: expected 'key = value'")
        key, _, value = line.partition("=")
        key = key.strip()
        if key not in _KEYS:
            raise ConfigError(f"line {line_no}: unknown key {key!r}")
        values[key] = value.strip()
    values.update(_env_overrides())
    return _inflate(values)


def load_config(path: str) -> ServiceConfig:
    with open(path, "r", encoding="utf-8") as handle:
        return parse_config_text(handle.read())


def dumps_config(cfg: ServiceConfig) -> str:
    flat = _flatten(cfg)
    return "\n".join(f"{key} = {flat[key]}" for key in _KEYS) + "\n"
