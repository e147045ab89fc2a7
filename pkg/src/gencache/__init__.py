"""gencache: a generative cache for LLM clients.

Structurally similar prompts are clustered online; once a cluster holds
enough exemplars, an LLM synthesizes a reusable extraction program that is
validated against the exemplars and cached. Cache hits execute the program
locally, producing variation-aware responses without an LLM call.
"""

from .cache_store import CacheEntry, CacheStore, CacheStoreConfig
from .clustering import AssignResult, Cluster, ClusterStore, ClusterThresholds
from .codegen import (
    BackendError,
    ChatMessage,
    CodegenConfig,
    CompletionResult,
    GeneratedCache,
    HttpChatBackend,
    LlmBackend,
    ProgramParseError,
    ScriptedBackend,
    ValidationReport,
    build_codegen_prompt,
    generate_cache,
    generate_cache_with_stats,
    meets_gamma,
    parse_program_source,
    validate_program,
)
from .config import ConfigError, ServiceConfig, dumps_config, load_config
from .embeddings import (
    Embedder,
    EmbedderConfig,
    Embedding,
    EmbeddingError,
    HashedEmbedder,
    RemoteEmbedder,
    build_embedder,
    cosine,
)
from .programs import (
    CompileError,
    CompiledProgram,
    ExecLimits,
    ExecResult,
    PatternRule,
    ProgramSource,
    ResponseTemplate,
    compile_program,
    execute,
    program_from_json,
    sanity_check,
    serialize_program,
    structural_match,
)
from .prompt_model import (
    Exemplar,
    PromptRecord,
    ResponseDoc,
    make_exemplar,
    parse_response,
    serialize_response,
)
from .runtime import (
    CacheRuntime,
    Metrics,
    RequestOutcome,
    SnapshotError,
    UnknownRequestError,
    cost_ratio_series,
)
from .tokens import estimate_tokens

__version__ = "0.1.0"
