"""Cache creation: build synthesis prompts from exemplars, parse emitted
programs, validate them against the exemplars, and loop with reflection
under the acceptance gate (gamma) and the per-cluster retry budget (rho)."""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from importlib import resources
from typing import Protocol, Sequence

import httpx

from .clustering import Cluster
from .programs import (
    DECLARATIVE,
    DEFAULT_MAX_PROGRAM_BYTES,
    EXTERNAL_SCRIPT,
    RESPONSE,
    CompileError,
    CompiledProgram,
    ExecLimits,
    ProgramSource,
    compile_program,
    execute,
    program_from_json,
    serialize_program,
)
from .prompt_model import Exemplar, serialize_response
from .tokens import estimate_tokens

_ROLES = ("system", "user", "assistant")
_FENCE_RE = re.compile(r"```[a-zA-Z0-9_-]*\n(.*?)```", re.DOTALL)
_STRUCTURAL_COMMENT_RE = re.compile(r"^\s*#\s*STRUCTURAL:\s*(.+)\s*$", re.MULTILINE)


class BackendError(RuntimeError):
    """Transport-level failure talking to an LLM backend."""


class ProgramParseError(ValueError):
    """The completion did not contain a usable program; costs one attempt."""


@dataclass(frozen=True)
class ChatMessage:
    role: str
    content: str

    def __post_init__(self) -> None:
        if self.role not in _ROLES:
            raise ValueError(f"unknown chat role: {self.role!r}")
        if not self.content:
            raise ValueError("chat message content must be non-empty")


@dataclass(frozen=True)
class CompletionResult:
    text: str
    input_tokens: int
    output_tokens: int

    def __post_init__(self) -> None:
        if self.input_tokens < 0 or self.output_tokens < 0:
            raise ValueError("token counts must be non-negative")


class LlmBackend(Protocol):
    def complete(self, messages: list[ChatMessage]) -> CompletionResult: ...


class ScriptedBackend:
    """Deterministic test double that replays canned completions in order.

    Token counts come from the heuristic byte counter. A call past the last
    reply raises BackendError, mimicking a transport failure; set ``loop``
    to recycle the reply list instead.
    """

    def __init__(self, replies: Sequence[str], loop: bool = False) -> None:
        if not replies:
            raise ValueError("scripted backend needs at least one reply")
        self._replies = list(replies)
        self._cursor = 0
        self._loop = loop
        self.calls: list[list[ChatMessage]] = []

    def complete(self, messages: list[ChatMessage]) -> CompletionResult:
        self.calls.append(list(messages))
        if self._cursor >= len(self._replies):
            if not self._loop:
                raise BackendError(
                    f"scripted backend exhausted after {len(self._replies)} replies"
                )
            self._cursor = 0
        text = self._replies[self._cursor]
        self._cursor += 1
        prompt_text = "".join(m.content for m in messages)
        return CompletionResult(
            text=text,
            input_tokens=estimate_tokens(prompt_text),
            output_tokens=estimate_tokens(text),
        )


class HttpChatBackend:
    """Client for the chat-completion wire protocol.

    POST {endpoint}/chat with {"messages": [{"role", "content"}, ...]} and
    expect {"text": ..., "usage": {"input_tokens": ..., "output_tokens": ...}}.
    """

    def __init__(
        self,
        endpoint: str,
        model: str = "",
        timeout: float = 120.0,
        transport: httpx.BaseTransport | None = None,
    ) -> None:
        self.endpoint = endpoint.rstrip("/")
        self.model = model
        self._client = httpx.Client(timeout=timeout, transport=transport)

    def complete(self, messages: list[ChatMessage]) -> CompletionResult:
        body = {"messages": [{"role": m.role, "content": m.content} for m in messages]}
        if self.model:
            body["model"] = self.model
        try:
            resp = self._client.post(f"{self.endpoint}/chat", json=body)
            resp.raise_for_status()
            payload = resp.json()
        except (httpx.HTTPError, ValueError) as exc:
            raise BackendError(f"chat request failed: {exc}") from exc
        if not isinstance(payload, dict) or not isinstance(payload.get("text"), str):
            raise BackendError("chat response malformed: missing text")
        usage = payload.get("usage") or {}
        return CompletionResult(
            text=payload["text"],
            input_tokens=int(usage.get("input_tokens", 0)),
            output_tokens=int(usage.get("output_tokens", 0)),
        )


@dataclass(frozen=True)
class ValidationReport:
    """One bit per compared exemplar plus the validator's combined reason."""

    valid: tuple[int, ...]
    reason: str

    @property
    def ones(self) -> int:
        return sum(self.valid)


@dataclass(frozen=True)
class CodegenConfig:
    nu: int = 4
    gamma_percent: float = 50.0
    rho: int = 30
    mode: str = DECLARATIVE
    byte_equal_shortcut: bool = True
    max_program_bytes: int = DEFAULT_MAX_PROGRAM_BYTES

    def __post_init__(self) -> None:
        if self.nu < 2:
            raise ValueError("nu must be at least 2")
        if not 0.0 < self.gamma_percent <= 100.0:
            raise ValueError("gamma_percent must be in (0, 100]")
        if self.rho < 1:
            raise ValueError("rho must be at least 1")
        if self.mode not in (DECLARATIVE, EXTERNAL_SCRIPT):
            raise ValueError(f"unknown codegen mode: {self.mode!r}")

    @property
    def max_cluster_exemplars(self) -> int:
        return 3 * self.nu


def meets_gamma(ones: int, total: int, gamma_percent: float) -> bool:
    """Acceptance gate: the match percentage must reach gamma (inclusive)."""
    if total <= 0:
        return False
    return ones * 100.0 >= gamma_percent * total - 1e-9


def _load_template(name: str) -> str:
    return resources.files("gencache").joinpath(f"prompts/{name}").read_text(encoding="utf-8")


_REFLECTION_TEMPLATE = (
    "A previous attempt at this program failed validation. The validator reported:\n"
    "{feedback}\n"
    "Correct the program so the reported mismatches cannot happen again, and keep\n"
    "following the guidelines above."
)


def build_codegen_prompt(
    exemplars: Sequence[Exemplar],
    mode: str = DECLARATIVE,
    prior_feedback: str | None = None,
    minimum: int | None = None,
) -> list[ChatMessage]:
    """Assemble the synthesis prompt: task text, all exemplars, reflection.

    ``minimum`` is the caller's exemplar floor (nu); fewer exemplars than
    that are rejected.
    """
    if minimum is not None and len(exemplars) < minimum:
        raise ValueError(f"need at least {minimum} exemplars, got {len(exemplars)}")
    if not exemplars:
        raise ValueError("need at least one exemplar")
    template = _load_template(
        "codegen_declarative.txt" if mode == DECLARATIVE else "codegen_script.txt"
    )
    blocks = []
    for i, ex in enumerate(exemplars, 1):
        blocks.append(
            f"Example {i}\nPrompt:\n{ex.prompt.full_text}\nResponse:\n"
            f"{serialize_response(ex.response)}\n"
        )
    parts = [template, "\n".join(blocks)]
    if prior_feedback:
        parts.append(_REFLECTION_TEMPLATE.format(feedback=prior_feedback))
    return [
        ChatMessage(role="system", content="\n\n".join(parts)),
        ChatMessage(role="user", content="Generate the program now."),
    ]


def _extract_json_document(text: str) -> str | None:
    for block in _FENCE_RE.findall(text):
        candidate = block.strip()
        try:
            if isinstance(json.loads(candidate), dict):
                return candidate
        except ValueError:
            continue
    decoder = json.JSONDecoder()
    idx = text.find("{")
    while idx != -1:
        try:
            obj, end = decoder.raw_decode(text, idx)
        except ValueError:
            idx = text.find("{", idx + 1)
            continue
        if isinstance(obj, dict):
            return text[idx:end]
        idx = text.find("{", idx + 1)
    return None


def _strip_fences(text: str) -> str:
    blocks = _FENCE_RE.findall(text)
    if blocks:
        return blocks[0].strip()
    return text.strip()


def parse_program_source(llm_text: str, mode: str) -> ProgramSource:
    """Turn a completion into a ProgramSource or raise ProgramParseError."""
    if mode == DECLARATIVE:
        doc_text = _extract_json_document(llm_text)
        if doc_text is None:
            raise ProgramParseError("completion contains no JSON program document")
        try:
            source = program_from_json(doc_text)
        except ValueError as exc:
            raise ProgramParseError(f"bad program document: {exc}") from exc
        if source.kind != DECLARATIVE:
            raise ProgramParseError("expected a declarative program document")
        return source
    if mode == EXTERNAL_SCRIPT:
        script = _strip_fences(llm_text)
        if not script:
            raise ProgramParseError("completion contains no script text")
        match = _STRUCTURAL_COMMENT_RE.search(script)
        if match is None:
            raise ProgramParseError("script is missing the '# STRUCTURAL: <regex>' comment")
        return ProgramSource(
            kind=EXTERNAL_SCRIPT,
            structural_regex=match.group(1).strip(),
            script_text=script,
        )
    raise ProgramParseError(f"unknown codegen mode: {mode!r}")


def validate_program(
    program: CompiledProgram,
    exemplars: Sequence[Exemplar],
    validator: LlmBackend,
    byte_equal_shortcut: bool = True,
    exec_limits: ExecLimits | None = None,
) -> ValidationReport:
    """Execute the program on every exemplar and score the outputs.

    Null or error executions are forced to 0 locally; they cannot match, so
    the validator is never consulted about them. When every output is
    byte-equal to its exemplar response the all-ones report is returned
    without an LLM call (disable via ``byte_equal_shortcut`` for runs that
    must exercise the validator).
    """
    if not exemplars:
        raise ValueError("validation needs at least one exemplar")
    bits: list[int | None] = [None] * len(exemplars)
    pairs: list[tuple[int, str, str]] = []
    failures: list[str] = []
    for i, ex in enumerate(exemplars):
        result = execute(program, ex.prompt.full_text, exec_limits)
        expected = serialize_response(ex.response)
        if result.kind != RESPONSE or result.response is None:
            bits[i] = 0
            failures.append(result.reason or result.kind)
            continue
        pairs.append((i, serialize_response(result.response), expected))

    if not pairs:
        return ValidationReport(
            valid=tuple(0 for _ in exemplars),
            reason=f"every execution failed ({failures[0]})",
        )

    if byte_equal_shortcut and not failures and all(out == exp for _, out, exp in pairs):
        return ValidationReport(
            valid=tuple(1 for _ in exemplars), reason="all outputs matched exactly"
        )

    payload = json.dumps(
        [{"program_output": out, "expected": exp} for _, out, exp in pairs],
        indent=2,
        ensure_ascii=False,
    )
    messages = [
        ChatMessage(role="system", content=_load_template("validator.txt")),
        ChatMessage(role="user", content=payload),
    ]
    completion = validator.complete(messages)
    verdict = _extract_json_document(completion.text)
    if verdict is None:
        raise ProgramParseError("validator reply contains no JSON document")
    try:
        parsed = json.loads(verdict)
        flags = [int(v) for v in parsed["valid"]]
        reason = str(parsed.get("reason", ""))
    except (ValueError, TypeError, KeyError) as exc:
        raise ProgramParseError(f"validator reply malformed: {exc}") from exc
    if len(flags) != len(pairs):
        raise ProgramParseError(
            f"validator returned {len(flags)} flags for {len(pairs)} comparisons"
        )
    for (i, _, _), flag in zip(pairs, flags):
        bits[i] = 1 if flag else 0
    if failures:
        reason = f"{len(failures)} executions failed ({failures[0]}); {reason}"
    return ValidationReport(valid=tuple(b if b is not None else 0 for b in bits), reason=reason)


@dataclass(frozen=True)
class TokenUsage:
    input_tokens: int = 0
    output_tokens: int = 0


@dataclass(frozen=True)
class GeneratedCache:
    program: CompiledProgram
    attempts: int
    tokens: TokenUsage
    report: ValidationReport


@dataclass(frozen=True)
class CodegenStats:
    """Accounting for one generate_cache invocation, accepted or not."""

    attempts: int = 0
    codegen_calls: int = 0
    validator_calls: int = 0
    input_tokens: int = 0
    output_tokens: int = 0


class _Metered:
    def __init__(self, inner: LlmBackend) -> None:
        self.inner = inner
        self.calls = 0
        self.input_tokens = 0
        self.output_tokens = 0

    def complete(self, messages: list[ChatMessage]) -> CompletionResult:
        self.calls += 1
        result = self.inner.complete(messages)
        self.input_tokens += result.input_tokens
        self.output_tokens += result.output_tokens
        return result


def generate_cache_with_stats(
    cluster: Cluster,
    codegen: LlmBackend,
    validator: LlmBackend,
    cfg: CodegenConfig,
    exec_limits: ExecLimits | None = None,
) -> tuple[GeneratedCache | None, CodegenStats]:
    """Generate-validate-reflect loop for one cluster.

    Every loop iteration consumes one unit of the cluster's lifetime retry
    budget (rho), including iterations that die in parsing or transport.
    Acceptance requires the validation match percentage to reach gamma.
    Returns (None, stats) when the budget runs out; a cluster already at the
    budget is a no-op.
    """
    if cluster.has_cache:
        raise ValueError(f"cluster {cluster.id} already has a cache")
    if len(cluster.exemplars) < cfg.nu:
        raise ValueError(
            f"cluster {cluster.id} has {len(cluster.exemplars)} exemplars; needs nu={cfg.nu}"
        )
    exemplars = list(cluster.exemplars)
    metered_codegen = _Metered(codegen)
    metered_validator = _Metered(validator)
    attempts = 0
    feedback: str | None = None
    accepted: GeneratedCache | None = None
    while cluster.retries_used < cfg.rho:
        cluster.retries_used += 1
        attempts += 1
        try:
            messages = build_codegen_prompt(
                exemplars, cfg.mode, prior_feedback=feedback, minimum=cfg.nu
            )
            completion = metered_codegen.complete(messages)
            source = parse_program_source(completion.text, cfg.mode)
            program = compile_program(source, cfg.max_program_bytes)
            report = validate_program(
                program,
                exemplars,
                metered_validator,
                byte_equal_shortcut=cfg.byte_equal_shortcut,
                exec_limits=exec_limits,
            )
        except (BackendError, ProgramParseError, CompileError) as exc:
            feedback = str(exc)
            continue
        if meets_gamma(report.ones, len(report.valid), cfg.gamma_percent):
            accepted = GeneratedCache(
                program=program,
                attempts=attempts,
                tokens=TokenUsage(
                    metered_codegen.input_tokens + metered_validator.input_tokens,
                    metered_codegen.output_tokens + metered_validator.output_tokens,
                ),
                report=report,
            )
            break
        feedback = report.reason or "validation failed"
    stats = CodegenStats(
        attempts=attempts,
        codegen_calls=metered_codegen.calls,
        validator_calls=metered_validator.calls,
        input_tokens=metered_codegen.input_tokens + metered_validator.input_tokens,
        output_tokens=metered_codegen.output_tokens + metered_validator.output_tokens,
    )
    return accepted, stats


def generate_cache(
    cluster: Cluster,
    codegen: LlmBackend,
    validator: LlmBackend,
    cfg: CodegenConfig,
    exec_limits: ExecLimits | None = None,
) -> GeneratedCache | None:
    result, _ = generate_cache_with_stats(cluster, codegen, validator, cfg, exec_limits)
    return result


def scripted_backend(replies: Sequence[str]) -> ScriptedBackend:
    """Convenience constructor mirroring the ScriptedBackend class."""
    return ScriptedBackend(replies)


__all__ = [
    "BackendError",
    "ChatMessage",
    "CodegenConfig",
    "CodegenStats",
    "CompletionResult",
    "GeneratedCache",
    "HttpChatBackend",
    "LlmBackend",
    "ProgramParseError",
    "ScriptedBackend",
    "TokenUsage",
    "ValidationReport",
    "build_codegen_prompt",
    "generate_cache",
    "generate_cache_with_stats",
    "meets_gamma",
    "parse_program_source",
    "scripted_backend",
    "serialize_program",
    "validate_program",
]
