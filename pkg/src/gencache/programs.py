"""The cached artifact: compile, gate, and execute extraction programs.

Two program kinds share one execution surface. Declarative programs are a
data-only pattern DSL (ordered regex rules with response templates) that
needs no sandbox. External-script programs hold verbatim script text run by
a configurable interpreter command with the prompt as the single argument;
stdout is the response channel, with "None" / "None: <reason>" reserved for
declining and errors.
"""

from __future__ import annotations

import json
import os
import re
import shlex
import signal
import subprocess
import tempfile
import threading
from dataclasses import dataclass

from .prompt_model import PLAIN, STRUCTURED, ResponseDoc, parse_response

DECLARATIVE = "declarative"
EXTERNAL_SCRIPT = "external-script"

RESPONSE = "response"
NULL = "null"
ERROR = "error"

DEFAULT_MAX_PROGRAM_BYTES = 16384
DEFAULT_RUNTIME_COMMAND = "python3 {script}"

# Rules and the structural gate both run with dot-matches-newline (prompts
# span lines) and case-insensitive matching.
_REGEX_FLAGS = re.DOTALL | re.IGNORECASE

_PLACEHOLDER_RE = re.compile(r"\{([A-Za-z_][A-Za-z0-9_]*)\}")
# `(?<name>...)` is accepted alongside Python's `(?P<name>...)`; lookbehinds
# `(?<=` and `(?<!` must not be rewritten.
_GROUP_SYNTAX_RE = re.compile(r"\(\?<([A-Za-z_][A-Za-z0-9_]*)>")


class CompileError(ValueError):
    """A program source failed validation; the message carries the location."""


@dataclass(frozen=True)
class ResponseTemplate:
    """Shape of the response a rule produces; value templates may hold
    {group_name} placeholders referencing the rule's capture groups."""

    kind: str
    entries: tuple[tuple[str, str], ...] = ()
    text: str = ""

    def __post_init__(self) -> None:
        if self.kind not in (STRUCTURED, PLAIN):
            raise ValueError(f"unknown template kind: {self.kind!r}")

    def templates(self) -> list[str]:
        if self.kind == STRUCTURED:
            return [v for _, v in self.entries]
        return [self.text]


@dataclass(frozen=True)
class PatternRule:
    match_regex: str
    template: ResponseTemplate


@dataclass(frozen=True)
class ProgramSource:
    kind: str
    structural_regex: str
    rules: tuple[PatternRule, ...] = ()
    script_text: str = ""
    runtime_command: str = DEFAULT_RUNTIME_COMMAND
    version: int = 1


@dataclass(frozen=True)
class CompiledProgram:
    source: ProgramSource
    structural: re.Pattern
    rules: tuple[tuple[re.Pattern, ResponseTemplate], ...]
    size_bytes: int


@dataclass(frozen=True)
class ExecResult:
    """Exactly one of: a response, a null (program declined), or an error."""

    kind: str
    response: ResponseDoc | None = None
    reason: str = ""

    @classmethod
    def ok(cls, doc: ResponseDoc) -> "ExecResult":
        return cls(kind=RESPONSE, response=doc)

    @classmethod
    def null(cls, reason: str) -> "ExecResult":
        return cls(kind=NULL, reason=reason)

    @classmethod
    def error(cls, reason: str) -> "ExecResult":
        return cls(kind=ERROR, reason=reason)


@dataclass(frozen=True)
class ExecLimits:
    timeout_ms: int = 2000
    max_output_bytes: int = 64 * 1024


def _pythonize_groups(pattern: str) -> str:
    return _GROUP_SYNTAX_RE.sub(r"(?P<\1>", pattern)


def _mask_braces(template: str) -> str:
    return template.replace("{{", "\x00").replace("}}", "\x01")


def _template_placeholders(template: str) -> set[str]:
    return set(_PLACEHOLDER_RE.findall(_mask_braces(template)))


def _render(template: str, groups: dict[str, str | None]) -> str:
    masked = _mask_braces(template)
    rendered = _PLACEHOLDER_RE.sub(lambda m: groups.get(m.group(1)) or "", masked)
    return rendered.replace("\x00", "{").replace("\x01", "}")


def compile_program(
    source: ProgramSource, max_size_bytes: int = DEFAULT_MAX_PROGRAM_BYTES
) -> CompiledProgram:
    """Compile every regex, cross-check placeholders, enforce the size cap."""
    try:
        structural = re.compile(_pythonize_groups(source.structural_regex), _REGEX_FLAGS)
    except re.error as exc:
        raise CompileError(f"structural_regex does not compile: {exc}") from exc

    rules: list[tuple[re.Pattern, ResponseTemplate]] = []
    if source.kind == DECLARATIVE:
        if not source.rules:
            raise CompileError("declarative program needs at least one rule")
        for idx, rule in enumerate(source.rules):
            try:
                pattern = re.compile(_pythonize_groups(rule.match_regex), _REGEX_FLAGS)
            except re.error as exc:
                raise CompileError(f"rule {idx}: match_regex does not compile: {exc}") from exc
            known_groups = set(pattern.groupindex)
            for template in rule.template.templates():
                for name in _template_placeholders(template):
                    if name not in known_groups:
                        raise CompileError(
                            f"rule {idx}: placeholder {{{name}}} has no capture group"
                        )
            rules.append((pattern, rule.template))
    elif source.kind == EXTERNAL_SCRIPT:
        if not source.script_text.strip():
            raise CompileError("external-script program needs script text")
        if "{script}" not in source.runtime_command:
            raise CompileError("runtime_command must reference {script}")
    else:
        raise CompileError(f"unknown program kind: {source.kind!r}")

    raw = serialize_program(source)
    size_bytes = len(raw.encode("utf-8"))
    if size_bytes > max_size_bytes:
        raise CompileError(f"program serializes to {size_bytes} bytes; limit is {max_size_bytes}")
    return CompiledProgram(source=source, structural=structural, rules=tuple(rules), size_bytes=size_bytes)


def structural_match(program: CompiledProgram, prompt_text: str) -> bool:
    """Gate: does the prompt conform to the cluster's structural pattern?"""
    return program.structural.search(prompt_text) is not None


def execute(
    program: CompiledProgram,
    prompt_text: str,
    limits: ExecLimits | None = None,
    gate: threading.Semaphore | None = None,
) -> ExecResult:
    """Run the program on a prompt. Never raises past this boundary."""
    limits = limits or ExecLimits()
    try:
        if program.source.kind == DECLARATIVE:
            return _execute_declarative(program, prompt_text)
        return _execute_script(program, prompt_text, limits, gate)
    except Exception as exc:  # totality: any internal failure is an error outcome
        return ExecResult.error(f"internal execution failure: {exc}")


def _execute_declarative(program: CompiledProgram, prompt_text: str) -> ExecResult:
    for pattern, template in program.rules:
        match = pattern.search(prompt_text)
        if match is None:
            continue
        groups = match.groupdict()
        if template.kind == STRUCTURED:
            entries = [(key, _render(value, groups)) for key, value in template.entries]
            return ExecResult.ok(ResponseDoc.structured(entries))
        return ExecResult.ok(ResponseDoc.plain(_render(template.text, groups)))
    return ExecResult.null("no rule matched")


def _execute_script(
    program: CompiledProgram,
    prompt_text: str,
    limits: ExecLimits,
    gate: threading.Semaphore | None,
) -> ExecResult:
    if gate is not None:
        gate.acquire()
    try:
        with tempfile.TemporaryDirectory(prefix="gencache-exec-") as tmp:
            script_path = os.path.join(tmp, "program.py")
            with open(script_path, "w", encoding="utf-8") as handle:
                handle.write(program.source.script_text)
            try:
                argv = shlex.split(program.source.runtime_command.format(script=script_path))
            except (ValueError, KeyError, IndexError) as exc:
                return ExecResult.error(f"bad runtime command: {exc}")
            argv.append(prompt_text)
            try:
                proc = subprocess.Popen(
                    argv,
                    stdout=subprocess.PIPE,
                    stderr=subprocess.DEVNULL,
                    stdin=subprocess.DEVNULL,
                    cwd=tmp,
                    start_new_session=True,
                )
            except OSError as exc:
                return ExecResult.error(f"spawn failed: {exc}")
            try:
                out, _ = proc.communicate(timeout=limits.timeout_ms / 1000.0)
            except subprocess.TimeoutExpired:
                _reap(proc)
                return ExecResult.error("timeout")
            if len(out) > limits.max_output_bytes:
                return ExecResult.error("output too large")
            text = out.decode("utf-8", errors="replace").strip()
            if not text and proc.returncode != 0:
                return ExecResult.error(f"exit status {proc.returncode}")
            if text == "None":
                return ExecResult.null("program returned None")
            if text.startswith("None:"):
                return ExecResult.error(text[len("None:"):].strip() or "program reported an error")
            return ExecResult.ok(parse_response(text))
    finally:
        if gate is not None:
            gate.release()


def _reap(proc: subprocess.Popen) -> None:
    # The child runs in its own session, so killing the process group also
    # reaps anything it spawned.
    try:
        os.killpg(proc.pid, signal.SIGKILL)
    except (AttributeError, ProcessLookupError, PermissionError):
        proc.kill()
    try:
        proc.communicate(timeout=5)
    except Exception:
        pass


def sanity_check(result: ExecResult, expected_arity: int) -> bool:
    """Accept only responses with the expected shape and no blank values.

    ``expected_arity`` is the structured entry count the caller expects; 0
    means a plain-text response is expected.
    """
    if result.kind != RESPONSE or result.response is None:
        return False
    doc = result.response
    if doc.kind == PLAIN:
        return expected_arity == 0 and bool(doc.text.strip())
    if len(doc.entries) != expected_arity:
        return False
    return all(value.strip() for _, value in doc.entries)


# -- serialization ---------------------------------------------------------


def serialize_program(source: ProgramSource) -> str:
    """Versioned JSON document; also the canonical form for size accounting."""
    doc: dict = {
        "version": source.version,
        "kind": source.kind,
        "structural_regex": source.structural_regex,
    }
    if source.kind == DECLARATIVE:
        doc["rules"] = [
            {
                "match": rule.match_regex,
                "response": (
                    {"kind": STRUCTURED, "entries": [[k, v] for k, v in rule.template.entries]}
                    if rule.template.kind == STRUCTURED
                    else {"kind": PLAIN, "text": rule.template.text}
                ),
            }
            for rule in source.rules
        ]
    else:
        doc["script"] = source.script_text
        doc["command"] = source.runtime_command
    return json.dumps(doc, indent=2, ensure_ascii=False)


def program_from_json(text: str) -> ProgramSource:
    """Parse the versioned JSON document; raises ValueError on bad shapes."""
    data = json.loads(text)
    if not isinstance(data, dict):
        raise ValueError("program document must be a JSON object")
    kind = data.get("kind")
    structural = data.get("structural_regex")
    if not isinstance(structural, str) or not structural:
        raise ValueError("program document needs a structural_regex string")
    version = int(data.get("version", 1))
    if kind == DECLARATIVE:
        raw_rules = data.get("rules")
        if not isinstance(raw_rules, list) or not raw_rules:
            raise ValueError("declarative program document needs a rules list")
        rules = []
        for idx, raw in enumerate(raw_rules):
            if not isinstance(raw, dict) or not isinstance(raw.get("match"), str):
                raise ValueError(f"rule {idx} needs a match regex")
            response = raw.get("response")
            if not isinstance(response, dict):
                raise ValueError(f"rule {idx} needs a response template")
            if response.get("kind") == STRUCTURED:
                entries = response.get("entries")
                if not isinstance(entries, list):
                    raise ValueError(f"rule {idx} structured response needs entries")
                template = ResponseTemplate(
                    kind=STRUCTURED,
                    entries=tuple((str(k), str(v)) for k, v in entries),
                )
            elif response.get("kind") == PLAIN:
                template = ResponseTemplate(kind=PLAIN, text=str(response.get("text", "")))
            else:
                raise ValueError(f"rule {idx} response kind must be structured or plain")
            rules.append(PatternRule(match_regex=raw["match"], template=template))
        return ProgramSource(
            kind=DECLARATIVE, structural_regex=structural, rules=tuple(rules), version=version
        )
    if kind == EXTERNAL_SCRIPT:
        script = data.get("script")
        if not isinstance(script, str) or not script.strip():
            raise ValueError("external-script program document needs script text")
        return ProgramSource(
            kind=EXTERNAL_SCRIPT,
            structural_regex=structural,
            script_text=script,
            runtime_command=str(data.get("command", DEFAULT_RUNTIME_COMMAND)),
            version=version,
        )
    raise ValueError(f"unknown program kind: {kind!r}")
