"""Deterministic stand-ins for the three LLM roles the benchmark touches.

* CompletionDouble answers miss-path requests with the generator's ground
  truth, playing the part of a correct upstream model.
* The codegen double is a looping ScriptedBackend over a fixed, documented
  reply sequence per dataset family. It is a fixture, not an oracle: the
  program texts are decided ahead of time and never peek at ground truth.
  The synonym family cycles two variants of its alternation rule, modeling
  the run-to-run variability of a real model; the structural family
  deliberately receives the param-only rule, reproducing the
  template-anchored generalization failure.
* LocalValidatorBackend replays the validator role by parsing the comparison
  pairs out of the validation prompt and scoring them with exact or
  normalized equality.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass

from ..codegen import BackendError, ChatMessage, CompletionResult, LlmBackend, ScriptedBackend
from ..programs import DECLARATIVE, PatternRule, ProgramSource, ResponseTemplate, serialize_program
from ..prompt_model import ResponseDoc, parse_response, serialize_response
from ..tokens import estimate_tokens
from .datasets import (
    FAMILY_PARAM_ONLY,
    FAMILY_STRUCTURAL,
    FAMILY_SYNONYM,
    INSTRUCTION_MARKER,
    SyntheticInstruction,
)

_TRAILING_ZERO_DECIMAL_RE = re.compile(r"^(\d+)\.0+$")
_WHITESPACE_RE = re.compile(r"\s+")


def normalize_value(value: str) -> str:
    """Lowercase, trim, collapse whitespace, drop all-zero decimal tails."""
    out = _WHITESPACE_RE.sub(" ", value.strip().lower())
    match = _TRAILING_ZERO_DECIMAL_RE.match(out)
    return match.group(1) if match else out


def _comparable(text: str):
    doc = parse_response(text)
    if doc.kind == "structured":
        return ("structured", tuple(sorted((k, normalize_value(v)) for k, v in doc.entries)))
    return ("plain", normalize_value(doc.text))


def ground_truth_response(instruction: SyntheticInstruction) -> str:
    """The wire response a correct model would return for an instruction."""
    doc = ResponseDoc.structured(
        [
            ("action", "search"),
            ("item", instruction.ground_truth.item),
            ("price", instruction.ground_truth.price),
        ]
    )
    return serialize_response(doc)


def classify_response(response_text: str, instruction: SyntheticInstruction) -> bool:
    """Oracle classification of a served response: positive iff the item and
    the price both match the ground truth after normalization."""
    doc = parse_response(response_text)
    if doc.kind != "structured":
        return False
    item = doc.get("item")
    price = doc.get("price")
    if item is None or price is None:
        return False
    return normalize_value(item) == normalize_value(instruction.ground_truth.item) and (
        normalize_value(price) == normalize_value(instruction.ground_truth.price)
    )


class CompletionDouble:
    """Miss-path model double: looks the instruction up by its text and
    returns the ground-truth response."""

    def __init__(self, instructions: list[SyntheticInstruction]) -> None:
        self._by_text = {i.text: i for i in instructions}
        self.calls = 0

    def complete(self, messages: list[ChatMessage]) -> CompletionResult:
        self.calls += 1
        content = messages[-1].content
        marker = content.rfind(INSTRUCTION_MARKER)
        if marker < 0:
            raise BackendError("prompt carries no instruction marker")
        instruction = self._by_text.get(content[marker + len(INSTRUCTION_MARKER) :])
        if instruction is None:
            raise BackendError("unknown instruction")
        text = ground_truth_response(instruction)
        return CompletionResult(
            text=text,
            input_tokens=estimate_tokens(content),
            output_tokens=estimate_tokens(text),
        )


_RESPONSE_TEMPLATE = ResponseTemplate(
    kind="structured",
    entries=(("action", "search"), ("item", "{item}"), ("price", "{price}")),
)

_STRUCTURAL_GATE = "under the price range of"

_PARAM_ONLY_RULE = PatternRule(
    match_regex=(
        r"i want to buy (?P<item>.+?), under the price range of (?P<price>\d+) dollars"
    ),
    template=_RESPONSE_TEMPLATE,
)

# The synonym-family rule folds the documented verb set plus the "need"
# continuation seen in split-sentence exemplars into one alternation. On a
# split instruction the leftmost verb it finds is the second sentence's
# "need", so the captured item is wrong: the classic misfire.
_SYNONYM_RULE = PatternRule(
    match_regex=(
        r"(?:please )?(?:i want to buy|i am looking for|find me|purchase|buy|get|need)"
        r"\s+(?:an? )?(?P<item>.+?), under the price range of (?P<price>\d+) dollars"
    ),
    template=_RESPONSE_TEMPLATE,
)

# The conservative variant sticks to the documented verb set, so a split
# instruction simply fails to match and falls back to the model.
_SYNONYM_RULE_STRICT = PatternRule(
    match_regex=(
        r"(?:please )?(?:i want to buy|i am looking for|find me|purchase|buy|get)"
        r"\s+(?:an? )?(?P<item>.+?), under the price range of (?P<price>\d+) dollars"
    ),
    template=_RESPONSE_TEMPLATE,
)


def _program(rule: PatternRule) -> ProgramSource:
    return ProgramSource(kind=DECLARATIVE, structural_regex=_STRUCTURAL_GATE, rules=(rule,))


def family_programs(family: str) -> tuple[ProgramSource, ...]:
    """The documented reply sequence the codegen double cycles through.

    Synthesis output varies from call to call with a real model; the synonym
    sequence scripts that variability as two emissions of the misfiring
    alternation followed by one of the conservative variant.
    """
    if family == FAMILY_PARAM_ONLY:
        return (_program(_PARAM_ONLY_RULE),)
    if family == FAMILY_SYNONYM:
        return (
            _program(_SYNONYM_RULE),
            _program(_SYNONYM_RULE),
            _program(_SYNONYM_RULE_STRICT),
        )
    if family == FAMILY_STRUCTURAL:
        # Deliberately the param-only rule: template-anchored regexes do not
        # generalize across structural variants.
        return (_program(_PARAM_ONLY_RULE),)
    raise ValueError(f"unknown family: {family!r}")


def family_program(family: str) -> ProgramSource:
    """The primary documented program for a family."""
    return family_programs(family)[0]


def make_codegen_double(family: str) -> ScriptedBackend:
    """Looping scripted backend over the family's documented reply sequence."""
    return ScriptedBackend(
        [serialize_program(source) for source in family_programs(family)], loop=True
    )


class LocalValidatorBackend:
    """Validator double: exact or normalized comparison of each pair.

    Parses the JSON pair array embedded in the validation prompt and replies
    in the validator wire shape. Deterministic by construction; semantic
    judging is reserved for live backends.
    """

    def __init__(self) -> None:
        self.calls = 0

    def complete(self, messages: list[ChatMessage]) -> CompletionResult:
        self.calls += 1
        payload = messages[-1].content
        start = payload.find("[")
        if start < 0:
            raise BackendError("validation prompt carries no comparison array")
        try:
            pairs = json.loads(payload[start:])
        except ValueError as exc:
            raise BackendError(f"validation prompt malformed: {exc}") from exc
        bits = []
        fragments: set[str] = set()
        for pair in pairs:
            output = str(pair.get("program_output", ""))
            expected = str(pair.get("expected", ""))
            if output == expected or _comparable(output) == _comparable(expected):
                bits.append(1)
                continue
            bits.append(0)
            fragments.add(_mismatch_fragment(output, expected))
        reason = (
            "all outputs matched"
            if all(bits)
            else "; ".join(sorted(fragments)) or "outputs did not match"
        )
        text = json.dumps({"valid": bits, "reason": reason})
        prompt_text = "".join(m.content for m in messages)
        return CompletionResult(
            text=text,
            input_tokens=estimate_tokens(prompt_text),
            output_tokens=estimate_tokens(text),
        )


def _mismatch_fragment(output: str, expected: str) -> str:
    out_doc = parse_response(output)
    exp_doc = parse_response(expected)
    if out_doc.kind != exp_doc.kind:
        return "response shapes differ"
    if out_doc.kind == "plain":
        return "plain text differs from the expected response"
    out_keys = [k for k, _ in out_doc.entries]
    exp_keys = [k for k, _ in exp_doc.entries]
    if out_keys != exp_keys:
        return "keys differ from the expected response"
    wrong = sorted(
        k
        for k, v in out_doc.entries
        if normalize_value(v) != normalize_value(exp_doc.get(k, ""))
    )
    return f"values differ for: {', '.join(wrong)}"


@dataclass
class BenchDoubles:
    completion: CompletionDouble
    codegen: LlmBackend
    validator: LlmBackend


def make_default_doubles(instructions: list[SyntheticInstruction]) -> BenchDoubles:
    family = instructions[0].family if instructions else FAMILY_PARAM_ONLY
    return BenchDoubles(
        completion=CompletionDouble(instructions),
        codegen=make_codegen_double(family),
        validator=LocalValidatorBackend(),
    )
