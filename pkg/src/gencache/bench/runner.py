"""The evaluation loop: four cache strategies over one instruction stream.

exact       verbatim prompt matching via content hashing.
semantic    embedding similarity lookup returning the stored response
            verbatim when the best cosine exceeds 0.95.
gencache    the full runtime with scripted synthesis doubles.
gencache-feedback
            additionally classifies every hit with the ground-truth oracle
            and reports negative hits back, deleting the offending program.

Every hit is oracle-classified as positive or negative. Reports are
deterministic: same seed and flags, byte-identical bytes.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from ..clustering import ClusterThresholds
from ..codegen import CodegenConfig
from ..embeddings import HashedEmbedder
from ..prompt_model import PromptRecord
from ..runtime import RATIO_SENTINEL, CacheRuntime, Metrics, cost_ratio_series
from ..tokens import estimate_tokens
from .datasets import SyntheticInstruction, build_full_prompt, generator_for
from .doubles import BenchDoubles, classify_response, ground_truth_response, make_default_doubles

STRATEGIES = ("exact", "semantic", "gencache", "gencache-feedback")

SEMANTIC_THRESHOLD = 0.95

_NOTES = (
    "desk-scale run: seeded synthetic instructions with a ground-truth "
    "oracle; deterministic scripted doubles stand in for live models"
)


@dataclass
class BenchReport:
    strategy: str
    dataset: str
    n: int
    seed: int
    hit_rate: float
    positive_hit_rate: float
    negative_hit_rate: float
    hits: int
    misses: int
    positive_hits: int
    negative_hits: int
    codegen_calls: int
    validator_calls: int
    tokens_spent_input: int
    tokens_spent_output: int
    tokens_saved_input: int
    tokens_saved_output: int
    ratio_series: list[float | None]
    window: int
    notes: str = _NOTES

    def to_json(self) -> str:
        doc = {
            "notes": self.notes,
            "strategy": self.strategy,
            "dataset": self.dataset,
            "n": self.n,
            "seed": self.seed,
            "hit_rate": round(self.hit_rate, 4),
            "positive_hit_rate": round(self.positive_hit_rate, 4),
            "negative_hit_rate": round(self.negative_hit_rate, 4),
            "hits": self.hits,
            "misses": self.misses,
            "positive_hits": self.positive_hits,
            "negative_hits": self.negative_hits,
            "codegen_calls": self.codegen_calls,
            "validator_calls": self.validator_calls,
            "tokens_spent_input": self.tokens_spent_input,
            "tokens_spent_output": self.tokens_spent_output,
            "tokens_saved_input": self.tokens_saved_input,
            "tokens_saved_output": self.tokens_saved_output,
            "window": self.window,
            "ratio_series": [None if r == RATIO_SENTINEL else round(r, 6) for r in self.ratio_series],
        }
        return json.dumps(doc, indent=2, ensure_ascii=False) + "\n"


@dataclass
class _Tally:
    hits: int = 0
    positive: int = 0
    negative: int = 0
    spent_input: int = 0
    spent_output: int = 0
    saved_input: int = 0
    saved_output: int = 0
    history: list[tuple[int, int]] = field(default_factory=list)

    def record_hit(self, correct: bool, full_text: str, response_text: str) -> None:
        self.hits += 1
        if correct:
            self.positive += 1
        else:
            self.negative += 1
        self.saved_input += estimate_tokens(full_text)
        self.saved_output += estimate_tokens(response_text)

    def record_miss(self, full_text: str, response_text: str) -> None:
        self.spent_input += estimate_tokens(full_text)
        self.spent_output += estimate_tokens(response_text)

    def tick(self, codegen_calls: int = 0) -> None:
        self.history.append((codegen_calls, self.hits))


def _report(
    strategy: str,
    instructions: list[SyntheticInstruction],
    seed: int,
    tally: _Tally,
    window: int,
    codegen_calls: int = 0,
    validator_calls: int = 0,
) -> BenchReport:
    n = len(instructions)
    hits = tally.hits
    series_metrics = Metrics(history=tally.history)
    series = cost_ratio_series(series_metrics, window)
    return BenchReport(
        strategy=strategy,
        dataset=instructions[0].family if instructions else "",
        n=n,
        seed=seed,
        hit_rate=100.0 * hits / n if n else 0.0,
        positive_hit_rate=100.0 * tally.positive / hits if hits else 0.0,
        negative_hit_rate=100.0 * tally.negative / hits if hits else 0.0,
        hits=hits,
        misses=n - hits,
        positive_hits=tally.positive,
        negative_hits=tally.negative,
        codegen_calls=codegen_calls,
        validator_calls=validator_calls,
        tokens_spent_input=tally.spent_input,
        tokens_spent_output=tally.spent_output,
        tokens_saved_input=tally.saved_input,
        tokens_saved_output=tally.saved_output,
        ratio_series=list(series),
        window=window,
    )


def _run_exact(instructions, seed, window) -> BenchReport:
    tally = _Tally()
    stored: dict[str, str] = {}
    for instruction in instructions:
        full = build_full_prompt(instruction.text)
        key = hashlib.sha256(full.encode("utf-8")).hexdigest()
        if key in stored:
            tally.record_hit(classify_response(stored[key], instruction), full, stored[key])
        else:
            response = ground_truth_response(instruction)
            stored[key] = response
            tally.record_miss(full, response)
        tally.tick()
    return _report("exact", instructions, seed, tally, window)


def _run_semantic(instructions, seed, window) -> BenchReport:
    tally = _Tally()
    embedder = HashedEmbedder()
    matrix = np.zeros((max(16, len(instructions)), embedder.dims), dtype=np.float64)
    responses: list[str] = []
    for instruction in instructions:
        full = build_full_prompt(instruction.text)
        embedding = embedder.embed_text(full)
        hit_text: str | None = None
        if responses:
            sims = matrix[: len(responses)] @ embedding.values
            best = int(np.argmax(sims))
            if float(sims[best]) > SEMANTIC_THRESHOLD:
                hit_text = responses[best]
        if hit_text is not None:
            # Stored response returned verbatim: variation-blind by design.
            tally.record_hit(classify_response(hit_text, instruction), full, hit_text)
        else:
            response = ground_truth_response(instruction)
            matrix[len(responses)] = embedding.values
            responses.append(response)
            tally.record_miss(full, response)
        tally.tick()
    return _report("semantic", instructions, seed, tally, window)


def _run_gencache(
    instructions,
    seed,
    window,
    feedback: bool,
    doubles: BenchDoubles | None,
    thresholds: ClusterThresholds | None,
    codegen_cfg: CodegenConfig | None,
) -> BenchReport:
    doubles = doubles or make_default_doubles(instructions)
    runtime = CacheRuntime(
        embedder=HashedEmbedder(),
        codegen_backend=doubles.codegen,
        validator_backend=doubles.validator,
        thresholds=thresholds,
        codegen=codegen_cfg,
        codegen_workers=0,  # inline synthesis keeps replays deterministic
    )
    tally = _Tally()
    for index, instruction in enumerate(instructions):
        record = PromptRecord(
            id=f"r{index}",
            full_text=build_full_prompt(instruction.text),
            user_text=instruction.text,
            received_at=float(index),
        )
        outcome = runtime.handle_request(record, doubles.completion)
        if outcome.served_from == "cache":
            correct = classify_response(outcome.response_text, instruction)
            tally.record_hit(correct, record.full_text, outcome.response_text)
            if feedback and not correct:
                runtime.record_feedback(record.id, False)
        else:
            tally.record_miss(record.full_text, outcome.response_text)
    runtime.drain()
    metrics = runtime.metrics
    tally.history = list(metrics.history)
    strategy = "gencache-feedback" if feedback else "gencache"
    report = _report(
        strategy,
        instructions,
        seed,
        tally,
        window,
        codegen_calls=metrics.codegen_llm_calls,
        validator_calls=metrics.validator_llm_calls,
    )
    report.tokens_spent_input = metrics.tokens_spent_input
    report.tokens_spent_output = metrics.tokens_spent_output
    report.tokens_saved_input = metrics.tokens_saved_input
    report.tokens_saved_output = metrics.tokens_saved_output
    return report


def run_strategy(
    strategy: str,
    instructions: list[SyntheticInstruction],
    doubles: BenchDoubles | None = None,
    seed: int = 0,
    window: int = 100,
    thresholds: ClusterThresholds | None = None,
    codegen_cfg: CodegenConfig | None = None,
) -> BenchReport:
    if strategy not in STRATEGIES:
        raise ValueError(f"unknown strategy: {strategy!r}")
    if not instructions:
        raise ValueError("instruction stream is empty")
    if strategy == "exact":
        return _run_exact(instructions, seed, window)
    if strategy == "semantic":
        return _run_semantic(instructions, seed, window)
    return _run_gencache(
        instructions,
        seed,
        window,
        feedback=(strategy == "gencache-feedback"),
        doubles=doubles,
        thresholds=thresholds,
        codegen_cfg=codegen_cfg,
    )


def run_dataset(
    dataset: str,
    strategy: str,
    n: int,
    seed: int,
    window: int = 100,
) -> BenchReport:
    """Generate the dataset and run one strategy over it."""
    instructions = generator_for(dataset)(n, seed)
    return run_strategy(strategy, instructions, seed=seed, window=window)


def write_report(report: BenchReport, path: str) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        handle.write(report.to_json())
