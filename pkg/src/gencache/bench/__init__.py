"""Benchmark harness: seeded synthetic datasets, baseline cache strategies,
a ground-truth oracle, and the evaluation loop."""

from .datasets import (
    FAMILY_PARAM_ONLY,
    FAMILY_STRUCTURAL,
    FAMILY_SYNONYM,
    GroundTruth,
    SyntheticInstruction,
    build_full_prompt,
    canonical_extract,
    gen_param_only,
    gen_param_w_synonym,
    gen_structural,
)
from .doubles import (
    BenchDoubles,
    CompletionDouble,
    LocalValidatorBackend,
    classify_response,
    family_program,
    family_programs,
    ground_truth_response,
    make_codegen_double,
    make_default_doubles,
)
from .runner import STRATEGIES, BenchReport, run_strategy, write_report

__all__ = [
    "BenchDoubles",
    "BenchReport",
    "CompletionDouble",
    "FAMILY_PARAM_ONLY",
    "FAMILY_STRUCTURAL",
    "FAMILY_SYNONYM",
    "GroundTruth",
    "LocalValidatorBackend",
    "STRATEGIES",
    "SyntheticInstruction",
    "build_full_prompt",
    "canonical_extract",
    "classify_response",
    "family_program",
    "family_programs",
    "gen_param_only",
    "gen_param_w_synonym",
    "gen_structural",
    "ground_truth_response",
    "make_codegen_double",
    "make_default_doubles",
    "run_strategy",
    "write_report",
]
