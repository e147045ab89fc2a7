import itertools
import re

import pytest

from gencache.bench.datasets import (
    FAMILY_PARAM_ONLY,
    FAMILY_STRUCTURAL,
    FAMILY_SYNONYM,
    INSTRUCTION_MARKER,
    SPLIT_PROBABILITY,
    STRUCTURAL_TEMPLATES,
    SYSTEM_PREAMBLE,
    VERBS,
    build_full_prompt,
    canonical_extract,
    gen_param_only,
    gen_param_w_synonym,
    gen_structural,
    load_catalog,
)
from gencache.bench.doubles import (
    classify_response,
    family_program,
    family_programs,
    ground_truth_response,
    normalize_value,
)
from gencache.programs import compile_program, execute, structural_match
from gencache.prompt_model import serialize_response


class TestParamOnly:
    def test_template_shape(self):
        instructions = gen_param_only(50, seed=1)
        pattern = re.compile(
            r"^I want to buy .+, under the price range of \d+ dollars$"
        )
        assert all(pattern.match(i.text) for i in instructions)

    def test_unique_texts(self):
        instructions = gen_param_only(1000, seed=5)
        assert len({i.text for i in instructions}) == 1000

    def test_oracle_recovers_ground_truth(self):
        for instruction in gen_param_only(500, seed=2):
            assert canonical_extract(instruction) == instruction.ground_truth

    def test_catalog_space_guard(self):
        with pytest.raises(ValueError):
            gen_param_only(10**6, seed=0)

    def test_catalog_breadth(self):
        # At least 200 distinct item x attribute-combination draws.
        catalog = load_catalog()
        combos_per_item = sum(
            1 for k in range(4) for _ in itertools.combinations(catalog.attributes, k)
        )
        assert len(catalog.items) * combos_per_item >= 200


class TestParamWithSynonym:
    def test_verbs_come_from_documented_set(self):
        instructions = gen_param_w_synonym(400, seed=3)
        verb_re = re.compile(
            r"^(?:please )?(" + "|".join(re.escape(v) for v in VERBS) + r"|want a)\b"
        )
        assert all(verb_re.match(i.text) for i in instructions)

    def test_split_frequency_near_ten_percent(self):
        instructions = gen_param_w_synonym(1000, seed=4)
        splits = sum(1 for i in instructions if i.text.startswith("want a "))
        assert 70 <= splits <= 130  # 10% +/- 3 points

    def test_oracle_recovers_ground_truth(self):
        for instruction in gen_param_w_synonym(500, seed=5):
            assert canonical_extract(instruction) == instruction.ground_truth

    def test_unique_texts(self):
        instructions = gen_param_w_synonym(1000, seed=6)
        assert len({i.text for i in instructions}) == 1000


class TestStructural:
    def test_all_ten_templates_present_in_sample(self):
        instructions = gen_structural(200, seed=7)
        matched = set()
        for template_index, template in enumerate(STRUCTURAL_TEMPLATES):
            probe = re.escape(template).replace(r"\{item\}", ".+").replace(
                r"\{price\}", r"\d+"
            )
            pattern = re.compile(f"^{probe}$")
            for instruction in instructions:
                if pattern.match(instruction.text):
                    matched.add(template_index)
                    break
        assert matched == set(range(10))

    def test_same_ground_truth_across_variants(self):
        instructions = gen_structural(2000, seed=8)
        by_truth = {}
        for instruction in instructions:
            by_truth.setdefault(instruction.ground_truth, set()).add(instruction.text)
        assert any(len(texts) > 1 for texts in by_truth.values())

    def test_unique_texts(self):
        instructions = gen_structural(1000, seed=9)
        assert len({i.text for i in instructions}) == 1000

    def test_oracle_recovers_ground_truth(self):
        for instruction in gen_structural(500, seed=10):
            assert canonical_extract(instruction) == instruction.ground_truth

    def test_only_first_template_carries_gate_phrase(self):
        assert "under the price range of" in STRUCTURAL_TEMPLATES[0]
        for template in STRUCTURAL_TEMPLATES[1:]:
            assert "under the price range of" not in template


class TestPreamble:
    def test_preamble_cannot_feed_extraction_rules(self):
        # The family rules anchor on purchase verbs and the price phrase;
        # none of those may occur inside the shared preamble.
        hazards = [f"{verb} " for verb in VERBS] + ["need ", "want a ", "under the price range of"]
        lowered = SYSTEM_PREAMBLE.lower()
        for hazard in hazards:
            assert hazard not in lowered, hazard

    def test_full_prompt_carries_marker_and_instruction(self):
        text = "buy socks, under the price range of 5 dollars"
        full = build_full_prompt(text)
        assert full.endswith(INSTRUCTION_MARKER + text)
        assert full.startswith(SYSTEM_PREAMBLE)


class TestDoubles:
    def test_ground_truth_response_is_three_field_action(self):
        instruction = gen_param_only(1, seed=11)[0]
        text = ground_truth_response(instruction)
        assert text.startswith('{"action":"search"')
        assert classify_response(text, instruction) is True

    def test_classifier_normalizes(self):
        instruction = gen_param_only(1, seed=12)[0]
        truth = instruction.ground_truth
        variant = (
            '{"action":"search","item":"  '
            + truth.item.upper()
            + '","price":"'
            + truth.price
            + '.00"}'
        )
        assert classify_response(variant, instruction) is True

    def test_classifier_rejects_wrong_item(self):
        instruction = gen_param_only(1, seed=13)[0]
        wrong = '{"action":"search","item":"zeppelin","price":"' + instruction.ground_truth.price + '"}'
        assert classify_response(wrong, instruction) is False

    def test_normalize_value(self):
        assert normalize_value("  10.00 ") == "10"
        assert normalize_value("10.50") == "10.50"
        assert normalize_value("Red  SHOES") == "red shoes"

    def test_param_only_rule_extracts_from_full_prompt(self):
        instruction = gen_param_only(1, seed=14)[0]
        program = compile_program(family_program(FAMILY_PARAM_ONLY))
        full = build_full_prompt(instruction.text)
        assert structural_match(program, full)
        result = execute(program, full)
        assert result.kind == "response"
        assert classify_response(serialize_response(result.response), instruction)

    def test_synonym_rule_misfires_on_split_sentence(self):
        program = compile_program(family_programs(FAMILY_SYNONYM)[0])
        text = "want a wireless mouse. need it in black, under the price range of 25 dollars"
        result = execute(program, build_full_prompt(text))
        assert result.kind == "response"
        assert result.response.get("item") == "it in black"

    def test_conservative_synonym_rule_declines_split_sentence(self):
        program = compile_program(family_programs(FAMILY_SYNONYM)[-1])
        text = "want a wireless mouse. need it in black, under the price range of 25 dollars"
        result = execute(program, build_full_prompt(text))
        assert result.kind == "null"

    def test_structural_family_gets_param_only_rule(self):
        assert family_program(FAMILY_STRUCTURAL) == family_program(FAMILY_PARAM_ONLY)
