"""Seeded synthetic shopping-instruction generators.

Three families over one item catalog:

* param-only: a single fixed template, only the item description and the
  price limit vary.
* param-w-synonym: the purchase verb varies over a small synonym set, with
  an optional leading "please" and, for roughly one draw in ten, the
  instruction split into two sentences.
* structural: each instruction rendered through one of ten structurally
  distinct templates with identical semantics.

Every draw carries its ground truth, and each family has a canonical
extraction regex that recovers the ground truth from the text exactly. That
extractor is the benchmark's correctness oracle.
"""

from __future__ import annotations

import itertools
import json
import random
import re
from dataclasses import dataclass
from importlib import resources

FAMILY_PARAM_ONLY = "param-only"
FAMILY_SYNONYM = "param-w-synonym"
FAMILY_STRUCTURAL = "structural"

FAMILIES = (FAMILY_PARAM_ONLY, FAMILY_SYNONYM, FAMILY_STRUCTURAL)

VERBS = ("i want to buy", "buy", "purchase", "find me", "i am looking for", "get")

SPLIT_PROBABILITY = 0.1
_PLEASE_PROBABILITY = 0.25
_ARTICLE_PROBABILITY = 0.5
_MAX_ATTRIBUTES = 3

# Fixed assistant preamble prepended to every benchmark prompt. Long shared
# prefixes dominate bag-of-tokens prompt similarity, which is the regime the
# cache is built for. Deliberately free of the purchase verbs and of the
# param-only tail phrase so cached extraction rules can never anchor here.
SYSTEM_PREAMBLE = (
    "You are the action module of an automated shopping assistant. Read the "
    "customer instruction at the end of this message and reply with a single "
    "JSON object describing the next catalog search. The object must contain "
    "exactly three fields: action, item and price. Always set action to the "
    "literal string search. Set item to the product description exactly as "
    "the customer phrased it, keeping every attribute word. Set price to the "
    "numeric dollar limit stated by the customer, digits only, with no "
    "currency word attached. Reply with the JSON object alone, adding no "
    "explanation, no code fence and no extra keys."
)

INSTRUCTION_MARKER = "Customer instruction: "


def build_full_prompt(instruction_text: str) -> str:
    return f"{SYSTEM_PREAMBLE}\n\n{INSTRUCTION_MARKER}{instruction_text}"


@dataclass(frozen=True)
class GroundTruth:
    item: str
    price: str


@dataclass(frozen=True)
class SyntheticInstruction:
    text: str
    ground_truth: GroundTruth
    family: str
    seed_item_id: int


@dataclass(frozen=True)
class CatalogItem:
    name: str
    prices: tuple[int, ...]


@dataclass(frozen=True)
class Catalog:
    items: tuple[CatalogItem, ...]
    attributes: tuple[str, ...]
    variants: tuple[str, ...]


def load_catalog() -> Catalog:
    raw = json.loads(
        resources.files("gencache").joinpath("data/catalog.json").read_text(encoding="utf-8")
    )
    return Catalog(
        items=tuple(CatalogItem(i["name"], tuple(i["prices"])) for i in raw["items"]),
        attributes=tuple(raw["attributes"]),
        variants=tuple(raw["variants"]),
    )


def _tuple_space(catalog: Catalog) -> list[tuple[int, tuple[str, ...], int]]:
    """All unique (item, attribute combination, price) draws, in fixed order."""
    space = []
    for item_id, item in enumerate(catalog.items):
        for k in range(_MAX_ATTRIBUTES + 1):
            for attrs in itertools.combinations(catalog.attributes, k):
                for price in item.prices:
                    space.append((item_id, attrs, price))
    return space


def _sample_tuples(catalog: Catalog, n: int, rng: random.Random):
    space = _tuple_space(catalog)
    if n > len(space):
        raise ValueError(f"cannot draw {n} unique instructions; catalog holds {len(space)}")
    for index in rng.sample(range(len(space)), n):
        yield space[index]


def _describe(catalog: Catalog, item_id: int, attrs: tuple[str, ...]) -> str:
    return " ".join([*attrs, catalog.items[item_id].name])


def gen_param_only(n: int, seed: int) -> list[SyntheticInstruction]:
    """Fixed template, unique (item, attributes, price) draws."""
    if n < 1:
        raise ValueError("n must be at least 1")
    catalog = load_catalog()
    rng = random.Random(seed)
    out = []
    for item_id, attrs, price in _sample_tuples(catalog, n, rng):
        desc = _describe(catalog, item_id, attrs)
        text = f"I want to buy {desc}, under the price range of {price} dollars"
        out.append(
            SyntheticInstruction(text, GroundTruth(desc, str(price)), FAMILY_PARAM_ONLY, item_id)
        )
    return out


def gen_param_w_synonym(n: int, seed: int) -> list[SyntheticInstruction]:
    """Verb and phrasing vary; ~10% of draws split into two sentences."""
    if n < 1:
        raise ValueError("n must be at least 1")
    catalog = load_catalog()
    rng = random.Random(seed)
    out = []
    for item_id, attrs, price in _sample_tuples(catalog, n, rng):
        desc = _describe(catalog, item_id, attrs)
        if rng.random() < SPLIT_PROBABILITY:
            variant = rng.choice(catalog.variants)
            text = (
                f"want a {desc}. need it in {variant}, "
                f"under the price range of {price} dollars"
            )
            truth = GroundTruth(f"{desc} in {variant}", str(price))
        else:
            verb = rng.choice(VERBS)
            please = "please " if rng.random() < _PLEASE_PROBABILITY else ""
            article = ""
            if rng.random() < _ARTICLE_PROBABILITY:
                article = "an " if desc[0] in "aeiou" else "a "
            text = f"{please}{verb} {article}{desc}, under the price range of {price} dollars"
            truth = GroundTruth(desc, str(price))
        out.append(SyntheticInstruction(text, truth, FAMILY_SYNONYM, item_id))
    return out


# The ten structural templates. Only the first carries the param-only tail
# phrase; the others rephrase the same request so template-anchored regexes
# cannot generalize to them.
STRUCTURAL_TEMPLATES: tuple[str, ...] = (
    "I want to buy {item}, under the price range of {price} dollars",
    "For under {price} dollars, I want {item}",
    "Find {item} that costs less than {price} dollars",
    "My budget is {price} dollars and I need {item}",
    "Looking to get {item} while spending at most {price} dollars",
    "Can you locate {item} priced below {price} dollars",
    "I need {item} and my spending limit is {price} dollars",
    "Show me {item} cheaper than {price} dollars",
    "Help me shop for {item} with a cap of {price} dollars",
    "{item} is what I want, keeping the cost under {price} dollars",
)

_STRUCTURAL_PATTERNS: tuple[re.Pattern, ...] = tuple(
    re.compile(p, re.IGNORECASE)
    for p in (
        r"^i want to buy (?P<item>.+), under the price range of (?P<price>\d+) dollars$",
        r"^for under (?P<price>\d+) dollars, i want (?P<item>.+)$",
        r"^find (?P<item>.+) that costs less than (?P<price>\d+) dollars$",
        r"^my budget is (?P<price>\d+) dollars and i need (?P<item>.+)$",
        r"^looking to get (?P<item>.+) while spending at most (?P<price>\d+) dollars$",
        r"^can you locate (?P<item>.+) priced below (?P<price>\d+) dollars$",
        r"^i need (?P<item>.+) and my spending limit is (?P<price>\d+) dollars$",
        r"^show me (?P<item>.+) cheaper than (?P<price>\d+) dollars$",
        r"^help me shop for (?P<item>.+) with a cap of (?P<price>\d+) dollars$",
        r"^(?P<item>.+) is what i want, keeping the cost under (?P<price>\d+) dollars$",
    )
)

_PARAM_ONLY_PATTERN = _STRUCTURAL_PATTERNS[0]

_SYNONYM_SPLIT_PATTERN = re.compile(
    r"^want a (?P<head>.+)\. need it in (?P<variant>.+), "
    r"under the price range of (?P<price>\d+) dollars$",
    re.IGNORECASE,
)
_SYNONYM_PATTERN = re.compile(
    r"^(?:please )?(?:i want to buy|i am looking for|find me|purchase|buy|get) "
    r"(?:an? )?(?P<item>.+), under the price range of (?P<price>\d+) dollars$",
    re.IGNORECASE,
)


def gen_structural(n: int, seed: int) -> list[SyntheticInstruction]:
    """Each draw renders a base instruction through one of ten templates."""
    if n < 1:
        raise ValueError("n must be at least 1")
    catalog = load_catalog()
    rng = random.Random(seed)
    space = _tuple_space(catalog)
    total = len(space) * len(STRUCTURAL_TEMPLATES)
    if n > total:
        raise ValueError(f"cannot draw {n} unique instructions; space holds {total}")
    out = []
    for index in rng.sample(range(total), n):
        tuple_index, template_index = divmod(index, len(STRUCTURAL_TEMPLATES))
        item_id, attrs, price = space[tuple_index]
        desc = _describe(catalog, item_id, attrs)
        text = STRUCTURAL_TEMPLATES[template_index].format(item=desc, price=price)
        out.append(
            SyntheticInstruction(text, GroundTruth(desc, str(price)), FAMILY_STRUCTURAL, item_id)
        )
    return out


def canonical_extract(instruction: SyntheticInstruction) -> GroundTruth | None:
    """Recover the ground truth from the instruction text alone.

    This is the oracle side: for every generated instruction the extraction
    must reproduce the stored ground truth exactly.
    """
    text = instruction.text
    if instruction.family == FAMILY_PARAM_ONLY:
        match = _PARAM_ONLY_PATTERN.match(text)
        if match:
            return GroundTruth(match.group("item"), match.group("price"))
        return None
    if instruction.family == FAMILY_SYNONYM:
        match = _SYNONYM_SPLIT_PATTERN.match(text)
        if match:
            return GroundTruth(
                f"{match.group('head')} in {match.group('variant')}", match.group("price")
            )
        match = _SYNONYM_PATTERN.match(text)
        if match:
            return GroundTruth(match.group("item"), match.group("price"))
        return None
    if instruction.family == FAMILY_STRUCTURAL:
        for pattern in _STRUCTURAL_PATTERNS:
            match = pattern.match(text)
            if match:
                return GroundTruth(match.group("item"), match.group("price"))
        return None
    raise ValueError(f"unknown family: {instruction.family!r}")


def generator_for(family: str):
    if family == FAMILY_PARAM_ONLY:
        return gen_param_only
    if family == FAMILY_SYNONYM:
        return gen_param_w_synonym
    if family == FAMILY_STRUCTURAL:
        return gen_structural
    raise ValueError(f"unknown family: {family!r}")
