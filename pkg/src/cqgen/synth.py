"""Deterministic synthetic product corpus.

Templated products over attribute slots: every description states a random
subset of its category's attributes, and customer questions ask about
attributes both stated and unstated. This gives the corpus a known keyword
structure (attribute/component words plus the product noun), which the
end-to-end evaluation relies on: keyword prediction has a learnable signal
(category noun -> attribute pool), response rate is measurable, and the
statement/question overlap provides an asks-stated-information proxy.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

from .corpus import write_jsonl
from .nn.rng import Rng
from .selection import Blacklist

# attribute -> possible values (empty list: component attribute, no value)
VALUE_ATTRS = {
    "color": ["blue", "red", "green", "black", "white"],
    "size": ["small", "medium", "large"],
    "material": ["steel", "plastic", "wood", "bamboo"],
    "voltage": ["110", "220"],
    "capacity": ["2", "4", "6"],
    "height": ["30", "60", "90"],
    "width": ["20", "40", "80"],
    "weight": ["light", "heavy"],
    "warranty": ["1", "2", "5"],
    "timer": ["15", "30", "60"],
}
COMPONENT_ATTRS = ("blade", "cord", "cover", "zipper", "switch", "handle")

CATEGORIES: dict[str, tuple[str, ...]] = {
    "blender": ("capacity", "voltage", "blade", "color", "warranty", "material"),
    "kettle": ("capacity", "voltage", "cord", "color", "material", "warranty"),
    "pillow": ("size", "cover", "material", "zipper", "color", "width"),
    "chair": ("height", "weight", "color", "material", "warranty", "width"),
    "lamp": ("voltage", "height", "color", "material", "switch", "cord"),
    "toaster": ("voltage", "color", "warranty", "timer", "width", "handle"),
}

BRANDS = ("acme", "zenro", "kipfel", "norda")

# related attribute pairs asked together; they give the co-occurrence graph
# its semantic families
RELATED_PAIRS = (
    ("height", "width"),
    ("size", "width"),
    ("color", "material"),
    ("capacity", "voltage"),
    ("warranty", "weight"),
)

_FILLERS = (
    "great for everyday use .",
    "a solid choice for your home .",
    "ships in simple packaging .",
    "designed for daily comfort .",
)


@dataclass
class SynthConfig:
    products: int = 500
    seed: int = 1
    min_questions: int = 4
    max_questions: int = 6
    noisy_fraction: float = 0.08  # questions with trailing commentary / html noise


def _statement(attr: str, value: str | None, rng: Rng) -> str:
    if value is None:
        return rng.choice([f"it has a {attr} .", f"comes with a {attr} ."])
    return rng.choice([f"the {attr} is {value} .", f"{attr} : {value} ."])


def _question(attr: str, noun: str, rng: Rng) -> str:
    if attr in COMPONENT_ATTRS:
        return rng.choice([
            f"does this {noun} have a {attr} ?",
            f"is there a {attr} on this {noun} ?",
            f"does it have a {attr} ?",
        ])
    roll = rng.random()
    if roll < 0.2:
        value = rng.choice(VALUE_ATTRS[attr])
        return f"is the {attr} {value} ?"
    if roll < 0.6:
        return f"what is the {attr} of this {noun} ?"
    return f"what is the {attr} ?"


def _pair_question(a1: str, a2: str, noun: str) -> str:
    return f"what are the {a1} and the {a2} of this {noun} ?"


def generate_product(idx: int, rng: Rng, cfg: SynthConfig) -> dict:
    noun = rng.choice(sorted(CATEGORIES))
    pool = CATEGORIES[noun]
    brand = rng.choice(BRANDS)
    stated = sorted(rng.choice(len(pool), size=int(rng.integers(2, 4)), replace=False))
    title = f"{brand} {noun} model {rng.integers(1, 9)}00"
    parts = [title, "."]
    for i in stated:
        attr = pool[i]
        value = rng.choice(VALUE_ATTRS[attr]) if attr in VALUE_ATTRS else None
        parts.append(_statement(attr, value, rng))
    parts.append(rng.choice(_FILLERS))
    if rng.random() < cfg.noisy_fraction:
        parts.append("works with fruit & amp ; vegetables .")
    context = " ".join(parts)

    n_q = int(rng.integers(cfg.min_questions, cfg.max_questions + 1))
    asked = list(rng.choice(len(pool), size=min(n_q, len(pool)), replace=False))
    questions = []
    for i in asked:
        attr = pool[i]
        if rng.random() < 0.15:
            partners = [p for a, b in RELATED_PAIRS for p in (a, b)
                        if (a == attr or b == attr) and p != attr and p in pool]
            if partners:
                questions.append(_pair_question(attr, partners[0], noun))
                continue
        q = _question(attr, noun, rng)
        if rng.random() < cfg.noisy_fraction:
            q = q + " i contacted the seller and got no answer ."
        questions.append(q)
    return {"id": f"p{idx:05d}", "context": context, "questions": questions}


def generate_corpus(cfg: SynthConfig) -> list[dict]:
    rng = Rng(cfg.seed).derive("synth")
    return [generate_product(i, rng, cfg) for i in range(cfg.products)]


def default_blacklist() -> Blacklist:
    """One entry per attribute: trigger on the attribute word or any of its
    values appearing in the context."""
    patterns = {}
    for attr, values in VALUE_ATTRS.items():
        patterns[attr] = [attr] + [v for v in values if v.isalpha()]
    for attr in COMPONENT_ATTRS:
        patterns[attr] = [attr]
    return Blacklist(patterns=patterns)


def split_corpus(rows: list[dict], seed: int) -> dict[str, list[dict]]:
    """Deterministic 80/10/10 split."""
    order = list(Rng(seed).derive("split").permutation(len(rows)))
    n = len(rows)
    n_valid = max(1, n // 10)
    n_test = max(1, n // 10)
    n_train = n - n_valid - n_test
    shuffled = [rows[i] for i in order]
    return {
        "train": shuffled[:n_train],
        "valid": shuffled[n_train : n_train + n_valid],
        "test": shuffled[n_train + n_valid :],
    }


def write_corpus(out_dir: str | Path, cfg: SynthConfig) -> dict[str, int]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = generate_corpus(cfg)
    splits = split_corpus(rows, cfg.seed)
    for name, split_rows in splits.items():
        write_jsonl(out / f"{name}.jsonl", split_rows)
    default_blacklist().save(out / "blacklist.json")
    with open(out / "synth_config.json", "w", encoding="utf-8") as f:
        json.dump(cfg.__dict__, f, indent=1)
    return {name: len(split_rows) for name, split_rows in splits.items()}


def stated_attributes(context_tokens: list[str]) -> set[str]:
    """Attributes a context states, per the generator's own vocabulary."""
    toks = set(context_tokens)
    stated = {a for a in VALUE_ATTRS if a in toks}
    stated |= {a for a in COMPONENT_ATTRS if a in toks}
    for attr, values in VALUE_ATTRS.items():
        if any(v in toks for v in values if v.isalpha()):
            stated.add(attr)
    return stated
