"""Benchmark prompt set generation.

Three template families, 100 prompts each, generated from the bundled
vocabularies with a fixed seed.  Every prompt carries its gold parse,
built directly from the generator's own word bookkeeping (never by
calling the parser), so the parser round-trip test is meaningful.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import vocab
from .prompts import ConceptSpan, ParsedPrompt, Template, TokenSpan

DATASET_SIZE = 100


@dataclass(frozen=True)
class PromptItem:
    text: str
    gold: ParsedPrompt


@dataclass
class PromptDataset:
    name: Template
    prompts: list[PromptItem]
    seeds_per_prompt: int = 4

    def __len__(self) -> int:
        return len(self.prompts)

    def texts(self) -> list[str]:
        return [p.text for p in self.prompts]


class _Builder:
    """Accumulates words and tracks their indices for gold spans."""

    def __init__(self):
        self.words: list[str] = []

    def add(self, text: str) -> tuple[int, int]:
        parts = text.split()
        start = len(self.words)
        self.words.extend(parts)
        return start, len(self.words)

    def comma(self):
        # attach the comma to the parse's word stream as its own word
        self.words.append(",")

    def render(self) -> str:
        out = []
        for w in self.words:
            if w == ",":
                out[-1] = out[-1] + ","
            else:
                out.append(w)
        return " ".join(out)


def _span(builder: _Builder, rng_word: str) -> TokenSpan:
    start, end = builder.add(rng_word)
    return TokenSpan(start=start, end=end, surface=rng_word)


def _cc500_prompt(rng: np.random.Generator) -> PromptItem:
    colors, objects = vocab.colors(), vocab.objects()
    o1, o2 = rng.choice(len(objects), size=2, replace=False)
    c1, c2 = rng.integers(0, len(colors), size=2)
    b = _Builder()
    b.add("a")
    a1 = _span(b, colors[c1])
    e1 = _span(b, objects[o1])
    b.add("and")
    b.add("a")
    a2 = _span(b, colors[c2])
    e2 = _span(b, objects[o2])
    gold = ParsedPrompt(
        raw=b.render(),
        concepts=(
            ConceptSpan(concept=e1, attributes=(a1,), index=1),
            ConceptSpan(concept=e2, attributes=(a2,), index=2),
        ),
        token_count=len(b.words),
    )
    return PromptItem(text=gold.raw, gold=gold)


def _wearing_prompt(rng: np.random.Generator) -> PromptItem:
    colors, clothing = vocab.colors(), vocab.clothing()
    items = rng.choice(len(clothing), size=4, replace=False)
    shades = rng.choice(len(colors), size=4, replace=False)
    person = "man" if rng.integers(0, 2) == 0 else "woman"
    b = _Builder()
    b.add("a")
    b.add(person)
    concepts = []
    for k in range(4):
        b.comma()
        attr = _span(b, colors[shades[k]])
        item = _span(b, clothing[items[k]])
        concepts.append(ConceptSpan(concept=item, attributes=(attr,), index=k + 1))
    gold = ParsedPrompt(raw=b.render(), concepts=tuple(concepts), token_count=len(b.words))
    return PromptItem(text=gold.raw, gold=gold)


def _animals_prompt(rng: np.random.Generator) -> PromptItem:
    colors, clothing, animals = vocab.colors(), vocab.clothing(), vocab.animals()
    an1, an2 = rng.choice(len(animals), size=2, replace=False)
    cl = rng.integers(0, len(clothing), size=2)
    co = rng.integers(0, len(colors), size=2)
    b = _Builder()
    concepts = []
    for k, (color_i, cloth_i, animal_i) in enumerate(
        [(co[0], cl[0], an1), (co[1], cl[1], an2)]
    ):
        if k == 1:
            b.add("and")
        b.add("a")
        color = _span(b, colors[color_i])
        cloth = _span(b, clothing[cloth_i])
        animal = _span(b, animals[animal_i])
        concepts.append(
            ConceptSpan(concept=animal, attributes=(color, cloth), index=k + 1)
        )
    gold = ParsedPrompt(raw=b.render(), concepts=tuple(concepts), token_count=len(b.words))
    return PromptItem(text=gold.raw, gold=gold)


_GENERATORS = {
    Template.CC500: _cc500_prompt,
    Template.WEARING100: _wearing_prompt,
    Template.ANIMALS100: _animals_prompt,
}


def generate_dataset(
    name: Template | str, seed: int = 0, size: int = DATASET_SIZE
) -> PromptDataset:
    """Deterministically generate one benchmark prompt set.

    Prompts are unique within a set; duplicates are resampled.
    """
    name = Template(name)
    rng = np.random.default_rng((hash_seed(name.value), seed))
    make = _GENERATORS[name]
    seen: set[str] = set()
    items: list[PromptItem] = []
    while len(items) < size:
        item = make(rng)
        if item.text in seen:
            continue
        seen.add(item.text)
        items.append(item)
    return PromptDataset(name=name, prompts=items)


def hash_seed(text: str) -> int:
    return sum(ord(ch) * (31**i) for i, ch in enumerate(text)) % (2**31)


def save_prompt_file(dataset: PromptDataset, path: str | Path):
    """One prompt per line, UTF-8."""
    Path(path).write_text("\n".join(dataset.texts()) + "\n", "utf-8")


def load_prompt_file(path: str | Path) -> list[str]:
    return [ln for ln in Path(path).read_text("utf-8").splitlines() if ln.strip()]
