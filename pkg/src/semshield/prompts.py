"""Concept and attribute extraction from text prompts.

A prompt is parsed into a set of concept nouns, each with its attribute
modifiers, first at word level and then (via :func:`map_to_tokens`)
re-indexed onto a tokenizer's sub-word positions.  Template parsing
covers the three benchmark grammars exactly and is dependency-free; the
freeform path is a best-effort heuristic chunker behind a pluggable
backend interface, pinned down by a hand-annotated gold file.

Word-level parses number positions by word (punctuation counts as its
own word); ``token_count`` then means the word count and
``special_token_indices`` is empty.  After :func:`map_to_tokens` all
spans are sub-word token spans.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Callable, Sequence

from . import vocab
from .errors import AlignmentError, TemplateMismatch


class Template(str, Enum):
    CC500 = "cc500"
    WEARING100 = "wearing100"
    ANIMALS100 = "animals100"


@dataclass(frozen=True)
class TokenSpan:
    """Half-open token index range [start, end) with its surface text."""

    start: int
    end: int
    surface: str

    def __post_init__(self):
        if not (0 <= self.start < self.end):
            raise ValueError(f"bad span [{self.start}, {self.end})")

    def indices(self) -> range:
        return range(self.start, self.end)

    def __len__(self) -> int:
        return self.end - self.start


@dataclass(frozen=True)
class ConceptSpan:
    """A concept noun span plus its attribute spans; ``index`` is 1-based."""

    concept: TokenSpan
    attributes: tuple[TokenSpan, ...]
    index: int

    def __post_init__(self):
        object.__setattr__(self, "attributes", tuple(self.attributes))
        own = set(self.concept.indices())
        for a in self.attributes:
            if own & set(a.indices()):
                raise ValueError(f"attribute {a.surface!r} overlaps concept span")

    def all_indices(self) -> set[int]:
        """Token indices of the concept and all of its attributes."""
        out = set(self.concept.indices())
        for a in self.attributes:
            out |= set(a.indices())
        return out


@dataclass(frozen=True)
class ParsedPrompt:
    raw: str
    concepts: tuple[ConceptSpan, ...]
    token_count: int
    special_token_indices: frozenset[int] = field(default_factory=frozenset)

    def __post_init__(self):
        object.__setattr__(self, "concepts", tuple(self.concepts))
        object.__setattr__(
            self, "special_token_indices", frozenset(self.special_token_indices)
        )
        seen: set[int] = set()
        indices = []
        for c in self.concepts:
            idx = c.all_indices()
            if max(idx, default=-1) >= self.token_count:
                raise ValueError("concept span exceeds token_count")
            if idx & seen:
                raise ValueError("concept spans overlap across concepts")
            if idx & self.special_token_indices:
                raise ValueError("special token inside a concept span")
            seen |= idx
            indices.append(c.index)
        if sorted(indices) != list(range(1, len(self.concepts) + 1)):
            raise ValueError("concept indices must be 1..n and unique")

    @property
    def n_concepts(self) -> int:
        return len(self.concepts)


@dataclass(frozen=True)
class Word:
    text: str
    start: int
    end: int

    @property
    def is_punct(self) -> bool:
        return self.text in _PUNCT


_PUNCT = {",", ".", "!", "?", ";", ":"}
_WORD_RE = re.compile(r"[^\s,.!?;:]+|[,.!?;:]")


def split_words(prompt: str) -> list[Word]:
    """Split a prompt into words with character offsets.

    Punctuation marks become their own words so comma-separated template
    grammars can treat them as separators.
    """
    return [Word(m.group(), m.start(), m.end()) for m in _WORD_RE.finditer(prompt)]


def _surface(prompt: str, words: list[Word], start: int, end: int) -> str:
    return prompt[words[start].start : words[end - 1].end]


def _span(prompt: str, words: list[Word], start: int, end: int) -> TokenSpan:
    return TokenSpan(start=start, end=end, surface=_surface(prompt, words, start, end))


# --- template grammars -------------------------------------------------

_ARTICLES = {"a", "an"}
_PERSONS = {"man", "woman"}


def parse_template(prompt: str, template: Template | str) -> ParsedPrompt:
    """Parse a prompt under one of the three benchmark grammars.

    Grammars (word-positional, case-insensitive articles/conjunctions):

    * cc500: ``a <color...> <obj> and a <color...> <obj>`` — two concepts,
      one (possibly multi-word) color attribute each;
    * wearing100: ``a man/woman, <color> <clothing>, ... x4`` — four
      clothing concepts with one color attribute each; the person noun is
      shared context, not a concept;
    * animals100: ``a <color> <clothing> <animal> and [a] <color>
      <clothing> <animal>`` — two animal concepts, each with a color and
      a clothing attribute.

    Raises:
        TemplateMismatch: with the word position of the first failure.
    """
    template = Template(template)
    words = split_words(prompt)
    if template is Template.CC500:
        return _parse_cc500(prompt, words)
    if template is Template.WEARING100:
        return _parse_wearing(prompt, words)
    return _parse_animals(prompt, words)


def _fail(msg: str, position: int) -> TemplateMismatch:
    return TemplateMismatch(f"{msg} (word {position})", position)


def _split_on_and(words: list[Word]) -> int:
    hits = [i for i, w in enumerate(words) if w.text.lower() == "and"]
    if len(hits) != 1:
        raise _fail("expected exactly one 'and'", hits[1] if len(hits) > 1 else len(words))
    return hits[0]


def _no_punct(words: list[Word]):
    for i, w in enumerate(words):
        if w.is_punct:
            raise _fail("unexpected punctuation", i)


def _parse_cc500(prompt: str, words: list[Word]) -> ParsedPrompt:
    _no_punct(words)
    cut = _split_on_and(words)
    halves = [(0, cut), (cut + 1, len(words))]
    concepts = []
    for k, (lo, hi) in enumerate(halves, start=1):
        if hi <= lo or words[lo].text.lower() not in _ARTICLES:
            raise _fail("expected article", lo)
        if hi - lo < 3:
            raise _fail("half needs article, color and object", hi)
        obj = _span(prompt, words, hi - 1, hi)
        color = _span(prompt, words, lo + 1, hi - 1)
        concepts.append(ConceptSpan(concept=obj, attributes=(color,), index=k))
    return ParsedPrompt(raw=prompt, concepts=concepts, token_count=len(words))


def _parse_wearing(prompt: str, words: list[Word]) -> ParsedPrompt:
    segments: list[tuple[int, int]] = []
    start = 0
    for i, w in enumerate(words):
        if w.text == ",":
            segments.append((start, i))
            start = i + 1
        elif w.is_punct:
            raise _fail("unexpected punctuation", i)
    segments.append((start, len(words)))
    if len(segments) != 5:
        raise _fail("expected a person and four clothing groups", len(words))

    lo, hi = segments[0]
    if hi - lo != 2 or words[lo].text.lower() not in _ARTICLES:
        raise _fail("expected 'a man' or 'a woman'", lo)
    if words[lo + 1].text.lower() not in _PERSONS:
        raise _fail("expected 'man' or 'woman'", lo + 1)

    concepts = []
    for k, (lo, hi) in enumerate(segments[1:], start=1):
        if hi - lo < 2:
            raise _fail("clothing group needs color and item", hi)
        item = _span(prompt, words, hi - 1, hi)
        color = _span(prompt, words, lo, hi - 1)
        concepts.append(ConceptSpan(concept=item, attributes=(color,), index=k))
    return ParsedPrompt(raw=prompt, concepts=concepts, token_count=len(words))


def _parse_animals(prompt: str, words: list[Word]) -> ParsedPrompt:
    _no_punct(words)
    cut = _split_on_and(words)
    halves = [(0, cut), (cut + 1, len(words))]
    concepts = []
    for k, (lo, hi) in enumerate(halves, start=1):
        if hi > lo and words[lo].text.lower() in _ARTICLES:
            lo += 1  # article optional in the second half
        if hi - lo != 3:
            raise _fail("expected color, clothing and animal", hi if hi - lo < 3 else lo + 3)
        color = _span(prompt, words, lo, lo + 1)
        cloth = _span(prompt, words, lo + 1, lo + 2)
        animal = _span(prompt, words, lo + 2, lo + 3)
        concepts.append(ConceptSpan(concept=animal, attributes=(color, cloth), index=k))
    return ParsedPrompt(raw=prompt, concepts=concepts, token_count=len(words))


# --- freeform chunking -------------------------------------------------

# word classes for the heuristic chunker; everything unknown is a noun
_DETERMINERS = {
    "a", "an", "the", "this", "that", "these", "those",
    "my", "your", "his", "her", "its", "our", "their",
    "one", "two", "three", "four", "five", "six", "seven", "eight", "nine", "ten",
}
_BOUNDARIES = {
    "and", "or", "with", "of", "in", "on", "at", "under", "over",
    "beside", "near", "next", "to", "from", "by", "is", "are", "was", "were",
}
_EXTRA_ADJECTIVES = {
    "light", "dark", "pale", "bright", "big", "small", "large", "tiny", "little",
    "old", "young", "new", "tall", "short", "long", "wooden", "metal", "plastic",
    "happy", "sad", "angry", "cute", "fluffy", "furry", "shiny", "sparkly",
    "cozy", "fancy", "stormy", "sunny", "rainy", "cloudy", "snowy",
}
# -ing words are treated as clause boundaries (participles) except these
_ING_NOUNS = {
    "painting", "building", "ceiling", "clothing", "lightning",
    "string", "earring", "pudding", "wedding",
}

# a chunk is (head word index, [(attr_start, attr_end), ...]) over the word list
Chunk = tuple[int, list[tuple[int, int]]]
ChunkerBackend = Callable[[list[str]], list[Chunk]]


def _word_class(word: str) -> str:
    w = word.lower()
    if w in _PUNCT:
        return "boundary"
    if w in _DETERMINERS:
        return "det"
    if w in _BOUNDARIES:
        return "boundary"
    if w.endswith("ing") and len(w) >= 6 and w not in _ING_NOUNS:
        return "boundary"
    if w in vocab.colors() or w in _EXTRA_ADJECTIVES:
        return "adj"
    return "noun"


def heuristic_chunks(words: list[str]) -> list[Chunk]:
    """Default freeform backend: lexicon-driven noun chunking.

    Scans maximal runs of adjective/noun words (determiners and boundary
    words break runs).  The head is the last noun of a run; preceding
    words become attributes, with consecutive adjectives merged into one
    span and each compound noun kept as its own span.  Runs without a
    noun yield no concept.
    """
    classes = [_word_class(w) for w in words]
    chunks: list[Chunk] = []
    i = 0
    while i < len(words):
        if classes[i] not in ("adj", "noun"):
            i += 1
            continue
        j = i
        while j < len(words) and classes[j] in ("adj", "noun"):
            j += 1
        nouns = [p for p in range(i, j) if classes[p] == "noun"]
        if nouns:
            head = nouns[-1]
            attrs: list[tuple[int, int]] = []
            p = i
            while p < head:
                if classes[p] == "adj":
                    q = p
                    while q < head and classes[q] == "adj":
                        q += 1
                    attrs.append((p, q))
                    p = q
                else:
                    attrs.append((p, p + 1))
                    p += 1
            chunks.append((head, attrs))
        i = j
    return chunks


def parse_freeform(prompt: str, backend: ChunkerBackend | None = None) -> ParsedPrompt:
    """Best-effort concept extraction for arbitrary prompts.

    ``backend`` maps a word list to chunks (see :data:`ChunkerBackend`);
    a dependency parser can be plugged in by adapting its output to that
    shape.  An empty concept list is a valid result.
    """
    backend = backend or heuristic_chunks
    words = split_words(prompt)
    concepts = []
    for k, (head, attrs) in enumerate(backend([w.text for w in words]), start=1):
        concepts.append(
            ConceptSpan(
                concept=_span(prompt, words, head, head + 1),
                attributes=tuple(_span(prompt, words, s, e) for s, e in attrs),
                index=k,
            )
        )
    return ParsedPrompt(raw=prompt, concepts=concepts, token_count=len(words))


def parse_prompt(prompt: str, template: Template | str | None = None) -> ParsedPrompt:
    """Parse with an explicit template, or auto-detect then fall back.

    Auto-detection tries the grammars from most to least constrained
    (wearing100, animals100, cc500) and uses the bundled vocabularies to
    reject an animals100 reading whose clothing/animal slots are not
    plausible — e.g. ``a light blue car ...`` stays a cc500 prompt with a
    multi-word color.  Explicit templates are purely positional.
    """
    if template is not None:
        return parse_template(prompt, template)
    try:
        return parse_template(prompt, Template.WEARING100)
    except TemplateMismatch:
        pass
    try:
        parsed = parse_template(prompt, Template.ANIMALS100)
        if all(
            c.attributes[1].surface.lower() in vocab.clothing()
            and c.concept.surface.lower() in vocab.animals()
            for c in parsed.concepts
        ):
            return parsed
    except TemplateMismatch:
        pass
    try:
        return parse_template(prompt, Template.CC500)
    except TemplateMismatch:
        pass
    return parse_freeform(prompt)


# --- sub-word token mapping --------------------------------------------

Tokenization = Sequence[tuple[int, tuple[int, int]]]


def map_to_tokens(parsed: ParsedPrompt, tokenization: Tokenization) -> ParsedPrompt:
    """Re-index a word-level parse onto sub-word token positions.

    ``tokenization`` is a sequence of ``(token_id, (char_start, char_end))``
    covering the prompt, sorted and non-overlapping; empty char ranges
    mark special tokens (BOS/EOS/padding).  A word's span covers every
    token whose char range intersects the word's char range.

    Raises:
        AlignmentError: some concept or attribute word has no covering token.
    """
    ranges = [r for _, r in tokenization]
    for (s0, e0), (s1, e1) in zip(ranges, ranges[1:]):
        if s1 < e0:
            raise ValueError("tokenization char ranges must be sorted and disjoint")
    specials = frozenset(i for i, (s, e) in enumerate(ranges) if s >= e)
    words = split_words(parsed.raw)

    def covering(char_lo: int, char_hi: int, what: str) -> list[int]:
        hit = [
            i
            for i, (s, e) in enumerate(ranges)
            if s < e and s < char_hi and char_lo < e
        ]
        if not hit:
            raise AlignmentError(f"no tokens cover {what!r}")
        return hit

    def remap(span: TokenSpan) -> TokenSpan:
        token_idx: list[int] = []
        for w in words[span.start : span.end]:
            token_idx.extend(covering(w.start, w.end, w.text))
        return TokenSpan(start=min(token_idx), end=max(token_idx) + 1, surface=span.surface)

    concepts = [
        replace(c, concept=remap(c.concept), attributes=tuple(remap(a) for a in c.attributes))
        for c in parsed.concepts
    ]
    return ParsedPrompt(
        raw=parsed.raw,
        concepts=concepts,
        token_count=len(tokenization),
        special_token_indices=specials,
    )


# --- gold annotation file ----------------------------------------------


def load_gold_file(path: str | Path) -> list[dict]:
    """Read a gold annotation file (one JSON record per line).

    Record layout: ``{"prompt": str, "concepts": [{"surface": str,
    "attributes": [str, ...]}, ...]}``.
    """
    records = []
    for line in Path(path).read_text("utf-8").splitlines():
        if line.strip():
            records.append(json.loads(line))
    return records


def write_gold_file(records: list[dict], path: str | Path):
    lines = [json.dumps(r, ensure_ascii=False) for r in records]
    Path(path).write_text("\n".join(lines) + "\n", "utf-8")


def gold_view(parsed: ParsedPrompt) -> dict:
    """Project a parse onto the gold-file record layout."""
    return {
        "prompt": parsed.raw,
        "concepts": [
            {
                "surface": c.concept.surface,
                "attributes": [a.surface for a in c.attributes],
            }
            for c in parsed.concepts
        ],
    }
