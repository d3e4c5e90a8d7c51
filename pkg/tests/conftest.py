"""Shared fixtures and randomized-instance generators."""

from __future__ import annotations

import numpy as np
import pytest

from semshield import ToyDenoiser, two_blob_scene
from semshield.extraction import RegionSet
from semshield.prompts import ConceptSpan, ParsedPrompt, TokenSpan
from semshield.protection import ProtectionMask, build_protection_mask


@pytest.fixture(scope="session")
def scene():
    return two_blob_scene()


@pytest.fixture(scope="session")
def toy_backend():
    return ToyDenoiser()


@pytest.fixture(scope="session")
def small_backend():
    return ToyDenoiser(grid=(8, 8))


def random_parsed(rng: np.random.Generator, n_concepts: int, max_attrs: int = 2) -> ParsedPrompt:
    """Random token-level parse: disjoint contiguous spans between two
    special tokens (BOS at 0, EOS at the end)."""
    spans_needed = []
    for k in range(n_concepts):
        n_attrs = int(rng.integers(0, max_attrs + 1))
        spans_needed.append(n_attrs)

    cursor = 1
    concepts = []
    for k, n_attrs in enumerate(spans_needed):
        pieces = []
        for _ in range(n_attrs + 1):
            cursor += int(rng.integers(0, 2))  # optional gap
            length = int(rng.integers(1, 3))
            pieces.append(TokenSpan(cursor, cursor + length, f"tok{cursor}"))
            cursor += length
        concept_pos = int(rng.integers(0, len(pieces)))
        concept = pieces.pop(concept_pos)
        concepts.append(ConceptSpan(concept=concept, attributes=tuple(pieces), index=k + 1))
    token_count = cursor + 1 + int(rng.integers(0, 3))
    raw = " ".join(f"tok{i}" for i in range(token_count))
    return ParsedPrompt(
        raw=raw,
        concepts=tuple(concepts),
        token_count=token_count,
        special_token_indices=frozenset({0, token_count - 1}),
    )


def random_regions(
    rng: np.random.Generator, n_concepts: int, grid: tuple[int, int]
) -> tuple[list[np.ndarray], list[np.ndarray]]:
    """Random disjoint regions plus nonempty anchors inside (or near) them."""
    w, h = grid
    owner = rng.integers(-1, n_concepts, size=(h, w))  # -1 = unclaimed
    regions = [(owner == k) for k in range(n_concepts)]
    anchors = []
    for k in range(n_concepts):
        cells = np.argwhere(regions[k])
        a = np.zeros((h, w), dtype=bool)
        if len(cells):
            keep = cells[rng.integers(0, len(cells))]
            a[keep[0], keep[1]] = True
        else:
            a[int(rng.integers(0, h)), int(rng.integers(0, w))] = True
        anchors.append(a)
    return anchors, regions


def random_protection_setup(
    rng: np.random.Generator,
    n_concepts: int | None = None,
    grid: tuple[int, int] | None = None,
) -> tuple[ProtectionMask, RegionSet, ParsedPrompt]:
    n = n_concepts or int(rng.integers(1, 5))
    grid = grid or (int(rng.integers(2, 7)), int(rng.integers(2, 7)))
    parsed = random_parsed(rng, n)
    anchors, regions = random_regions(rng, n, grid)
    region_set = RegionSet(
        anchors=anchors,
        regions=regions,
        grid=grid,
        concept_index={c.index: c for c in parsed.concepts},
    )
    return build_protection_mask(region_set, parsed), region_set, parsed
