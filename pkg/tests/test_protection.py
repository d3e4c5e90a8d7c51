"""Protection mask construction and masked cross-attention."""

from __future__ import annotations

import numpy as np
import pytest

from semshield import (
    InvalidAssignment,
    MASK_NEG,
    OverlapError,
    attention,
    build_manual_mask,
    build_protection_mask,
    protected_attention,
)
from semshield.extraction import RegionSet
from semshield.prompts import ConceptSpan, ParsedPrompt, TokenSpan

from conftest import random_protection_setup
from oracles import attention_by_column_deletion, protection_mask_bruteforce


def hand_instance():
    """2-position grid, tokens [a, red, car, and, a, blue, bench]."""
    parsed = ParsedPrompt(
        raw="a red car and a blue bench",
        concepts=(
            ConceptSpan(TokenSpan(2, 3, "car"), (TokenSpan(1, 2, "red"),), 1),
            ConceptSpan(TokenSpan(6, 7, "bench"), (TokenSpan(5, 6, "blue"),), 2),
        ),
        token_count=7,
    )
    regions = RegionSet(
        anchors=[np.array([[True], [False]]), np.array([[False], [True]])],
        regions=[np.array([[True], [False]]), np.array([[False], [True]])],
        grid=(1, 2),
        concept_index={c.index: c for c in parsed.concepts},
    )
    return parsed, regions


def test_hand_instance_entry_by_entry():
    parsed, regions = hand_instance()
    mask = build_protection_mask(regions, parsed)
    values = mask.values
    assert values.shape == (2, 7)
    # row 0 (car region) blocks blue+bench; row 1 (bench region) blocks red+car
    want_blocked = np.zeros((2, 7), dtype=bool)
    want_blocked[0, [5, 6]] = True
    want_blocked[1, [1, 2]] = True
    assert np.array_equal(values < 0, want_blocked)
    assert (values[values < 0] == MASK_NEG).all()
    assert (values[~(values < 0)] == 0).all()
    # shared words and articles are open in every row
    assert (values[:, [0, 3, 4]] == 0).all()

    oracle = protection_mask_bruteforce(
        [r.reshape(-1) for r in regions.regions],
        [c.all_indices() for c in parsed.concepts],
        parsed.token_count,
    )
    assert np.array_equal(values < 0, oracle)


def test_single_concept_mask_is_noop():
    parsed = ParsedPrompt(
        raw="a red car",
        concepts=(ConceptSpan(TokenSpan(2, 3, "car"), (TokenSpan(1, 2, "red"),), 1),),
        token_count=3,
    )
    regions = RegionSet(
        anchors=[np.ones((2, 2), bool)],
        regions=[np.ones((2, 2), bool)],
        grid=(2, 2),
        concept_index={1: parsed.concepts[0]},
    )
    mask = build_protection_mask(regions, parsed)
    assert (mask.values == 0).all()
    assert mask.is_noop()


def test_empty_region_set_gives_all_zero_mask():
    parsed = ParsedPrompt(raw="", concepts=(), token_count=5)
    regions = RegionSet(anchors=[], regions=[], grid=(2, 2))
    mask = build_protection_mask(regions, parsed)
    assert mask.values.shape == (4, 5)
    assert (mask.values == 0).all()


def test_overlapping_regions_rejected():
    with pytest.raises(OverlapError):
        build_manual_mask(
            [np.ones((2, 2), bool), np.ones((2, 2), bool)],
            [[1], [2]],
            token_count=4,
            grid=(2, 2),
        )


def test_invalid_token_assignments_rejected():
    region = np.ones((2, 2), bool)
    with pytest.raises(InvalidAssignment):
        build_manual_mask([region], [[7]], token_count=4, grid=(2, 2))
    with pytest.raises(InvalidAssignment):
        build_manual_mask([region], [[0, 1, 2, 3]], token_count=4, grid=(2, 2))


def test_zero_mask_output_bit_identical_to_unprotected():
    rng = np.random.default_rng(0)
    q = rng.standard_normal((4, 8))
    k = rng.standard_normal((5, 8))
    v = rng.standard_normal((5, 8))
    mask = build_manual_mask(
        [np.zeros((2, 2), bool)], [[1]], token_count=5, grid=(2, 2)
    )
    shielded, attn = protected_attention(q, k, v, mask, (2, 2))
    plain, plain_attn = protected_attention(q, k, v, None, (2, 2))
    assert np.array_equal(shielded, plain)
    assert np.array_equal(attn.values, plain_attn.values)


def test_protected_row_renormalizes_over_open_tokens():
    rng = np.random.default_rng(1)
    parsed, regions = hand_instance()
    mask = build_protection_mask(regions, parsed)
    q = rng.standard_normal((2, 6))
    k = rng.standard_normal((7, 6))
    v = rng.standard_normal((7, 3))
    _, attn = protected_attention(q, k, v, mask, (1, 2))
    row0 = attn.values[0]
    assert row0[[5, 6]].sum() == 0.0
    assert abs(row0[[0, 1, 2, 3, 4]].sum() - 1.0) < 1e-9


@pytest.mark.parametrize("seed", range(8))
def test_matches_column_deletion_oracle(seed):
    rng = np.random.default_rng(200 + seed)
    mask, _, parsed = random_protection_setup(rng)
    w, h = mask.grid
    d = 6
    q = rng.standard_normal((w * h, d))
    k = rng.standard_normal((parsed.token_count, d))
    v = rng.standard_normal((parsed.token_count, d))
    out_w = rng.standard_normal((d, d))

    features, attn = protected_attention(q, k, v, mask, mask.grid, out_weight=out_w)
    blocked = mask.values < 0
    want_attn = attention_by_column_deletion(q, k, d, blocked)
    assert np.abs(attn.values - want_attn).max() < 1e-6
    assert (attn.values[blocked] == 0.0).all()
    want_features = (want_attn @ v) @ out_w
    assert np.abs(features - want_features).max() < 1e-6


def test_locality_rows_outside_regions_bit_exact():
    rng = np.random.default_rng(3)
    mask, region_set, parsed = random_protection_setup(rng, n_concepts=2, grid=(4, 4))
    q = rng.standard_normal((16, 5))
    k = rng.standard_normal((parsed.token_count, 5))
    v = rng.standard_normal((parsed.token_count, 5))
    _, shielded = protected_attention(q, k, v, mask, (4, 4))
    plain = attention(q, k, 5, kind="cross", grid=(4, 4))
    outside = ~np.logical_or.reduce([r.reshape(-1) for r in region_set.regions])
    assert np.array_equal(shielded.values[outside], plain.values[outside])


def test_conservation_and_shared_token_preservation():
    rng = np.random.default_rng(4)
    for trial in range(20):
        mask, _, parsed = random_protection_setup(rng)
        w, h = mask.grid
        q = rng.standard_normal((w * h, 4))
        k = rng.standard_normal((parsed.token_count, 4))
        v = rng.standard_normal((parsed.token_count, 4))
        _, attn = protected_attention(q, k, v, mask, mask.grid)
        assert np.abs(attn.values.sum(axis=1) - 1.0).max() < 1e-5
        spanned = set()
        for c in parsed.concepts:
            spanned |= c.all_indices()
        open_cols = sorted(set(range(parsed.token_count)) - spanned)
        assert (attn.values[:, open_cols] > 0).all()


def test_values_at_rebuilds_from_resampled_regions():
    rng = np.random.default_rng(5)
    mask, region_set, parsed = random_protection_setup(rng, n_concepts=3, grid=(4, 4))
    from semshield import resample_mask

    big = mask.values_at((8, 8))
    assert big.shape == (64, parsed.token_count)
    for region, tokens in zip(mask.region_masks, mask.blocked_tokens):
        rows = resample_mask(region, (8, 8)).reshape(-1)
        if tokens:
            assert (big[np.ix_(rows, np.array(tokens))] == MASK_NEG).all()
    blocked_rows = (big < 0).any(axis=1)
    union = np.zeros(64, dtype=bool)
    for region in mask.region_masks:
        union |= resample_mask(region, (8, 8)).reshape(-1)
    assert not (blocked_rows & ~union).any()


@pytest.mark.parametrize("seed", range(5))
def test_structural_audit_random_cases(seed):
    rng = np.random.default_rng(300 + seed)
    for _ in range(20):
        mask, region_set, parsed = random_protection_setup(rng)
        values = mask.values
        w, h = mask.grid
        blocked = values < 0
        # every row keeps at least one open column
        assert (~blocked).any(axis=1).all()
        # special tokens are never blocked
        for s in parsed.special_token_indices:
            assert not blocked[:, s].any()
        # rows outside every region are fully open
        union = np.zeros(w * h, dtype=bool)
        for r in region_set.regions:
            union |= r.reshape(-1)
        assert not blocked[~union].any()
        # inside region k: exactly the union of the other concepts' tokens
        concepts = sorted(parsed.concepts, key=lambda c: c.index)
        for k, region in enumerate(region_set.regions):
            rows = region.reshape(-1)
            if not rows.any():
                continue
            expected = set()
            for j, c in enumerate(concepts):
                if j != k:
                    expected |= c.all_indices()
            got_cols = set(np.flatnonzero(blocked[rows].any(axis=0)))
            assert got_cols == expected
            own = concepts[k].all_indices()
            assert not (got_cols & own)


def test_describe_lists_blocked_surfaces():
    parsed, regions = hand_instance()
    mask = build_protection_mask(regions, parsed)
    text = mask.describe()
    assert "car" in text and "bench" in text
    assert "blue" in text and "red" in text
