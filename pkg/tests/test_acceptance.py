"""Acceptance suite: one test per criterion, each printing PASS or FAIL.

Run with ``pytest tests/test_acceptance.py -v`` (the status lines are
written straight to the terminal, bypassing capture).
"""

from __future__ import annotations

import hashlib
import json
import sys
import time
from contextlib import contextmanager
from pathlib import Path

import numpy as np

from semshield import (
    ExtractionConfig,
    PipelineConfig,
    Template,
    ToyDenoiser,
    attention,
    blip_vqa_questions,
    build_manual_mask,
    direct_cross_regions,
    extract,
    generate,
    generate_dataset,
    internvl_protocol,
    iou,
    parse_template,
    pass1_record,
    pass2_protected,
    plain_generate,
    protected_attention,
    two_blob_scene,
)
from semshield.bench import MODE_ANCHORED, MODE_DIRECT, comparison_sweep
from semshield.cli import main as cli_main
from semshield.prompts import map_to_tokens, parse_prompt

from conftest import random_protection_setup
from oracles import attention_by_column_deletion, extract_regions_bruteforce

DATA = Path(__file__).parent / "data"


@contextmanager
def criterion(number: int, title: str):
    try:
        yield
    except BaseException:
        print(f"[acceptance] {number:02d} {title}: FAIL", file=sys.__stdout__)
        raise
    print(f"[acceptance] {number:02d} {title}: PASS", file=sys.__stdout__)


def test_01_mask_algebra_suite():
    with criterion(1, "mask algebra (1000 randomized masks, oracle 1e-6)"):
        start = time.monotonic()
        rng = np.random.default_rng(1001)
        for _ in range(1000):
            mask, region_set, parsed = random_protection_setup(rng)
            w, h = mask.grid
            d = int(rng.integers(3, 9))
            q = rng.standard_normal((w * h, d))
            k = rng.standard_normal((parsed.token_count, d))
            v = rng.standard_normal((parsed.token_count, d))

            _, attn = protected_attention(q, k, v, mask, mask.grid)
            blocked = mask.values < 0

            # (a) masked entries are exactly zero
            assert (attn.values[blocked] == 0.0).all()

            # (b) matches the column-deletion softmax oracle within 1e-6
            want = attention_by_column_deletion(q, k, d, blocked)
            assert np.abs(attn.values - want).max() < 1e-6

            # (c) rows outside every region are bit-identical to unmasked
            plain = attention(q, k, d, kind="cross", grid=mask.grid)
            outside = ~np.logical_or.reduce(
                [r.reshape(-1) for r in region_set.regions]
            )
            assert np.array_equal(attn.values[outside], plain.values[outside])
        assert time.monotonic() - start < 60.0


def test_02_extraction_oracle_equivalence():
    with criterion(2, "extraction equals brute-force chain on 100 random stacks"):
        start = time.monotonic()
        rng = np.random.default_rng(2002)
        from test_extraction import random_stack

        for _ in range(100):
            n_concepts = int(rng.integers(2, 5))
            records, parsed, spans = random_stack(rng, (8, 8), n_concepts)
            rs = extract(records, parsed, ExtractionConfig(s_ca=0.9, s_sa=0.2))
            anchors, regions = extract_regions_bruteforce(
                [r.cross.values for r in records],
                [r.self_map.values for r in records],
                spans,
                s_ca=0.9,
                s_sa=0.2,
            )
            for got, want in zip(rs.anchors, anchors):
                assert np.array_equal(got.reshape(-1), want)
            for got, want in zip(rs.regions, regions):
                assert np.array_equal(got.reshape(-1), want)
        assert time.monotonic() - start < 60.0


def test_03_synthetic_entanglement_recovery():
    with criterion(3, "entangled scene: anchored IoU >= 0.9, direct@0.9 too small"):
        scene = two_blob_scene()
        rs = extract(scene.records, scene.parsed, ExtractionConfig(s_ca=0.9, s_sa=0.2))
        assert rs.n == 2
        assert not (rs.regions[0] & rs.regions[1]).any()
        for region, gt in zip(rs.regions, scene.ground_truth):
            assert iou(region, gt) >= 0.9

        direct = direct_cross_regions(scene.records, scene.parsed, 0.9)
        for mask, gt in zip(direct, scene.ground_truth):
            assert mask.sum() < 0.5 * gt.sum()  # far too small to act as a region
            assert iou(mask, gt) < 0.9


def test_04_threshold_trend_at_desk_scale():
    with criterion(4, "anchored >= direct at every threshold in {0.1..0.5}"):
        scene = two_blob_scene()
        thresholds = [0.1, 0.2, 0.3, 0.4, 0.5]
        report = comparison_sweep(scene, thresholds)
        anchored = {p.s_sa: p.score for p in report.curve(MODE_ANCHORED)}
        direct = {p.s_ca: p.score for p in report.curve(MODE_DIRECT)}
        for s in thresholds:
            assert anchored[s] >= direct[s], (s, anchored[s], direct[s])


def test_05_empty_mask_equivalence_ten_seeds():
    with criterion(5, "zero-mask protected run bit-identical for 10 seeds"):
        prompt = "a red car and a blue bench"
        backend = ToyDenoiser()
        parsed = map_to_tokens(parse_prompt(prompt), backend.tokenize(prompt).pairs)
        w, h = backend.grid
        zero = build_manual_mask(
            [np.zeros((h, w), bool) for _ in parsed.concepts],
            [[] for _ in parsed.concepts],
            parsed.token_count,
            (w, h),
        )
        for seed in range(10):
            cfg = PipelineConfig(seed=seed)
            records, x = pass1_record(cfg, parsed, backend)
            protected = pass2_protected(cfg, parsed, backend, zero, records, x_noise=x)
            baseline = plain_generate(cfg, prompt, backend)
            assert np.array_equal(protected.latent, baseline.latent)
            assert np.array_equal(protected.image, baseline.image)


def test_06_cost_accounting():
    with criterion(6, "protected generation costs exactly T + T_s steps"):
        backend = ToyDenoiser(grid=(8, 8))
        for total, protection in ((20, 2), (6, 1), (5, 5)):
            cfg = PipelineConfig(total_steps=total, protection_steps=protection, seed=1)
            result = generate("a red car and a blue bench", cfg, backend)
            assert result.diagnostics["protection_active"]
            assert result.diagnostics["backend_steps"] == total + protection
        default = PipelineConfig(seed=1)
        result = generate("a red car and a blue bench", default, backend)
        assert result.diagnostics["backend_steps"] == 22


def test_07_parser_round_trip():
    with criterion(7, "100% template round-trip on 100 prompts x 3 templates"):
        for template in (Template.CC500, Template.WEARING100, Template.ANIMALS100):
            dataset = generate_dataset(template, seed=7)
            assert len(dataset.prompts) == 100
            exact = sum(
                parse_template(item.text, template) == item.gold
                for item in dataset.prompts
            )
            assert exact == 100


def test_08_mask_structure_audit():
    with criterion(8, "mask structural invariants hold on 1000 random cases"):
        rng = np.random.default_rng(8008)
        for _ in range(1000):
            mask, region_set, parsed = random_protection_setup(rng)
            values = mask.values
            blocked = values < 0
            w, h = mask.grid
            assert values.shape == (w * h, parsed.token_count)

            # every row keeps at least one open column
            assert (~blocked).any(axis=1).all()
            # special tokens are never blocked anywhere
            for s in parsed.special_token_indices:
                assert not blocked[:, s].any()
            # rows outside all regions are fully open
            union = np.zeros(w * h, dtype=bool)
            for r in region_set.regions:
                union |= r.reshape(-1)
            assert not blocked[~union].any()
            # rows inside region k block exactly the other concepts' tokens,
            # and never non-concept (shared) tokens
            concepts = sorted(parsed.concepts, key=lambda c: c.index)
            all_spans = set()
            for c in concepts:
                all_spans |= c.all_indices()
            for k, region in enumerate(region_set.regions):
                rows = region.reshape(-1)
                if not rows.any():
                    continue
                expected = set()
                for j, c in enumerate(concepts):
                    if j != k:
                        expected |= c.all_indices()
                block_cols = set(np.flatnonzero(blocked[rows].any(axis=0)))
                assert block_cols == expected
                assert not (block_cols - all_spans)  # shared words stay open


def test_09_protocol_fidelity():
    with criterion(9, "question format and two-round script match goldens"):
        cc = parse_template("a red car and a blue bench", Template.CC500)
        assert blip_vqa_questions(cc) == ["red car?", "blue bench?"]
        animals = parse_template(
            "a blue coat bear and a red coat mouse", Template.ANIMALS100
        )
        assert blip_vqa_questions(animals) == ["blue coat bear?", "red coat mouse?"]

        script = internvl_protocol("a red car and a blue bench")
        assert script.round1 == (DATA / "internvl_round1_golden.txt").read_text("utf-8")
        assert script.round2 == (DATA / "internvl_round2_golden.txt").read_text("utf-8")
        assert "100: the image perfectly matches" in script.round2


def test_10_manifest_determinism(tmp_path):
    with criterion(10, "manifest rerun reproduces identical artifact hashes"):
        out = tmp_path / "run"
        assert (
            cli_main(
                [
                    "generate", "--prompt", "a red car and a blue bench",
                    "--seed", "13", "--steps", "6", "--out", str(out), "--dump-attn",
                ]
            )
            == 0
        )
        assert cli_main(["rerun", str(out / "manifest.json")]) == 0

        manifest = json.loads((out / "manifest.json").read_text())
        replay = json.loads((out / "rerun" / "manifest.json").read_text())
        assert manifest["artifacts"] == replay["artifacts"]
        for name, digest in manifest["artifacts"].items():
            assert hashlib.sha256((out / name).read_bytes()).hexdigest() == digest
