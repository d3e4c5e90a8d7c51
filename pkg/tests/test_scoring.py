"""Question formats, the two-round protocol and scorer clients."""

from __future__ import annotations

from pathlib import Path

import numpy as np
import pytest

from semshield import (
    MalformedResponse,
    RemoteScorer,
    ScoreItem,
    StubScorer,
    Template,
    blip_vqa_questions,
    internvl_protocol,
    parse_score_response,
    parse_template,
)

DATA = Path(__file__).parent / "data"


def test_question_format_color_concept():
    parsed = parse_template("a red car and a blue bench", Template.CC500)
    assert blip_vqa_questions(parsed) == ["red car?", "blue bench?"]


def test_question_format_bare_concept():
    from semshield import parse_freeform

    parsed = parse_freeform("a photo of the sea")
    assert blip_vqa_questions(parsed) == ["photo?", "sea?"]


def test_question_format_multi_attribute_triple():
    parsed = parse_template("a blue coat bear and a red coat mouse", Template.ANIMALS100)
    assert blip_vqa_questions(parsed) == ["blue coat bear?", "red coat mouse?"]


def test_protocol_matches_golden_text():
    script = internvl_protocol("a red car and a blue bench")
    assert script.round1 == (DATA / "internvl_round1_golden.txt").read_text("utf-8")
    assert script.round2 == (DATA / "internvl_round2_golden.txt").read_text("utf-8")


def test_protocol_rubric_anchors_present():
    script = internvl_protocol("anything")
    assert "Briefly describe the image within 50 words" in script.round1
    assert "100: the image perfectly matches" in script.round2
    for anchor in ("80:", "60:", "40:", "20:"):
        assert anchor in script.round2
    assert "explanation (within 20 words),score (e.g., 85)" in script.round2
    assert "anything" in script.round2


def test_parse_score_response():
    assert parse_score_response('{"explanation": "ok", "score": 85}') == 85.0
    assert parse_score_response('{"explanation": "x", "score": 120}') == 100.0
    assert parse_score_response('{"explanation": "x", "score": -5}') == 0.0
    assert parse_score_response('noise {"explanation": "x", "score": "42"} tail') == 42.0


@pytest.mark.parametrize(
    "text",
    ['{"explanation": "missing"}', "not json at all", '{"score": "high"}', ""],
)
def test_parse_score_response_malformed(text):
    with pytest.raises(MalformedResponse):
        parse_score_response(text)


def test_stub_scorer_iou_path(scene):
    from semshield import ExtractionConfig, extract

    rs = extract(scene.records, scene.parsed, ExtractionConfig())
    item = ScoreItem(
        prompt=scene.prompt,
        regions=list(rs.regions),
        ground_truth=list(scene.ground_truth),
    )
    assert StubScorer().score(item) >= 0.9


def test_stub_scorer_compliance_path(toy_backend):
    from semshield import PipelineConfig, generate

    result = generate("a red car and a blue bench", PipelineConfig(seed=2), toy_backend)
    item = ScoreItem(
        prompt="a red car and a blue bench",
        mask=result.mask,
        records=result.records_pass2,
    )
    assert StubScorer().score(item) == 1.0


def test_stub_scorer_neutral_on_empty_item():
    assert StubScorer().score(ScoreItem(prompt="x")) == 0.0


def test_remote_scorer_blip_protocol():
    seen = []

    def transport(request):
        seen.append(request)
        return {"text": "0.25" if "car" in request["text"] else "0.75"}

    scorer = RemoteScorer(protocol="blip", transport=transport)
    item = ScoreItem(
        prompt="a red car and a blue bench",
        image=np.zeros((4, 4, 3), dtype=np.uint8),
        questions=["red car?", "blue bench?"],
    )
    assert scorer.score(item) == pytest.approx(0.5)
    assert [r["round"] for r in seen] == [0, 0]
    assert all(set(r) == {"image", "text", "round"} for r in seen)
    assert all(isinstance(r["image"], str) for r in seen)  # base64 payload


def test_remote_scorer_internvl_protocol():
    seen = []

    def transport(request):
        seen.append(request)
        if request["round"] == 1:
            return {"text": "a car and a bench"}
        return {"text": '{"explanation": "ok", "score": 85}'}

    scorer = RemoteScorer(protocol="internvl", transport=transport)
    item = ScoreItem(prompt="a red car and a blue bench")
    assert scorer.score(item) == 85.0
    assert [r["round"] for r in seen] == [1, 2]
    assert "evaluate how well the image aligns" in seen[1]["text"]


def test_remote_scorer_bad_probability():
    scorer = RemoteScorer(protocol="blip", transport=lambda r: {"text": "huge"})
    item = ScoreItem(prompt="p", questions=["q?"])
    with pytest.raises(MalformedResponse):
        scorer.score(item)


def test_remote_scorer_rejects_unknown_protocol():
    with pytest.raises(ValueError):
        RemoteScorer(protocol="clip", transport=lambda r: r)
    with pytest.raises(ValueError):
        RemoteScorer(protocol="blip")  # neither url nor transport
