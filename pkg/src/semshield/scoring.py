"""Question generation and pluggable image/text consistency scorers.

Two scoring protocols are emitted: per-concept probability questions
("red car?") and a two-round describe-then-score script for a visual
language model.  Real VQA models live behind a remote client with a
small JSON wire format; desk-scale runs use a stub that scores region
quality directly against known ground truth.
"""

from __future__ import annotations

import base64
import io
import json
import re
from dataclasses import dataclass, field
from typing import Callable, Protocol, Sequence

import numpy as np

from .attention import AttentionRecord, resample_mask
from .errors import MalformedResponse
from .prompts import ParsedPrompt
from .protection import ProtectionMask

_ROUND1 = (
    "You are my assistant to identify the animals or objects in the image "
    "and their attributes. Briefly describe the image within 50 words."
)

_ROUND2 = (
    "According to the image and your previous answer, evaluate how well "
    "the image aligns with the text prompt: {prompt}.\n"
    "100: the image perfectly matches the content of the text prompt, "
    "with no discrepancies.\n"
    "80: the image portrayed most of the actions, events and relationships "
    "but with minor discrepancies.\n"
    "60: the image depicted some elements in the text prompt, but ignored "
    "some key parts or details.\n"
    "40: the image did not depict any actions or events that match the text.\n"
    "20: the image failed to convey the full scope in the text prompt.\n"
    "Provide your analysis and explanation in JSON format with the "
    "following keys: explanation (within 20 words),score (e.g., 85)."
)


def blip_vqa_questions(parsed: ParsedPrompt) -> list[str]:
    """One existence/attribute question per concept: "[attributes] [noun]?".

    Attributes keep prompt order; a concept without attributes degrades
    to the bare noun question.  The per-prompt score is the mean of the
    per-question probabilities.
    """
    questions = []
    for c in parsed.concepts:
        words = [a.surface for a in c.attributes] + [c.concept.surface]
        questions.append(" ".join(words) + "?")
    return questions


@dataclass(frozen=True)
class TwoRoundScript:
    """The describe-then-score interrogation script."""

    round1: str
    round2: str


def internvl_protocol(prompt: str) -> TwoRoundScript:
    """Emit the two-round scoring script for a prompt, verbatim."""
    return TwoRoundScript(round1=_ROUND1, round2=_ROUND2.format(prompt=prompt))


_JSON_BLOCK = re.compile(r"\{.*\}", re.DOTALL)


def parse_score_response(text: str) -> float:
    """Parse the round-2 JSON answer; clamp the score to [0, 100].

    Raises:
        MalformedResponse: the text holds no JSON object with a numeric
        ``score`` key.
    """
    candidate = text
    try:
        payload = json.loads(candidate)
    except (json.JSONDecodeError, TypeError):
        m = _JSON_BLOCK.search(text or "")
        if not m:
            raise MalformedResponse(f"no JSON object in response: {text!r}")
        try:
            payload = json.loads(m.group())
        except json.JSONDecodeError as exc:
            raise MalformedResponse(f"unparseable JSON in response: {text!r}") from exc
    if not isinstance(payload, dict) or "score" not in payload:
        raise MalformedResponse(f"response JSON lacks a 'score' key: {text!r}")
    try:
        score = float(payload["score"])
    except (TypeError, ValueError) as exc:
        raise MalformedResponse(f"non-numeric score: {payload['score']!r}") from exc
    return float(min(max(score, 0.0), 100.0))


@dataclass
class ScoreItem:
    """Everything a scorer might need about one generated item."""

    prompt: str
    image: np.ndarray | None = None
    questions: list[str] = field(default_factory=list)
    regions: list[np.ndarray] | None = None
    ground_truth: list[np.ndarray] | None = None
    mask: ProtectionMask | None = None
    records: list[AttentionRecord] | None = None


class ScorerClient(Protocol):
    """Stateless per-call scorer; implementations must bound their runtime."""

    name: str

    def score(self, item: ScoreItem) -> float: ...


class StubScorer:
    """Desk-scale oracle scorer; no learned models involved.

    With ground-truth regions it returns the mean IoU of the produced
    regions, standing in for VQA quality on synthetic scenes.  Without
    ground truth it falls back to an attention-compliance proxy: one
    minus the mean cross-attention mass that protected positions still
    spend on their blocked tokens (1.0 when shielding is airtight).
    """

    name = "stub"

    def score(self, item: ScoreItem) -> float:
        if item.ground_truth is not None and item.regions is not None:
            from .scenario import iou

            pairs = zip(item.regions, item.ground_truth)
            return float(np.mean([iou(r, g) for r, g in pairs]))
        if item.mask is not None and item.records:
            return self._compliance(item.mask, item.records)
        return 0.0

    @staticmethod
    def _compliance(mask: ProtectionMask, records: Sequence[AttentionRecord]) -> float:
        leaks = []
        for rec in records:
            grid = rec.cross.grid
            for region, tokens in zip(mask.region_masks, mask.blocked_tokens):
                if not tokens or not region.any():
                    continue
                rows = resample_mask(region, grid).reshape(-1)
                if not rows.any():
                    continue
                sub = rec.cross.values[rows][:, list(tokens)]
                leaks.append(float(sub.sum(axis=1).mean()))
        if not leaks:
            return 0.0
        return float(min(max(1.0 - np.mean(leaks), 0.0), 1.0))


Transport = Callable[[dict], dict]


class RemoteScorer:
    """Client for a scorer service speaking the documented JSON format.

    Request: ``{"image": <base64 PNG or null>, "text": str, "round": int}``;
    response: ``{"text": str}``.  ``protocol`` selects question semantics:
    ``"blip"`` sends one round-0 request per question and parses each
    response text as a probability; ``"internvl"`` runs the two-round
    script and parses the final JSON answer.  ``transport`` is any
    callable mapping request to response (the default posts JSON over
    HTTP with a bounded timeout and retry count).
    """

    def __init__(
        self,
        url: str | None = None,
        protocol: str = "blip",
        transport: Transport | None = None,
        timeout: float = 30.0,
        retries: int = 2,
    ):
        if protocol not in ("blip", "internvl"):
            raise ValueError(f"unknown scorer protocol {protocol!r}")
        if transport is None and url is None:
            raise ValueError("need a service url or an explicit transport")
        self.protocol = protocol
        self.name = f"remote-{protocol}"
        self.timeout = timeout
        self.retries = retries
        self._transport = transport or self._http_transport(url)

    def _http_transport(self, url: str) -> Transport:
        def post(request: dict) -> dict:
            import urllib.request

            data = json.dumps(request).encode("utf-8")
            last: Exception | None = None
            for _ in range(self.retries + 1):
                try:
                    req = urllib.request.Request(
                        url, data=data, headers={"Content-Type": "application/json"}
                    )
                    with urllib.request.urlopen(req, timeout=self.timeout) as resp:
                        return json.loads(resp.read().decode("utf-8"))
                except Exception as exc:
                    last = exc
            raise MalformedResponse(f"scorer service unreachable: {last}")

        return post

    def score(self, item: ScoreItem) -> float:
        image = _encode_image(item.image) if item.image is not None else None
        if self.protocol == "blip":
            if not item.questions:
                raise MalformedResponse("blip scoring needs at least one question")
            probs = []
            for q in item.questions:
                resp = self._transport({"image": image, "text": q, "round": 0})
                probs.append(_parse_probability(resp))
            return float(np.mean(probs))
        script = internvl_protocol(item.prompt)
        self._transport({"image": image, "text": script.round1, "round": 1})
        resp = self._transport({"image": image, "text": script.round2, "round": 2})
        if "text" not in resp:
            raise MalformedResponse(f"response lacks 'text': {resp!r}")
        return parse_score_response(resp["text"])


def _parse_probability(resp: dict) -> float:
    try:
        value = float(str(resp["text"]).strip())
    except (KeyError, ValueError, TypeError) as exc:
        raise MalformedResponse(f"expected a probability, got {resp!r}") from exc
    if not (0.0 <= value <= 1.0):
        raise MalformedResponse(f"probability out of range: {value}")
    return value


def _encode_image(image: np.ndarray) -> str:
    from PIL import Image

    buf = io.BytesIO()
    Image.fromarray(np.asarray(image, dtype=np.uint8)).save(buf, format="PNG")
    return base64.b64encode(buf.getvalue()).decode("ascii")
