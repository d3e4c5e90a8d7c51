"""Synthetic attention scenarios with known ground truth.

The flagship scene mimics the classic entanglement failure: two objects
side by side, where one concept's cross-attention column lights up over
*both* objects (so thresholding it directly either grabs both regions or
only a tiny bright core), while self-attention stays coherent within
each object.  Ground-truth region masks are stored with the scene, so
extraction quality can be scored as plain IoU without any learned
scorer.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .attention import AttentionRecord, AttnMap, Grid
from .denoiser import ToyTokenizer
from .prompts import Template, map_to_tokens, parse_freeform, parse_template, ParsedPrompt


@dataclass
class SyntheticScene:
    """Attention records plus the ground truth they encode."""

    prompt: str
    parsed: ParsedPrompt
    records: list[AttentionRecord]
    ground_truth: list[np.ndarray]
    grid: Grid

    @property
    def n_concepts(self) -> int:
        return len(self.ground_truth)


def iou(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, dtype=bool)
    b = np.asarray(b, dtype=bool)
    union = np.logical_or(a, b).sum()
    if union == 0:
        return 1.0
    return float(np.logical_and(a, b).sum() / union)


def _block_mask(grid: Grid, x0, x1, y0, y1) -> np.ndarray:
    w, h = grid
    m = np.zeros((h, w), dtype=bool)
    m[y0 : y1 + 1, x0 : x1 + 1] = True
    return m


def two_blob_scene(
    grid: Grid = (16, 16),
    steps: int = 2,
    layers: tuple[str, ...] = ("block0",),
    seed: int = 7,
    jitter: float = 0.01,
) -> SyntheticScene:
    """Entangled two-concept scene on a single grid.

    Concept 1 ("bear") has a clean column: bright only over its own left
    blob, with a small very-bright core.  Concept 2 ("mouse") is
    entangled: its column is bright over both blobs, with a bright core
    inside its own right blob.  Direct thresholding of the mouse column
    therefore grabs both blobs at a moderate threshold and only the tiny
    core at a high one; the anchored self-attention route recovers the
    full right blob.
    """
    w, h = grid
    prompt = "a blue coat bear and a red coat mouse"
    parsed = parse_template(prompt, Template.ANIMALS100)
    tok = ToyTokenizer().tokenize(prompt)
    parsed = map_to_tokens(parsed, tok.pairs)
    token_count = parsed.token_count

    # two blobs with a margin; scaled to the grid
    def scaled(frac_lo, frac_hi, size):
        return int(round(frac_lo * size)), int(round(frac_hi * size)) - 1

    bx0, bx1 = scaled(1 / 16, 7 / 16, w)
    mx0, mx1 = scaled(9 / 16, 15 / 16, w)
    y0, y1 = scaled(4 / 16, 12 / 16, h)
    blob_bear = _block_mask(grid, bx0, bx1, y0, y1)
    blob_mouse = _block_mask(grid, mx0, mx1, y0, y1)
    cy = (y0 + y1) // 2
    core_bear = _block_mask(grid, (bx0 + bx1) // 2, (bx0 + bx1) // 2 + 1, cy, cy + 1)
    core_mouse = _block_mask(grid, (mx0 + mx1) // 2, (mx0 + mx1) // 2 + 1, cy, cy + 1)
    background = ~(blob_bear | blob_mouse)

    bear, mouse = parsed.concepts

    # designed per-token column profiles over the flat grid
    profiles = np.zeros((token_count, w * h))

    def paint(token_span, base: dict[str, float]):
        col = np.full(w * h, base.get("bg", 0.05))
        for name, mask, value in (
            ("bear", blob_bear, base.get("bear", 0.0)),
            ("mouse", blob_mouse, base.get("mouse", 0.0)),
            ("core_bear", core_bear, base.get("core_bear", 0.0)),
            ("core_mouse", core_mouse, base.get("core_mouse", 0.0)),
        ):
            if value:
                col[mask.reshape(-1)] = value
        for t in token_span.indices():
            profiles[t] = col

    paint(bear.concept, {"bear": 0.62, "core_bear": 1.0, "mouse": 0.10})
    # the entangled column: bright over both blobs
    paint(mouse.concept, {"mouse": 0.62, "core_mouse": 1.0, "bear": 0.58})
    for attr in bear.attributes:
        paint(attr, {"bear": 0.30})
    for attr in mouse.attributes:
        paint(attr, {"mouse": 0.30})

    # self-attention profile: rows attend mostly within their own blob
    flat_bear = blob_bear.reshape(-1)
    flat_mouse = blob_mouse.reshape(-1)
    flat_bg = background.reshape(-1)
    self_profile = np.zeros((w * h, w * h))
    for rows, spread in (
        (flat_bear, [(flat_bear, 0.75), (flat_mouse, 0.10), (flat_bg, 0.15)]),
        (flat_mouse, [(flat_mouse, 0.75), (flat_bear, 0.10), (flat_bg, 0.15)]),
        (flat_bg, [(flat_bg, 0.90), (flat_bear, 0.05), (flat_mouse, 0.05)]),
    ):
        row_vec = np.zeros(w * h)
        for cols, mass in spread:
            row_vec[cols] = mass / cols.sum()
        self_profile[rows] = row_vec

    rng = np.random.default_rng(seed)
    records = []
    for t in range(steps):
        for layer in layers:
            cross = profiles.T * 0.3  # leave headroom for the BOS/EOS columns
            cross = cross * (1.0 + jitter * rng.uniform(-1, 1, cross.shape))
            rest = 1.0 - cross.sum(axis=1)
            cross[:, 0] += rest / 2
            cross[:, token_count - 1] += rest / 2
            self_vals = self_profile * (
                1.0 + jitter * rng.uniform(-1, 1, self_profile.shape)
            )
            self_vals /= self_vals.sum(axis=1, keepdims=True)
            records.append(
                AttentionRecord(
                    step=t,
                    layer=layer,
                    cross=AttnMap(values=cross, grid=grid, kind="cross"),
                    self_map=AttnMap(values=self_vals, grid=grid, kind="self"),
                )
            )
    return SyntheticScene(
        prompt=prompt,
        parsed=parsed,
        records=records,
        ground_truth=[blob_bear, blob_mouse],
        grid=grid,
    )


def uniform_scene(grid: Grid = (8, 8), prompt: str = "a red car") -> SyntheticScene:
    """Degenerate scene: perfectly uniform attention, single concept."""
    w, h = grid
    parsed = parse_freeform(prompt)
    tok = ToyTokenizer().tokenize(prompt)
    parsed = map_to_tokens(parsed, tok.pairs)
    n_tok = parsed.token_count
    cross = AttnMap(values=np.full((w * h, n_tok), 1.0 / n_tok), grid=grid, kind="cross")
    self_map = AttnMap(values=np.full((w * h, w * h), 1.0 / (w * h)), grid=grid, kind="self")
    rec = AttentionRecord(step=0, layer="block0", cross=cross, self_map=self_map)
    return SyntheticScene(
        prompt=prompt,
        parsed=parsed,
        records=[rec],
        ground_truth=[np.zeros((h, w), dtype=bool) for _ in parsed.concepts],
        grid=grid,
    )
