"""Concept region extraction from aggregated attention maps.

The chain: threshold each concept's aggregated cross-attention column at
a high value to get a handful of anchor points, read the aggregated
self-attention columns at those anchors (image positions that attend to
the anchors belong to the same object), subtract the competing concepts'
self-attention before re-normalizing so each concept is strongest in its
own region, then threshold low and resolve any remaining overlaps.

All extraction happens on one canonical grid; region masks are
nearest-neighbor resampled per attention layer at application time.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .attention import AttentionRecord, AttnMap, Grid, aggregate, minmax_norm
from .prompts import ConceptSpan, ParsedPrompt


@dataclass
class ExtractionConfig:
    """Thresholds and record selection for region extraction.

    ``s_ca`` is the high cross-attention (anchor) threshold, ``s_sa`` the
    low self-attention (region) threshold.  ``per_column_norm`` re-applies
    min-max per concept column before anchor thresholding so the high
    threshold is meaningful for dim concepts as well; set it to False to
    threshold the globally normalized map instead.
    """

    s_ca: float = 0.9
    s_sa: float = 0.2
    layer_filter: Callable[[str], bool] | None = None
    step_range: tuple[int, int] | None = None
    canonical_grid: Grid | None = None
    per_column_norm: bool = True

    def __post_init__(self):
        if not (0 < self.s_ca <= 1) or not (0 < self.s_sa <= 1):
            raise ValueError("thresholds must lie in (0, 1]")


@dataclass
class RegionSet:
    """Anchor masks and concept region masks on a shared grid.

    ``anchors[k]`` and ``regions[k]`` are boolean ``(h, w)`` arrays for
    concept k (0-based list positions); regions are pairwise disjoint
    after overlap resolution.  ``concept_index`` maps the 1-based concept
    index to its span.
    """

    anchors: list[np.ndarray]
    regions: list[np.ndarray]
    grid: Grid
    concept_index: dict[int, ConceptSpan] = field(default_factory=dict)

    def __post_init__(self):
        w, h = self.grid
        if len(self.anchors) != len(self.regions):
            raise ValueError("anchor/region count mismatch")
        for m in list(self.anchors) + list(self.regions):
            if m.shape != (h, w):
                raise ValueError(f"mask shape {m.shape} does not match grid {self.grid}")
        for m in self.anchors:
            if not m.any():
                raise ValueError("anchor masks must be nonempty")
        union = np.zeros((h, w), dtype=int)
        for m in self.regions:
            union += m.astype(int)
        if (union > 1).any():
            raise ValueError("regions must be pairwise disjoint")

    @property
    def n(self) -> int:
        return len(self.regions)


def concept_column(agg_cross: AttnMap, concept: ConceptSpan) -> np.ndarray:
    """Mean of the aggregated cross-attention over a concept's sub-word
    token columns (multi-token concepts average their span)."""
    span = concept.concept
    return agg_cross.values[:, span.start : span.end].mean(axis=1)


def anchor_points(
    agg_cross: AttnMap,
    concept: ConceptSpan,
    s_ca: float,
    per_column_norm: bool = True,
) -> np.ndarray:
    """High-threshold anchor mask for one concept, ``(h, w)`` boolean.

    Falls back to the singleton argmax position when nothing clears the
    threshold, so every concept always has at least one anchor.
    """
    w, h = agg_cross.grid
    col = concept_column(agg_cross, concept)
    if per_column_norm:
        col = minmax_norm(col)
    mask = col >= s_ca
    if not mask.any():
        mask = np.zeros_like(col, dtype=bool)
        mask[int(np.argmax(col))] = True
    return mask.reshape(h, w)


def self_column_mean(agg_self: AttnMap, anchor: np.ndarray) -> np.ndarray:
    """Mean over the self-attention columns selected by an anchor mask."""
    flat = anchor.reshape(-1)
    return agg_self.values[:, flat].mean(axis=1)


def cross_normalize(agg_self: AttnMap, anchors: Sequence[np.ndarray]) -> list[np.ndarray]:
    """Per-concept self-attention vectors with competitors subtracted.

    For n >= 2 concepts each vector is ``minmax(max(own - mean(others), 0))``;
    a single concept is only re-normalized (there is nothing to subtract).
    Returns one flat vector of length w*h per concept, values in [0, 1].
    """
    per_concept = [self_column_mean(agg_self, a) for a in anchors]
    n = len(per_concept)
    if n == 0:
        return []
    if n == 1:
        return [minmax_norm(per_concept[0])]
    stacked = np.stack(per_concept)
    out = []
    for k, own in enumerate(per_concept):
        others = stacked[np.arange(n) != k].sum(axis=0) / (n - 1)
        out.append(minmax_norm(np.maximum(own - others, 0.0)))
    return out


def concept_regions(
    cross_normed: Sequence[np.ndarray],
    s_sa: float,
    grid: Grid,
    anchors: Sequence[np.ndarray] | None = None,
    concept_index: dict[int, ConceptSpan] | None = None,
) -> RegionSet:
    """Threshold cross-normalized vectors into disjoint region masks.

    A position claimed by several concepts goes to the one with the
    larger cross-normalized value there; ties break toward the lower
    concept index.  A concept whose thresholded region is empty falls
    back to its anchor mask.  When ``anchors`` is omitted, singleton
    argmax anchors are derived from the vectors themselves.
    """
    w, h = grid
    vectors = [np.asarray(v, dtype=np.float64) for v in cross_normed]
    if anchors is None:
        anchors = []
        for v in vectors:
            a = np.zeros(w * h, dtype=bool)
            a[int(np.argmax(v))] = True
            anchors.append(a.reshape(h, w))
    anchors = [np.asarray(a, dtype=bool) for a in anchors]

    raw = []
    for v, a in zip(vectors, anchors):
        mask = v >= s_sa
        if not mask.any():
            mask = a.reshape(-1).copy()
        raw.append(mask)

    # overlap resolution: larger value wins, ties to the lower index
    regions = [np.zeros(w * h, dtype=bool) for _ in raw]
    if raw:
        stacked = np.stack(raw)
        values = np.stack(vectors)
        claimed = stacked.any(axis=0)
        scores = np.where(stacked, values, -np.inf)
        winner = np.argmax(scores, axis=0)  # argmax takes the lowest index on ties
        for k in range(len(raw)):
            regions[k] = claimed & (winner == k)

    return RegionSet(
        anchors=[a.copy() for a in anchors],
        regions=[r.reshape(h, w) for r in regions],
        grid=grid,
        concept_index=dict(concept_index or {}),
    )


def extract(
    records: Sequence[AttentionRecord],
    parsed: ParsedPrompt,
    cfg: ExtractionConfig | None = None,
) -> RegionSet:
    """Full extraction: aggregate -> anchors -> cross-normalize -> regions.

    Deterministic for fixed inputs.  Raises ``EmptySelection`` when no
    record passes the configured step/layer filters.
    """
    cfg = cfg or ExtractionConfig()
    agg_cross = aggregate(
        records, "cross", cfg.layer_filter, cfg.step_range, cfg.canonical_grid
    )
    agg_self = aggregate(
        records, "self", cfg.layer_filter, cfg.step_range, agg_cross.grid
    )
    anchors = [
        anchor_points(agg_cross, c, cfg.s_ca, cfg.per_column_norm)
        for c in parsed.concepts
    ]
    vectors = cross_normalize(agg_self, anchors)
    return concept_regions(
        vectors,
        cfg.s_sa,
        agg_cross.grid,
        anchors=anchors,
        concept_index={c.index: c for c in parsed.concepts},
    )


def direct_cross_regions(
    records: Sequence[AttentionRecord],
    parsed: ParsedPrompt,
    threshold: float,
    cfg: ExtractionConfig | None = None,
) -> list[np.ndarray]:
    """Baseline region extraction: threshold cross-attention directly.

    No anchors, no self-attention stage and no overlap resolution — the
    masks may overlap, which is exactly the weakness the anchored
    extraction is designed to fix.  Used by the threshold ablation sweep.
    """
    cfg = cfg or ExtractionConfig()
    agg_cross = aggregate(
        records, "cross", cfg.layer_filter, cfg.step_range, cfg.canonical_grid
    )
    w, h = agg_cross.grid
    out = []
    for c in parsed.concepts:
        col = concept_column(agg_cross, c)
        if cfg.per_column_norm:
            col = minmax_norm(col)
        out.append((col >= threshold).reshape(h, w))
    return out
