"""Recover concept regions from entangled attention, step by step.

The synthetic scene encodes the classic failure: the "mouse" token's
cross-attention is bright over BOTH animals, so thresholding it directly
either grabs both bodies (moderate threshold) or only a tiny bright core
(high threshold).  Anchoring on the core and reading the self-attention
columns recovers the full, correct region.

Writes heatmaps into demos/out/extraction/.
"""

from pathlib import Path

from semshield import ExtractionConfig, extract, direct_cross_regions, iou, two_blob_scene
from semshield.attention import aggregate, minmax_norm
from semshield.extraction import anchor_points, cross_normalize
from semshield import viz

OUT = Path(__file__).parent / "out" / "extraction"
scene = two_blob_scene()
w, h = scene.grid


def ascii_mask(mask):
    return "\n".join("".join("#" if cell else "." for cell in row) for row in mask)


print(f"prompt: {scene.prompt!r}")
print("concepts:", [c.concept.surface for c in scene.parsed.concepts])

# Stage 0: what direct thresholding of cross-attention sees.
for s in (0.5, 0.9):
    masks = direct_cross_regions(scene.records, scene.parsed, s)
    areas = [int(m.sum()) for m in masks]
    print(f"\ndirect cross-attention threshold {s}: areas {areas} "
          f"(ground truth {[int(g.sum()) for g in scene.ground_truth]})")
    print(ascii_mask(masks[1]))  # the entangled concept

# Stage 1: anchors from a high threshold survive only in the true core.
agg_cross = aggregate(scene.records, "cross")
agg_self = aggregate(scene.records, "self")
anchors = [anchor_points(agg_cross, c, 0.9) for c in scene.parsed.concepts]
print("\nanchor cells per concept:", [int(a.sum()) for a in anchors])

# Stage 2: self-attention columns at the anchors, competitors subtracted.
vectors = cross_normalize(agg_self, anchors)

# Stage 3: the full pipeline, low threshold on the cleaned-up vectors.
regions = extract(scene.records, scene.parsed, ExtractionConfig(s_ca=0.9, s_sa=0.2))
for concept, region, gt in zip(scene.parsed.concepts, regions.regions, scene.ground_truth):
    print(f"\nregion for {concept.concept.surface!r} "
          f"(IoU vs ground truth: {iou(region, gt):.3f})")
    print(ascii_mask(region))

# Heatmaps for the entangled concept, before and after cleanup.
mouse = scene.parsed.concepts[1]
column = minmax_norm(agg_cross.values[:, mouse.concept.start : mouse.concept.end].mean(axis=1))
img, _ = viz.render_heatmap(column, scene.grid)
viz.save_image(img, OUT / "mouse_cross_attention.png")
img, _ = viz.render_heatmap(vectors[1], scene.grid)
viz.save_image(img, OUT / "mouse_cross_normalized_self.png")
img, _ = viz.render_mask_overlay(column, regions.regions[1], scene.grid)
viz.save_image(img, OUT / "mouse_region_overlay.png")
print(f"\nheatmaps written to {OUT}")
