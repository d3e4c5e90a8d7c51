"""Additive token masks that shield concept regions in cross-attention.

For every latent position inside concept k's region, the tokens of every
*other* concept (noun and attributes alike) are excluded from the
softmax; shared words, articles and special tokens are never touched, so
global context always survives.  Positions outside all regions attend
normally.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .attention import MASK_NEG, AttnMap, Grid, attention, resample_mask
from .errors import InvalidAssignment, OverlapError
from .extraction import RegionSet
from .prompts import ParsedPrompt


@dataclass
class ProtectionMask:
    """Region/token exclusion table realized as an additive {0, -inf} mask.

    ``region_masks[k]`` is a boolean ``(h, w)`` grid (pairwise disjoint);
    ``blocked_tokens[k]`` are the token columns excluded for positions in
    that region.  The additive matrix is materialized lazily per grid so
    one mask instance serves attention layers at any resolution.
    """

    region_masks: list[np.ndarray]
    blocked_tokens: list[tuple[int, ...]]
    token_count: int
    grid: Grid
    labels: list[str] = field(default_factory=list)
    blocked_surfaces: list[tuple[str, ...]] = field(default_factory=list)

    def __post_init__(self):
        if len(self.region_masks) != len(self.blocked_tokens):
            raise ValueError("one blocked-token group per region required")
        w, h = self.grid
        union = np.zeros((h, w), dtype=int)
        for m in self.region_masks:
            if m.shape != (h, w):
                raise ValueError("region mask shape does not match grid")
            union += m.astype(int)
        if (union > 1).any():
            raise OverlapError("region masks overlap")
        for k, group in enumerate(self.blocked_tokens):
            group = tuple(sorted(set(int(t) for t in group)))
            self.blocked_tokens[k] = group
            if any(t < 0 or t >= self.token_count for t in group):
                raise InvalidAssignment(f"token index out of range in group {k}")
            if len(group) >= self.token_count and self.region_masks[k].any():
                raise InvalidAssignment(f"group {k} would mask every token")
        if not self.labels:
            self.labels = [f"region {k + 1}" for k in range(len(self.region_masks))]

    @property
    def n_regions(self) -> int:
        return len(self.region_masks)

    def values_at(self, grid: Grid) -> np.ndarray:
        """Additive mask at an arbitrary layer grid.

        The binary region masks are resampled (nearest neighbor) and the
        additive matrix rebuilt there; resampling the {0, -inf} matrix
        itself would be ill-defined.
        """
        w, h = grid
        out = np.zeros((w * h, self.token_count), dtype=np.float64)
        for region, group in zip(self.region_masks, self.blocked_tokens):
            if not group:
                continue
            rows = resample_mask(region, grid).reshape(-1)
            out[np.ix_(rows, np.array(group, dtype=int))] = MASK_NEG
        return out

    @property
    def values(self) -> np.ndarray:
        """Additive mask at the canonical grid, shape (w*h, token_count)."""
        return self.values_at(self.grid)

    def is_noop(self) -> bool:
        return all(not g or not m.any() for g, m in zip(self.blocked_tokens, self.region_masks))

    def describe(self) -> str:
        """Per-region token table for CLI inspection."""
        lines = []
        for k in range(self.n_regions):
            cells = int(self.region_masks[k].sum())
            shown = (
                ", ".join(self.blocked_surfaces[k])
                if k < len(self.blocked_surfaces) and self.blocked_surfaces[k]
                else ", ".join(str(t) for t in self.blocked_tokens[k]) or "(none)"
            )
            lines.append(f"{self.labels[k]} [{cells} cells] masks: {shown}")
        return "\n".join(lines) if lines else "(no protected regions)"


def blocked_token_groups(
    parsed: ParsedPrompt,
) -> tuple[list[tuple[int, ...]], list[tuple[str, ...]], list[str]]:
    """Per-concept exclusion groups: the union of every *other* concept's
    noun and attribute token indices, plus their surfaces and labels."""
    concepts = sorted(parsed.concepts, key=lambda c: c.index)
    index_sets = [c.all_indices() for c in concepts]
    blocked: list[tuple[int, ...]] = []
    surfaces: list[tuple[str, ...]] = []
    for k in range(len(concepts)):
        other: set[int] = set()
        surf: list[str] = []
        for j, c in enumerate(concepts):
            if j == k:
                continue
            other |= index_sets[j]
            surf.append(c.concept.surface)
            surf.extend(a.surface for a in c.attributes)
        blocked.append(tuple(sorted(other)))
        surfaces.append(tuple(surf))
    return blocked, surfaces, [c.concept.surface for c in concepts]


def build_protection_mask(regions: RegionSet, parsed: ParsedPrompt) -> ProtectionMask:
    """Derive the exclusion mask from extracted regions and the parse.

    Position i in region k blocks exactly the union of the other
    concepts' noun and attribute token indices; every other entry is
    zero.  With a single concept there is nothing to block and the mask
    is a no-op.
    """
    if regions.n != parsed.n_concepts:
        raise ValueError(f"{regions.n} regions for {parsed.n_concepts} concepts")
    blocked, surfaces, labels = blocked_token_groups(parsed)
    return ProtectionMask(
        region_masks=[r.copy() for r in regions.regions],
        blocked_tokens=blocked,
        token_count=parsed.token_count,
        grid=regions.grid,
        labels=labels,
        blocked_surfaces=surfaces,
    )


def build_manual_mask(
    region_masks: list[np.ndarray],
    token_groups: list[list[int]],
    token_count: int,
    grid: Grid,
    labels: list[str] | None = None,
    blocked_surfaces: list[tuple[str, ...]] | None = None,
) -> ProtectionMask:
    """Explicit region -> blocked-token assignment, bypassing extraction.

    Used by the token ablation experiments; raises
    :class:`InvalidAssignment` on out-of-range token indices and
    :class:`OverlapError` on overlapping regions.
    """
    return ProtectionMask(
        region_masks=[np.asarray(m, dtype=bool) for m in region_masks],
        blocked_tokens=[tuple(g) for g in token_groups],
        token_count=token_count,
        grid=grid,
        labels=list(labels or []),
        blocked_surfaces=list(blocked_surfaces or []),
    )


def protected_attention(
    queries: np.ndarray,
    keys: np.ndarray,
    values: np.ndarray,
    mask: ProtectionMask | None,
    layer_grid: Grid,
    out_weight: np.ndarray | None = None,
) -> tuple[np.ndarray, AttnMap]:
    """Cross-attention with the protection mask applied at this layer.

    Returns ``(features, attn_map)`` where features are
    ``attn @ values`` (optionally passed through ``out_weight``) and the
    map has blocked tokens at exact zero.  ``mask=None`` runs plain
    attention through the identical code path.
    """
    queries = np.asarray(queries, dtype=np.float64)
    additive = mask.values_at(layer_grid) if mask is not None else None
    attn = attention(
        queries,
        np.asarray(keys, dtype=np.float64),
        queries.shape[1],
        additive_mask=additive,
        kind="cross",
        grid=layer_grid,
    )
    features = attn.values @ np.asarray(values, dtype=np.float64)
    if out_weight is not None:
        features = features @ out_weight
    return features, attn
