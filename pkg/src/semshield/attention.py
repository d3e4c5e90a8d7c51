"""Numeric attention kernels shared by extraction and protected denoising.

Conventions used throughout the library:

* a latent grid is ``(w, h)``; flat position ``i = y * w + x`` (row-major
  over a ``(h, w)`` 2-D array);
* attention maps are row-stochastic matrices with one row per latent
  position: cross maps have one column per prompt token, self maps one
  column per latent position;
* additive masks contain exactly two values, ``0`` for "keep" and
  ``MASK_NEG`` (the most negative finite float64, standing in for -inf)
  for "blocked"; blocked positions come out of the softmax as exact
  zeros.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import DegenerateRow, EmptySelection, ShapeMismatch

# realization of -inf: most negative finite value of the compute precision
MASK_NEG = float(np.finfo(np.float64).min)

Grid = tuple[int, int]


@dataclass
class AttnMap:
    """One attention map plus the grid its rows live on.

    ``values`` is ``(w*h, key_count)``; ``kind`` is ``"cross"`` or
    ``"self"``.  Row-stochasticity is a property of freshly computed
    (post-softmax) maps; aggregated or normalized maps reuse this
    container without it.
    """

    values: np.ndarray
    grid: Grid
    kind: str

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        w, h = self.grid
        if self.values.ndim != 2 or self.values.shape[0] != w * h:
            raise ShapeMismatch(
                f"map rows {self.values.shape} do not match grid {self.grid}"
            )
        if self.kind not in ("cross", "self"):
            raise ValueError(f"unknown map kind {self.kind!r}")
        if self.kind == "self" and self.values.shape[1] != w * h:
            raise ShapeMismatch("self map must be square over the grid")
        if np.any(self.values < 0):
            raise ValueError("attention values must be non-negative")

    @property
    def key_count(self) -> int:
        return self.values.shape[1]


@dataclass
class AttentionRecord:
    """Cross and self maps captured at one (step, layer) site."""

    step: int
    layer: str
    cross: AttnMap
    self_map: AttnMap = field(repr=False)

    def __post_init__(self):
        if self.cross.grid != self.self_map.grid:
            raise ShapeMismatch("cross and self maps must share the layer grid")

    @property
    def grid(self) -> Grid:
        return self.cross.grid


def masked_softmax(logits: np.ndarray, additive_mask: np.ndarray | None = None) -> np.ndarray:
    """Row-wise softmax with an optional additive {0, -inf} mask.

    Rows without blocked entries follow the exact same arithmetic as the
    unmasked path, so their outputs are bit-identical to it.  Blocked
    entries are forced to exact 0 and the remaining entries renormalized.
    """
    logits = np.asarray(logits, dtype=np.float64)
    blocked = None
    if additive_mask is not None:
        additive_mask = np.asarray(additive_mask, dtype=np.float64)
        if additive_mask.shape != logits.shape:
            raise ShapeMismatch(
                f"mask shape {additive_mask.shape} != logits shape {logits.shape}"
            )
        blocked = additive_mask < 0
        dead = blocked.all(axis=1)
        if dead.any():
            raise DegenerateRow(f"row {int(np.argmax(dead))} has every key masked")
        # np.where instead of addition: adding MASK_NEG to a large negative
        # logit would overflow, while replacement is exact for a {0,-inf} mask
        logits = np.where(blocked, MASK_NEG, logits)

    # MASK_NEG minus a positive row max overflows to -inf, which exp maps
    # to the intended 0; silence only that benign overflow
    with np.errstate(over="ignore"):
        shifted = logits - logits.max(axis=1, keepdims=True)
        weights = np.exp(shifted)
    out = weights / weights.sum(axis=1, keepdims=True)

    if blocked is not None and blocked.any():
        rows = blocked.any(axis=1)
        patched = out[rows]
        patched[blocked[rows]] = 0.0
        patched /= patched.sum(axis=1, keepdims=True)
        out[rows] = patched
    return out


def attention(
    queries: np.ndarray,
    keys: np.ndarray,
    scale_dim: int,
    additive_mask: np.ndarray | None = None,
    kind: str = "cross",
    grid: Grid | None = None,
) -> AttnMap:
    """softmax((Q Kᵀ + mask) / sqrt(d)) as an :class:`AttnMap`.

    ``grid`` defaults to a degenerate ``(rows, 1)`` column layout when the
    queries do not live on a spatial grid (kernel-level tests).
    """
    queries = np.asarray(queries, dtype=np.float64)
    keys = np.asarray(keys, dtype=np.float64)
    if queries.shape[1] != scale_dim or keys.shape[1] != scale_dim:
        raise ShapeMismatch("queries/keys feature dim must equal scale_dim")
    logits = (queries @ keys.T) / np.sqrt(float(scale_dim))
    values = masked_softmax(logits, additive_mask)
    if grid is None:
        grid = (1, queries.shape[0]) if kind == "cross" else _square_grid(queries.shape[0])
    return AttnMap(values=values, grid=grid, kind=kind)


def _square_grid(n: int) -> Grid:
    side = int(round(np.sqrt(n)))
    if side * side == n:
        return (side, side)
    return (1, n)


def apply_heads_mean(per_head_maps: Sequence[AttnMap]) -> AttnMap:
    """Element-wise mean over per-head maps; rows stay stochastic."""
    if not per_head_maps:
        raise EmptySelection("no head maps given")
    first = per_head_maps[0]
    for m in per_head_maps[1:]:
        if m.values.shape != first.values.shape or m.grid != first.grid:
            raise ShapeMismatch("head maps disagree on shape or grid")
        if m.kind != first.kind:
            raise ShapeMismatch("head maps disagree on kind")
    stacked = np.stack([m.values for m in per_head_maps])
    return AttnMap(values=stacked.mean(axis=0), grid=first.grid, kind=first.kind)


def minmax_norm(values: np.ndarray) -> np.ndarray:
    """Whole-matrix (x - min) / (max - min); constant input maps to zeros."""
    values = np.asarray(values, dtype=np.float64)
    lo = values.min()
    hi = values.max()
    if hi == lo:
        return np.zeros_like(values)
    return (values - lo) / (hi - lo)


def resample_indices(src: Grid, dst: Grid) -> np.ndarray:
    """Flat nearest-neighbor index map from grid ``src`` into grid ``dst``.

    Uses the pixel-center convention ``src_i = floor((i + 0.5) * src/dst)``,
    which makes up-then-down round trips exact.
    """
    sw, sh = src
    dw, dh = dst
    xs = np.minimum((np.floor((np.arange(dw) + 0.5) * sw / dw)).astype(int), sw - 1)
    ys = np.minimum((np.floor((np.arange(dh) + 0.5) * sh / dh)).astype(int), sh - 1)
    return (ys[:, None] * sw + xs[None, :]).ravel()


def resample_mask(mask: np.ndarray, target: Grid) -> np.ndarray:
    """Nearest-neighbor resample of a binary (h, w) grid to ``target``."""
    mask = np.asarray(mask)
    sh, sw = mask.shape
    tw, th = target
    idx = resample_indices((sw, sh), target)
    return mask.ravel()[idx].reshape(th, tw)


def resample_attn(values: np.ndarray, src_grid: Grid, dst_grid: Grid, kind: str) -> np.ndarray:
    """Resample attention rows (and, for self maps, columns) across grids."""
    idx = resample_indices(src_grid, dst_grid)
    out = np.asarray(values, dtype=np.float64)[idx, :]
    if kind == "self":
        out = out[:, idx]
    return out


def aggregate(
    records: Iterable[AttentionRecord],
    kind: str,
    layer_filter: Callable[[str], bool] | None = None,
    step_range: tuple[int, int] | None = None,
    target_grid: Grid | None = None,
) -> AttnMap:
    """Mean over selected (step, layer) maps, then min-max normalized.

    Maps are first resampled to the canonical grid: ``target_grid`` when
    given, otherwise the smallest grid among the selected layers.

    Raises:
        EmptySelection: no record passes the filters.
    """
    selected = [
        r
        for r in records
        if (layer_filter is None or layer_filter(r.layer))
        and (step_range is None or step_range[0] <= r.step < step_range[1])
    ]
    if not selected:
        raise EmptySelection("no attention records pass the step/layer filter")

    if target_grid is None:
        target_grid = min((r.grid for r in selected), key=lambda g: g[0] * g[1])

    maps = []
    for r in selected:
        src = r.cross if kind == "cross" else r.self_map
        maps.append(resample_attn(src.values, src.grid, target_grid, kind))
    key_counts = {m.shape[1] for m in maps}
    if len(key_counts) != 1:
        raise ShapeMismatch(f"selected maps disagree on key count: {key_counts}")

    mean = np.stack(maps).mean(axis=0)
    return AttnMap(values=minmax_norm(mean), grid=target_grid, kind=kind)
