"""Deterministic desk-scale denoiser backend.

A stand-in for a real text-to-image U-Net: two transformer blocks
(self-attention, cross-attention, feed-forward) over a small latent
grid, with fixed-seed random weights, a sub-word toy tokenizer and a
hash-seeded text embedder.  Nothing is trained; the point is a fully
reproducible backend whose every attention site is observable and
overridable through hooks, so the protection machinery can be verified
bit-for-bit.

Attention here is single-head on purpose: the recorded map is exactly
the map used in the computation, which makes record/override a lossless
round trip.  Multi-head adapters should reduce heads (see
``attention.apply_heads_mean``) before recording.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass
from typing import Callable, Protocol

import numpy as np

from .attention import AttnMap, Grid, attention, resample_indices
from .prompts import split_words

BOS_ID = 1
EOS_ID = 2
_PIECE_LEN = 4


@dataclass(frozen=True)
class ToyTokenization:
    ids: tuple[int, ...]
    ranges: tuple[tuple[int, int], ...]
    pieces: tuple[str, ...]

    @property
    def pairs(self) -> list[tuple[int, tuple[int, int]]]:
        """The ``(token_id, char_range)`` view consumed by map_to_tokens."""
        return list(zip(self.ids, self.ranges))

    def __len__(self) -> int:
        return len(self.ids)


class ToyTokenizer:
    """Deterministic sub-word tokenizer: words split into 4-char pieces.

    Longer words become multiple tokens ("suitcase" -> "suit", "case"),
    which exercises multi-token concept spans.  BOS/EOS get empty char
    ranges, marking them as special tokens.
    """

    def tokenize(self, prompt: str) -> ToyTokenization:
        ids = [BOS_ID]
        ranges: list[tuple[int, int]] = [(0, 0)]
        pieces = ["<s>"]
        for word in split_words(prompt):
            for off in range(0, len(word.text), _PIECE_LEN):
                piece = word.text[off : off + _PIECE_LEN]
                ids.append(self.piece_id(piece))
                ranges.append((word.start + off, word.start + off + len(piece)))
                pieces.append(piece)
        ids.append(EOS_ID)
        ranges.append((len(prompt), len(prompt)))
        pieces.append("</s>")
        return ToyTokenization(tuple(ids), tuple(ranges), tuple(pieces))

    @staticmethod
    def piece_id(piece: str) -> int:
        return (zlib.crc32(piece.lower().encode("utf-8")) % 50000) + 10


class AttentionHooks(Protocol):
    """What a backend exposes per attention site.

    ``record(layer, kind, attn_map)`` sees the map actually used;
    ``cross_mask(layer, grid)`` may return an additive {0, -inf} matrix
    for the cross-attention logits; ``self_override(layer, grid)`` may
    return a replacement self-attention map.
    """

    record: Callable[[str, str, AttnMap], None] | None
    cross_mask: Callable[[str, Grid], np.ndarray | None] | None
    self_override: Callable[[str, Grid], np.ndarray | None] | None


@dataclass
class Hooks:
    record: Callable[[str, str, AttnMap], None] | None = None
    cross_mask: Callable[[str, Grid], np.ndarray | None] | None = None
    self_override: Callable[[str, Grid], np.ndarray | None] | None = None


class DenoiserBackend(Protocol):
    """Contract every denoiser backend (toy or real adapter) satisfies."""

    def tokenize(self, prompt: str) -> ToyTokenization: ...

    def embed_tokens(self, ids: tuple[int, ...]) -> np.ndarray: ...

    def latent_shape(self) -> tuple[int, int, int]: ...

    def layer_grids(self) -> dict[str, Grid]: ...

    def predict(
        self, z: np.ndarray, text_emb: np.ndarray, t: int, hooks: AttentionHooks | None
    ) -> np.ndarray: ...

    def decode(self, z: np.ndarray) -> np.ndarray: ...


@dataclass
class _Block:
    """Weights of one transformer block (single-head)."""

    grid: Grid
    wq_s: np.ndarray
    wk_s: np.ndarray
    wv_s: np.ndarray
    wo_s: np.ndarray
    wq_c: np.ndarray
    wk_c: np.ndarray
    wv_c: np.ndarray
    wo_c: np.ndarray
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray


class ToyDenoiser:
    """Two blocks at (w, h) and (w/2, h/2); see module docstring."""

    def __init__(
        self,
        grid: Grid = (16, 16),
        channels: int = 8,
        text_dim: int = 16,
        weight_seed: int = 1234,
        embed_seed: int = 99,
    ):
        if grid[0] % 2 or grid[1] % 2:
            raise ValueError("grid must be even so the inner block can pool 2x2")
        self.grid = grid
        self.channels = channels
        self.text_dim = text_dim
        self.embed_seed = embed_seed
        self.tokenizer = ToyTokenizer()
        self._embed_cache: dict[int, np.ndarray] = {}

        rng = np.random.default_rng(weight_seed)
        inner = (grid[0] // 2, grid[1] // 2)
        self.blocks: dict[str, _Block] = {
            "block0": self._init_block(rng, grid),
            "block1": self._init_block(rng, inner),
        }
        c = channels
        self.w_out = rng.standard_normal((c, c)) * (0.5 / np.sqrt(c))

    def _init_block(self, rng: np.random.Generator, grid: Grid) -> _Block:
        c, td = self.channels, self.text_dim
        s = 0.5 / np.sqrt(c)
        return _Block(
            grid=grid,
            wq_s=rng.standard_normal((c, c)) * s,
            wk_s=rng.standard_normal((c, c)) * s,
            wv_s=rng.standard_normal((c, c)) * s,
            wo_s=rng.standard_normal((c, c)) * s,
            wq_c=rng.standard_normal((c, c)) * s,
            wk_c=rng.standard_normal((td, c)) * (0.5 / np.sqrt(td)),
            wv_c=rng.standard_normal((td, c)) * (0.5 / np.sqrt(td)),
            wo_c=rng.standard_normal((c, c)) * s,
            w1=rng.standard_normal((c, 2 * c)) * s,
            b1=rng.standard_normal(2 * c) * 0.1,
            w2=rng.standard_normal((2 * c, c)) * (0.5 / np.sqrt(2 * c)),
        )

    # --- backend surface -------------------------------------------------

    def tokenize(self, prompt: str) -> ToyTokenization:
        return self.tokenizer.tokenize(prompt)

    def embed_tokens(self, ids) -> np.ndarray:
        """Deterministic per-id embedding vectors (seeded by the id)."""
        rows = []
        for tid in ids:
            vec = self._embed_cache.get(tid)
            if vec is None:
                vec = np.random.default_rng((self.embed_seed, tid)).standard_normal(
                    self.text_dim
                )
                self._embed_cache[tid] = vec
            rows.append(vec)
        return np.stack(rows) if rows else np.zeros((0, self.text_dim))

    def latent_shape(self) -> tuple[int, int, int]:
        w, h = self.grid
        return (h, w, self.channels)

    def layer_grids(self) -> dict[str, Grid]:
        return {name: blk.grid for name, blk in self.blocks.items()}

    def predict(self, z, text_emb, t, hooks=None) -> np.ndarray:
        h, w, c = self.latent_shape()
        x = np.asarray(z, dtype=np.float64).reshape(h * w, c)
        x = x + _time_embedding(t, c)

        x0 = self._block("block0", x, text_emb, hooks)
        pooled = _pool2(x0, self.blocks["block0"].grid)
        x1 = self._block("block1", pooled, text_emb, hooks)
        up = _unpool(x1, self.blocks["block1"].grid, self.blocks["block0"].grid)
        out = (x0 + up) @ self.w_out
        return out.reshape(h, w, c)

    def decode(self, z: np.ndarray) -> np.ndarray:
        """Identity-reshape decode: latent channels to an 8-bit RGB image."""
        h, w, _ = self.latent_shape()
        rgb = np.asarray(z, dtype=np.float64).reshape(h, w, -1)[:, :, :3]
        lo, hi = rgb.min(), rgb.max()
        if hi == lo:
            return np.zeros((h, w, 3), dtype=np.uint8)
        return np.round((rgb - lo) / (hi - lo) * 255).astype(np.uint8)

    # --- internals --------------------------------------------------------

    def _block(self, name: str, x: np.ndarray, emb: np.ndarray, hooks) -> np.ndarray:
        blk = self.blocks[name]
        c = self.channels

        # self-attention (optionally overridden with a stored map)
        q, k, v = x @ blk.wq_s, x @ blk.wk_s, x @ blk.wv_s
        self_map = attention(q, k, c, kind="self", grid=blk.grid)
        if hooks is not None and hooks.self_override is not None:
            replacement = hooks.self_override(name, blk.grid)
            if replacement is not None:
                self_map = AttnMap(values=replacement, grid=blk.grid, kind="self")
        if hooks is not None and hooks.record is not None:
            hooks.record(name, "self", self_map)
        x = x + (self_map.values @ v) @ blk.wo_s

        # cross-attention (optionally shielded with an additive mask)
        q = x @ blk.wq_c
        k, v = emb @ blk.wk_c, emb @ blk.wv_c
        additive = None
        if hooks is not None and hooks.cross_mask is not None:
            additive = hooks.cross_mask(name, blk.grid)
        cross_map = attention(q, k, c, additive_mask=additive, kind="cross", grid=blk.grid)
        if hooks is not None and hooks.record is not None:
            hooks.record(name, "cross", cross_map)
        x = x + (cross_map.values @ v) @ blk.wo_c

        # feed-forward
        return x + np.tanh(x @ blk.w1 + blk.b1) @ blk.w2


def _time_embedding(t: int, channels: int) -> np.ndarray:
    freqs = np.exp(-np.arange(channels) / max(channels - 1, 1) * 4.0)
    phase = (t + 1) * freqs
    emb = np.where(np.arange(channels) % 2 == 0, np.sin(phase), np.cos(phase))
    return emb * 0.3


def _pool2(x: np.ndarray, grid: Grid) -> np.ndarray:
    """2x2 mean pooling over the grid."""
    w, h = grid
    c = x.shape[1]
    img = x.reshape(h, w, c)
    return img.reshape(h // 2, 2, w // 2, 2, c).mean(axis=(1, 3)).reshape(-1, c)


def _unpool(x: np.ndarray, src: Grid, dst: Grid) -> np.ndarray:
    idx = resample_indices(src, dst)
    return x[idx]
