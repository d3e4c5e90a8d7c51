"""Heatmap and mask rendering for attention inspection.

Rendering is PIL-only with a fixed built-in color map (dark blue through
red to yellow-white), so dumped images are comparable across machines
without depending on a plotting library's defaults.  Every render
returns the value range it displayed alongside the image.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image, ImageDraw

from .attention import Grid, resample_mask

_STOPS = np.array(
    [
        (0.00, (10, 10, 40)),
        (0.25, (60, 20, 110)),
        (0.50, (180, 40, 70)),
        (0.75, (250, 140, 30)),
        (1.00, (255, 250, 210)),
    ],
    dtype=object,
)


def _lut() -> np.ndarray:
    xs = np.array([s[0] for s in _STOPS], dtype=float)
    cols = np.array([s[1] for s in _STOPS], dtype=float)
    grid = np.linspace(0.0, 1.0, 256)
    lut = np.stack(
        [np.interp(grid, xs, cols[:, c]) for c in range(3)], axis=1
    )
    return np.round(lut).astype(np.uint8)


_LUT = _lut()


def colorize(values: np.ndarray) -> tuple[np.ndarray, dict]:
    """Map a 2-D array onto the fixed LUT; returns (rgb, {min, max})."""
    values = np.asarray(values, dtype=np.float64)
    lo, hi = float(values.min()), float(values.max())
    if hi == lo:
        idx = np.zeros(values.shape, dtype=int)
    else:
        idx = np.round((values - lo) / (hi - lo) * 255).astype(int)
    return _LUT[idx], {"min": lo, "max": hi}


def render_heatmap(
    values: np.ndarray,
    grid: Grid | None = None,
    upscale: int = 24,
    annotate: bool = True,
) -> tuple[Image.Image, dict]:
    """Render a flat or 2-D value field as an annotated heatmap.

    The legend text (and the returned metadata) carries the raw min/max
    of the stored values.
    """
    values = np.asarray(values, dtype=np.float64)
    if values.ndim == 1:
        if grid is None:
            raise ValueError("flat values need an explicit grid")
        w, h = grid
        values = values.reshape(h, w)
    rgb, meta = colorize(values)
    img = Image.fromarray(rgb, "RGB").resize(
        (values.shape[1] * upscale, values.shape[0] * upscale), Image.NEAREST
    )
    if annotate:
        img = _with_legend(img, f"min={meta['min']:.4g} max={meta['max']:.4g}")
    return img, meta


def _with_legend(img: Image.Image, text: str) -> Image.Image:
    bar = 14
    out = Image.new("RGB", (img.width, img.height + bar), (0, 0, 0))
    out.paste(img, (0, 0))
    ImageDraw.Draw(out).text((3, img.height + 2), text, fill=(255, 255, 255))
    return out


def render_mask_overlay(
    values: np.ndarray,
    mask: np.ndarray,
    grid: Grid | None = None,
    upscale: int = 24,
    tint=(0, 255, 120),
    alpha: float = 0.45,
) -> tuple[Image.Image, dict]:
    """Heatmap with a translucent tint over the masked cells."""
    values = np.asarray(values, dtype=np.float64)
    if values.ndim == 1:
        w, h = grid
        values = values.reshape(h, w)
    rgb, meta = colorize(values)
    mask2 = resample_mask(np.asarray(mask, dtype=bool), (values.shape[1], values.shape[0]))
    blended = rgb.astype(float)
    blended[mask2] = (1 - alpha) * blended[mask2] + alpha * np.array(tint, dtype=float)
    img = Image.fromarray(np.round(blended).astype(np.uint8), "RGB").resize(
        (values.shape[1] * upscale, values.shape[0] * upscale), Image.NEAREST
    )
    img = _with_legend(img, f"min={meta['min']:.4g} max={meta['max']:.4g}")
    return img, meta


def render_points(
    mask: np.ndarray, upscale: int = 24, on=(255, 255, 255), off=(15, 15, 15)
) -> Image.Image:
    """Plain binary point plot of an anchor/threshold mask."""
    mask = np.asarray(mask, dtype=bool)
    rgb = np.where(mask[..., None], np.array(on, np.uint8), np.array(off, np.uint8))
    return Image.fromarray(rgb.astype(np.uint8), "RGB").resize(
        (mask.shape[1] * upscale, mask.shape[0] * upscale), Image.NEAREST
    )


def save_image(img: Image.Image, path: str | Path):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    img.save(path, format="PNG")
