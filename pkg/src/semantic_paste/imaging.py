"""Pixel-level primitives: bilinear / nearest-neighbour resize and boundary blending."""

from __future__ import annotations

import math

import numpy as np
from scipy import ndimage

BLEND_NONE = "none"
BLEND_GAUSSIAN = "gaussian_5x5"
BLEND_AVERAGE = "averaging_5x5"
BLEND_MODES = (BLEND_NONE, BLEND_GAUSSIAN, BLEND_AVERAGE)
BLEND_RADIUS = 2


def _source_coords(n_out: int, n_in: int) -> np.ndarray:
    # Pixel centres aligned at half-pixel offsets.
    return (np.arange(n_out, dtype=np.float64) + 0.5) * (n_in / n_out) - 0.5


def resize_bilinear(image: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resize of an (H, W[, C]) uint8 image."""
    if out_h <= 0 or out_w <= 0:
        raise ValueError("target size must be positive")
    in_h, in_w = image.shape[:2]
    if (in_h, in_w) == (out_h, out_w):
        return image.copy()
    sy = np.clip(_source_coords(out_h, in_h), 0, in_h - 1)
    sx = np.clip(_source_coords(out_w, in_w), 0, in_w - 1)
    y0 = np.floor(sy).astype(np.intp)
    x0 = np.floor(sx).astype(np.intp)
    y1 = np.minimum(y0 + 1, in_h - 1)
    x1 = np.minimum(x0 + 1, in_w - 1)
    wy = (sy - y0)[:, None]
    wx = (sx - x0)[None, :]
    if image.ndim == 3:
        wy = wy[..., None]
        wx = wx[..., None]
    src = image.astype(np.float64)
    top = src[y0][:, x0] * (1 - wx) + src[y0][:, x1] * wx
    bottom = src[y1][:, x0] * (1 - wx) + src[y1][:, x1] * wx
    out = top * (1 - wy) + bottom * wy
    return np.clip(np.rint(out), 0, 255).astype(np.uint8)


def resize_nearest(mask: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Nearest-neighbour resize; values are copied, never interpolated."""
    if out_h <= 0 or out_w <= 0:
        raise ValueError("target size must be positive")
    in_h, in_w = mask.shape[:2]
    ys = np.minimum(np.floor((np.arange(out_h) + 0.5) * (in_h / out_h)).astype(np.intp), in_h - 1)
    xs = np.minimum(np.floor((np.arange(out_w) + 0.5) * (in_w / out_w)).astype(np.intp), in_w - 1)
    return mask[ys][:, xs].copy()


def blend_kernel(mode: str) -> np.ndarray:
    """5x5 smoothing kernel, normalised to unit sum."""
    if mode == BLEND_AVERAGE:
        return np.full((5, 5), 1.0 / 25.0)
    if mode == BLEND_GAUSSIAN:
        # Same sigma OpenCV derives for a 5-tap kernel when none is given.
        sigma = 0.3 * ((5 - 1) * 0.5 - 1) + 0.8
        x = np.arange(-2, 3, dtype=np.float64)
        g = np.exp(-(x * x) / (2 * sigma * sigma))
        g /= g.sum()
        return np.outer(g, g)
    raise ValueError(f"no kernel for blending mode {mode!r}")


def boundary_band(mask: np.ndarray, radius: int = BLEND_RADIUS) -> np.ndarray:
    """Pixels whose (2r+1)-square neighbourhood holds both pasted and host pixels.

    Pixels beyond the frame count as neither, so the frame edge is not a boundary.
    """
    mask = np.asarray(mask, dtype=bool)
    size = 2 * radius + 1
    square = np.ones((size, size), dtype=bool)
    near_paste = ndimage.binary_dilation(mask, square, border_value=0)
    near_host = ndimage.binary_dilation(~mask, square, border_value=0)
    return near_paste & near_host


def blend(image: np.ndarray, pasted_mask: np.ndarray, mode: str) -> np.ndarray:
    """Smooth the pasted object's seam with a 5x5 filter.

    Only pixels within two pixels of the mask boundary change; edges of the
    frame are handled by mirror reflection.
    """
    if mode == BLEND_NONE:
        return image
    kernel = blend_kernel(mode)
    band = boundary_band(pasted_mask)
    if not band.any():
        return image.copy()
    src = image.astype(np.float64)
    if src.ndim == 2:
        filtered = ndimage.correlate(src, kernel, mode="reflect")
    else:
        filtered = np.stack(
            [ndimage.correlate(src[..., c], kernel, mode="reflect") for c in range(src.shape[2])],
            axis=-1,
        )
    out = image.copy()
    out[band] = np.clip(np.rint(filtered[band]), 0, 255).astype(image.dtype)
    return out


def round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))
