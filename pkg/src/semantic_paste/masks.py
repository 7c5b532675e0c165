"""Binary mask helpers: tight boxes, rectangle masks, COCO run-length codes, polygons."""

from __future__ import annotations

import math
from typing import Optional, Sequence

import numpy as np
from PIL import Image, ImageDraw

Box = tuple  # (x, y, w, h), top-left origin


def tight_bbox(mask: np.ndarray) -> Optional[tuple[int, int, int, int]]:
    """Smallest (x, y, w, h) box containing every nonzero pixel, or None if empty."""
    rows = np.flatnonzero(mask.any(axis=1))
    if rows.size == 0:
        return None
    cols = np.flatnonzero(mask.any(axis=0))
    y0, y1 = int(rows[0]), int(rows[-1])
    x0, x1 = int(cols[0]), int(cols[-1])
    return (x0, y0, x1 - x0 + 1, y1 - y0 + 1)


def pixel_box(bbox: Sequence[float], width: int, height: int) -> tuple[int, int, int, int]:
    """Integer pixel extent (x0, y0, x1, y1), exclusive end, covering a float box."""
    x, y, w, h = bbox
    x0 = max(0, int(math.floor(x + 1e-9)))
    y0 = max(0, int(math.floor(y + 1e-9)))
    x1 = min(width, int(math.ceil(x + w - 1e-9)))
    y1 = min(height, int(math.ceil(y + h - 1e-9)))
    return x0, y0, x1, y1


def rect_mask(bbox: Sequence[float], width: int, height: int) -> np.ndarray:
    x0, y0, x1, y1 = pixel_box(bbox, width, height)
    out = np.zeros((height, width), dtype=bool)
    out[y0:y1, x0:x1] = True
    return out


# --- COCO run-length encoding (column-major, alternating 0/1 runs starting with 0) ---


def rle_encode(mask: np.ndarray) -> dict:
    """Uncompressed COCO RLE: ``{"size": [h, w], "counts": [...]}``."""
    h, w = mask.shape
    flat = np.asarray(mask, dtype=bool).ravel(order="F")
    if flat.size == 0:
        return {"size": [h, w], "counts": []}
    change = np.flatnonzero(flat[1:] != flat[:-1]) + 1
    bounds = np.concatenate(([0], change, [flat.size]))
    counts = np.diff(bounds).tolist()
    if flat[0]:
        counts = [0] + counts
    return {"size": [int(h), int(w)], "counts": [int(c) for c in counts]}


def rle_decode(rle: dict) -> np.ndarray:
    h, w = rle["size"]
    counts = rle["counts"]
    if isinstance(counts, (str, bytes)):
        counts = rle_counts_from_string(counts)
    flat = np.zeros(h * w, dtype=bool)
    pos = 0
    val = False
    for c in counts:
        if val:
            flat[pos : pos + c] = True
        pos += c
        val = not val
    if pos != h * w:
        raise ValueError(f"RLE counts sum to {pos}, expected {h * w}")
    return flat.reshape((h, w), order="F")


def rle_counts_from_string(s) -> list[int]:
    """Decode the LEB128-like compressed counts string used by COCO tools."""
    if isinstance(s, bytes):
        s = s.decode("ascii")
    counts: list[int] = []
    p = 0
    while p < len(s):
        x = 0
        k = 0
        more = True
        while more:
            c = ord(s[p]) - 48
            x |= (c & 0x1F) << (5 * k)
            more = bool(c & 0x20)
            p += 1
            k += 1
            if not more and (c & 0x10):
                x |= -1 << (5 * k)
        if len(counts) > 2:
            x += counts[-2]
        counts.append(x)
    return counts


def rle_counts_to_string(counts: Sequence[int]) -> str:
    out = []
    for i, x in enumerate(counts):
        if i > 2:
            x -= counts[i - 2]
        more = True
        while more:
            c = x & 0x1F
            x >>= 5
            more = (x != -1) if (c & 0x10) else (x != 0)
            if more:
                c |= 0x20
            out.append(chr(c + 48))
    return "".join(out)


def polygons_to_mask(polygons: Sequence[Sequence[float]], width: int, height: int) -> np.ndarray:
    """Rasterize COCO polygon lists ``[[x1, y1, x2, y2, ...], ...]``."""
    canvas = Image.new("L", (width, height), 0)
    draw = ImageDraw.Draw(canvas)
    for poly in polygons:
        if len(poly) < 6:
            continue
        pts = list(zip(poly[0::2], poly[1::2]))
        draw.polygon(pts, fill=1, outline=1)
    return np.asarray(canvas, dtype=np.uint8).astype(bool)


def decode_segmentation(segmentation, width: int, height: int) -> Optional[np.ndarray]:
    """Turn any COCO ``segmentation`` value into a (height, width) bool mask."""
    if not segmentation:
        return None
    if isinstance(segmentation, list):
        return polygons_to_mask(segmentation, width, height)
    if isinstance(segmentation, dict):
        mask = rle_decode(segmentation)
        if mask.shape != (height, width):
            raise ValueError(f"RLE size {mask.shape} does not match image {(height, width)}")
        return mask
    raise ValueError(f"unsupported segmentation type {type(segmentation).__name__}")
