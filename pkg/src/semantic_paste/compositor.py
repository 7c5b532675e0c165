"""
Placing a bank instance into a host image.

The instance is scaled relative to the host width, centred near a random
corner of the anchor object's box, zero-padded to the host geometry and
composited with ``out = host * (1 - M) + paste * M``. Existing annotations
covered by the paste are shrunk to their visible part or dropped.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Optional, Sequence

import numpy as np

from .annotations import AnnotatedImage, ObjectAnnotation
from .bank import BankEntry, ObjectBank, sample_instance
from .embeddings import EmbeddingStore
from .errors import ConfigurationError, NoHostObjectsError, UnplaceableError
from .imaging import BLEND_MODES, BLEND_NONE, blend, resize_bilinear, resize_nearest, round_half_up
from .masks import rect_mask, tight_bbox
from .matcher import CategoryCounter, MatchDecision, score_all_pairs, select

if TYPE_CHECKING:
    from .config import AugmentationConfig

INSTANCE_RESAMPLES = 3
MIN_INSIDE_FRACTION = 0.5


@dataclass(frozen=True)
class PlacementParams:
    scale_lo: float = 0.05
    scale_hi: float = 0.40
    area_min: float = 300
    area_max: float = 90000
    epsilon_frac: float = 0.05
    max_retries: int = 20
    blending: str = BLEND_NONE
    visibility_threshold: float = 0.05

    def __post_init__(self):
        if not 0 < self.scale_lo <= self.scale_hi <= 1:
            raise ConfigurationError("scale range must satisfy 0 < lo <= hi <= 1")
        if not 0 < self.area_min < self.area_max:
            raise ConfigurationError("area bounds must satisfy 0 < min < max")
        if not 0 <= self.epsilon_frac < 1:
            raise ConfigurationError("epsilon_frac must be in [0, 1)")
        if self.max_retries < 1:
            raise ConfigurationError("max_retries must be at least 1")
        if self.blending not in BLEND_MODES:
            raise ConfigurationError(f"unknown blending mode {self.blending!r}")
        if not 0 <= self.visibility_threshold <= 1:
            raise ConfigurationError("visibility_threshold must be in [0, 1]")


@dataclass(frozen=True)
class Placement:
    center: tuple  # (x, y) of the pasted box centre, pixels
    scaled_w: int
    scaled_h: int
    host_anchor_index: int

    @property
    def x0(self) -> int:
        return int(math.floor(self.center[0] - self.scaled_w / 2))

    @property
    def y0(self) -> int:
        return int(math.floor(self.center[1] - self.scaled_h / 2))


@dataclass(frozen=True)
class PasteRecord:
    entry_id: str
    category: str
    placement: Placement
    bbox: tuple  # tight box of the in-frame pasted pixels
    score: float = float("nan")


@dataclass
class CompositeResult:
    image: AnnotatedImage
    mask: np.ndarray  # (H, W) int32 instance ids, 0 = background
    paste_record: Optional[PasteRecord]
    pasted_mask: Optional[np.ndarray] = None  # zero-padded paste mask, (H, W) bool
    removed: list = field(default_factory=list)

    @property
    def annotations(self) -> list:
        return self.image.objects


@dataclass
class AugmentResult:
    image: AnnotatedImage
    paste_records: list = field(default_factory=list)
    removed: list = field(default_factory=list)
    skips: list = field(default_factory=list)
    decisions: list = field(default_factory=list)
    skipped: bool = False
    similarity_flops: int = 0
    mask: Optional[np.ndarray] = None


# --- scale ---


def draw_scale(
    entry: BankEntry, host_w: int, params: PlacementParams, rng: np.random.Generator
) -> tuple[int, int]:
    """Random paste size: width is a uniform fraction of the host width, aspect kept.

    Redrawn until the area lies within the configured bounds.

    Raises:
        UnplaceableError: no acceptable size after ``max_retries`` draws.
    """
    crop_h, crop_w = entry.crop_mask.shape
    lo_w = math.ceil(params.scale_lo * host_w - 1e-9)
    hi_w = math.floor(params.scale_hi * host_w + 1e-9)
    if lo_w < 1 or lo_w > hi_w:
        raise UnplaceableError(f"host width {host_w} admits no paste width")
    for _ in range(params.max_retries):
        u = rng.uniform(params.scale_lo, params.scale_hi)
        w, h = scaled_size(u, host_w, crop_w, crop_h, lo_w, hi_w)
        if params.area_min <= w * h <= params.area_max:
            return w, h
    raise UnplaceableError(
        f"entry {entry.entry_id} ({crop_w}x{crop_h}) found no size within area bounds "
        f"in {params.max_retries} draws"
    )


def scaled_size(u: float, host_w: int, crop_w: int, crop_h: int, lo_w: int = 1, hi_w: int = None):
    """Target (w, h) for width fraction ``u`` with the crop's aspect ratio."""
    w = round_half_up(u * host_w)
    w = max(lo_w, w if hi_w is None else min(hi_w, w))
    h = max(1, round_half_up(w * crop_h / crop_w))
    return w, h


def resize_instance(entry_or_crop, scaled_w: int, scaled_h: int, mask: Optional[np.ndarray] = None):
    """Bilinear resize of the crop and nearest-neighbour resize of its mask."""
    if isinstance(entry_or_crop, BankEntry):
        crop, mask = entry_or_crop.crop_image, entry_or_crop.crop_mask
    else:
        crop = entry_or_crop
    out_mask = resize_nearest(np.asarray(mask, dtype=bool), scaled_h, scaled_w)
    return resize_bilinear(crop, scaled_h, scaled_w), out_mask


# --- placement ---


def corner_center(anchor_bbox: Sequence[float], signs: tuple, eps: tuple) -> tuple[float, float]:
    """Centre near an anchor corner: ``x_a ± w_a/2 ± eps_a``, likewise for y."""
    x, y, w, h = anchor_bbox
    xa, ya = x + w / 2, y + h / 2
    return xa + signs[0] * w / 2 + eps[0], ya + signs[1] * h / 2 + eps[1]


def inside_fraction(x0: int, y0: int, w: int, h: int, width: int, height: int) -> float:
    ox = max(0, min(x0 + w, width) - max(x0, 0))
    oy = max(0, min(y0 + h, height) - max(y0, 0))
    return (ox * oy) / (w * h)


def _clamp_axis(start: int, size: int, limit: int, frac: float) -> int:
    need = min(size, limit, math.ceil(frac * size - 1e-12))
    return min(max(start, need - size), limit - need)


def clamp_into_frame(x0: int, y0: int, w: int, h: int, width: int, height: int):
    """Shift a box the least needed for half its area to fall inside the frame.

    Returns the new top-left corner, or None if no shift can achieve it.
    """
    if inside_fraction(x0, y0, w, h, width, height) >= MIN_INSIDE_FRACTION:
        return x0, y0
    fx_max = min(1.0, width / w)
    fy_max = min(1.0, height / h)
    if fx_max * fy_max < MIN_INSIDE_FRACTION:
        return None
    s = math.sqrt(MIN_INSIDE_FRACTION)
    if fx_max >= s and fy_max >= s:
        tx = ty = s
    elif fx_max < s:
        tx, ty = fx_max, MIN_INSIDE_FRACTION / fx_max
    else:
        tx, ty = MIN_INSIDE_FRACTION / fy_max, fy_max
    nx = _clamp_axis(x0, w, width, tx)
    ny = _clamp_axis(y0, h, height, ty)
    if inside_fraction(nx, ny, w, h, width, height) < MIN_INSIDE_FRACTION:
        return None
    return nx, ny


def draw_placement(
    host: AnnotatedImage,
    anchor_index: int,
    scaled: tuple[int, int],
    params: PlacementParams,
    rng: np.random.Generator,
    anchor_bbox: Optional[Sequence[float]] = None,
) -> Placement:
    """Draw a paste centre near a random corner of the anchor's box.

    ``anchor_bbox`` overrides the box of ``host.objects[anchor_index]`` (the
    augmentation loop passes the pre-paste box). A box with less than half
    of its area inside the frame is shifted inward.

    Raises:
        UnplaceableError: the paste cannot keep half its area in frame.
    """
    w, h = scaled
    bbox = anchor_bbox if anchor_bbox is not None else host.objects[anchor_index].bbox
    spread = params.epsilon_frac * host.width
    for _ in range(params.max_retries):
        signs = tuple(int(s) for s in rng.choice((-1, 1), size=2))
        eps = tuple(float(e) for e in rng.uniform(-spread, spread, size=2))
        cx, cy = corner_center(bbox, signs, eps)
        x0 = int(math.floor(cx - w / 2))
        y0 = int(math.floor(cy - h / 2))
        if inside_fraction(x0, y0, w, h, host.width, host.height) < MIN_INSIDE_FRACTION:
            shifted = clamp_into_frame(x0, y0, w, h, host.width, host.height)
            if shifted is None:
                continue
            x0, y0 = shifted
        return Placement((x0 + w / 2, y0 + h / 2), w, h, anchor_index)
    raise UnplaceableError(f"{w}x{h} paste cannot keep half its area inside the frame")


# --- compositing ---


def pad_to_host(crop: np.ndarray, mask: np.ndarray, placement: Placement, width: int, height: int):
    """Zero-pad a placed crop and mask to the host geometry, clipping at the frame."""
    w, h = placement.scaled_w, placement.scaled_h
    x0, y0 = placement.x0, placement.y0
    hx0, hy0 = max(0, x0), max(0, y0)
    hx1, hy1 = min(width, x0 + w), min(height, y0 + h)
    full_img = np.zeros((height, width) + crop.shape[2:], dtype=crop.dtype)
    full_mask = np.zeros((height, width), dtype=bool)
    if hx1 <= hx0 or hy1 <= hy0:
        return full_img, full_mask
    sx0, sy0 = hx0 - x0, hy0 - y0
    sub_mask = mask[sy0 : sy0 + (hy1 - hy0), sx0 : sx0 + (hx1 - hx0)].astype(bool)
    full_mask[hy0:hy1, hx0:hx1] = sub_mask
    sub_img = crop[sy0 : sy0 + (hy1 - hy0), sx0 : sx0 + (hx1 - hx0)]
    full_img[hy0:hy1, hx0:hx1] = np.where(sub_mask[..., None] if crop.ndim == 3 else sub_mask,
                                          sub_img, 0)
    return full_img, full_mask


def apply_paste(host_pixels: np.ndarray, padded_img: np.ndarray, padded_mask: np.ndarray):
    """``host * (1 - M) + padded``, with ``padded`` already zero outside ``M``."""
    m = padded_mask.astype(host_pixels.dtype)
    if host_pixels.ndim == 3:
        m = m[..., None]
    return host_pixels * (1 - m) + padded_img


def instance_grid(objects: Sequence[ObjectAnnotation], height: int, width: int) -> np.ndarray:
    """Instance-id image: object k (with a mask) is id k + 1; later objects overwrite."""
    grid = np.zeros((height, width), dtype=np.int32)
    for k, obj in enumerate(objects):
        if obj.mask is not None:
            grid[obj.mask] = k + 1
    return grid


def update_occlusions(
    annotations: Sequence[ObjectAnnotation],
    pasted_mask: np.ndarray,
    visibility_threshold: float = 0.05,
) -> tuple[list, list]:
    """Shrink or drop annotations hidden by a paste.

    Objects without an instance mask use their box rectangle. Returns
    ``(kept, removed)``; untouched objects are passed through as-is.
    """
    height, width = pasted_mask.shape
    kept, removed = [], []
    for obj in annotations:
        own = obj.mask if obj.mask is not None else rect_mask(obj.bbox, width, height)
        if not (own & pasted_mask).any():
            kept.append(obj)
            continue
        visible = own & ~pasted_mask
        ratio = visible.sum() / own.sum()
        if ratio < visibility_threshold or not visible.any():
            removed.append(obj)
            continue
        updated = obj.copy()
        updated.bbox = tuple(float(v) for v in tight_bbox(visible))
        if obj.mask is not None:
            updated.mask = visible
        updated.modified = True
        kept.append(updated)
    return kept, removed


def composite(
    host: AnnotatedImage,
    crop: np.ndarray,
    mask: np.ndarray,
    placement: Placement,
    params: Optional[PlacementParams] = None,
    category: str = "",
    entry_id: str = "",
    score: float = float("nan"),
) -> CompositeResult:
    """Paste a resized instance at ``placement`` and update the annotations.

    Raises:
        UnplaceableError: none of the paste's mask pixels fall inside the frame.
    """
    params = params or PlacementParams()
    padded_img, padded_mask = pad_to_host(crop, mask, placement, host.width, host.height)
    if not padded_mask.any():
        raise UnplaceableError("paste has no mask pixels inside the frame")
    pixels = apply_paste(host.pixels, padded_img, padded_mask)
    old_grid = instance_grid(host.objects, host.height, host.width)
    new_id = len(host.objects) + 1
    grid = np.where(padded_mask, new_id, old_grid).astype(np.int32)
    kept, removed = update_occlusions(host.objects, padded_mask, params.visibility_threshold)
    box = tuple(float(v) for v in tight_bbox(padded_mask))
    kept.append(ObjectAnnotation(category, box, padded_mask, synthetic=True, modified=True))
    out = AnnotatedImage(host.image_id, host.width, host.height, pixels, kept,
                         host.file_name, host.extra)
    record = PasteRecord(entry_id, category, placement, box, score)
    return CompositeResult(out, grid, record, padded_mask, removed)


# --- per-image driver ---


def plan_pastes(
    host: AnnotatedImage,
    bank: ObjectBank,
    store: EmbeddingStore,
    config: "AugmentationConfig",
    counter: CategoryCounter,
    rng: np.random.Generator,
    strategy=None,
) -> tuple[list[MatchDecision], int]:
    """Match decisions for every paste of one image and the similarity FLOPs spent.

    Only the host's original annotations anchor pastes. Raises
    :class:`NoHostObjectsError` for images without annotations.
    """
    strategy = strategy or config.selection_strategy()
    pairs = score_all_pairs(host, bank, store, config.metric)
    flops = len(pairs) * store.dimension
    cats = [o.category for o in host.objects]
    decisions = [
        select(pairs, strategy, counter, rng, cats) for _ in range(config.objects_per_image)
    ]
    return decisions, flops


def apply_pastes(
    host: AnnotatedImage,
    decisions: Sequence[MatchDecision],
    bank: ObjectBank,
    params: PlacementParams,
    rng: np.random.Generator,
) -> AugmentResult:
    """Composite one bank instance per decision, resampling unplaceable instances."""
    anchors = [o.bbox for o in host.objects]
    current = host.copy()
    result = AugmentResult(current, decisions=list(decisions))
    for decision in decisions:
        outcome = None
        for _ in range(1 + INSTANCE_RESAMPLES):
            entry = sample_instance(bank, decision.bank_category, rng)
            try:
                size = draw_scale(entry, host.width, params, rng)
                crop, mask = resize_instance(entry, *size)
                placement = draw_placement(
                    current, decision.host_object_index, size, params, rng,
                    anchor_bbox=anchors[decision.host_object_index],
                )
                outcome = composite(current, crop, mask, placement, params,
                                    decision.bank_category, entry.entry_id, decision.score)
            except UnplaceableError:
                continue
            break
        if outcome is None:
            result.skips.append("unplaceable")
            continue
        if params.blending != BLEND_NONE:
            outcome.image.pixels = blend(outcome.image.pixels, outcome.pasted_mask, params.blending)
        current = outcome.image
        result.paste_records.append(outcome.paste_record)
        result.removed.extend(outcome.removed)
        result.mask = outcome.mask
    result.image = current
    return result


def augment_image(
    host: AnnotatedImage,
    bank: ObjectBank,
    store: EmbeddingStore,
    config: "AugmentationConfig",
    counter: CategoryCounter,
    rng: np.random.Generator,
) -> AugmentResult:
    """Select, place and composite ``config.objects_per_image`` bank objects.

    Images without annotations come back unchanged with ``skipped`` set.
    """
    select_rng, paste_rng = rng.spawn(2)
    try:
        decisions, flops = plan_pastes(host, bank, store, config, counter, select_rng)
    except NoHostObjectsError:
        return AugmentResult(host.copy(), skips=["no_host_objects"], skipped=True)
    result = apply_pastes(host, decisions, bank, config.placement_params(), paste_rng)
    result.similarity_flops = flops
    return result
