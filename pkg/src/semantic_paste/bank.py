"""
Object bank: cropped object images and binary masks keyed by category.

A bank is built once, offline, from an annotated dataset and persisted as a
directory::

    <bank>/manifest.json        ids, categories, source boxes, category embeddings
    <bank>/crops/<id>.png       RGB crop of the object's bounding box
    <bank>/masks/<id>.png       1-bit mask of the same size
    <bank>/build_report.json    per-category counts and skipped objects
"""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Union

import numpy as np
from PIL import Image
from scipy import ndimage

from .annotations import (
    COCO,
    AnnotatedImage,
    DatasetManifest,
    read_dataset,
)
from .embeddings import EmbeddingStore, WordVector
from .errors import BankError, EmptyMaskError, ObjectSkipped
from .masks import pixel_box

logger = logging.getLogger(__name__)

GROUND_TRUTH = "gt"
EXTERNAL = "external"
MIN_OBJECT_SIDE = 8
MANIFEST_NAME = "manifest.json"
REPORT_NAME = "build_report.json"
INSTANCE_RULE = {
    GROUND_TRUTH: "instance mask used verbatim, restricted to the bounding box",
    EXTERNAL: "connected region of the object's class with the largest overlap with the bounding box",
}

_unsafe = re.compile(r"[^A-Za-z0-9_.-]+")


@dataclass
class BankEntry:
    entry_id: str
    category: str
    embedding: WordVector
    source_image_id: Union[int, str]
    source_bbox: tuple  # (x, y, w, h) integer pixels in the source image
    _crop_image: Optional[np.ndarray] = field(default=None, repr=False)
    _crop_mask: Optional[np.ndarray] = field(default=None, repr=False)
    _root: Optional[Path] = field(default=None, repr=False)

    @property
    def crop_image(self) -> np.ndarray:
        if self._crop_image is None:
            with Image.open(self._root / "crops" / f"{self.entry_id}.png") as im:
                self._crop_image = np.asarray(im.convert("RGB"), dtype=np.uint8).copy()
        return self._crop_image

    @property
    def crop_mask(self) -> np.ndarray:
        if self._crop_mask is None:
            with Image.open(self._root / "masks" / f"{self.entry_id}.png") as im:
                self._crop_mask = np.asarray(im.convert("1"), dtype=bool).copy()
        return self._crop_mask

    @property
    def width(self) -> int:
        return int(self.source_bbox[2])

    @property
    def height(self) -> int:
        return int(self.source_bbox[3])


class ObjectBank:
    """Immutable collection of bank entries with a per-category index."""

    def __init__(self, entries: Iterable[BankEntry]):
        self.entries: list[BankEntry] = list(entries)
        self._by_id = {}
        by_category: dict[str, list[str]] = {}
        embeddings: dict[str, WordVector] = {}
        for e in self.entries:
            if e.entry_id in self._by_id:
                raise BankError(f"duplicate entry id {e.entry_id!r}")
            self._by_id[e.entry_id] = e
            by_category.setdefault(e.category, []).append(e.entry_id)
            embeddings.setdefault(e.category, e.embedding)
        self.categories: list[str] = sorted(by_category)
        self.by_category = {c: tuple(by_category[c]) for c in self.categories}
        self.embeddings = {c: embeddings[c] for c in self.categories}
        self._matrix = None

    def __len__(self) -> int:
        return len(self.entries)

    def __getitem__(self, entry_id: str) -> BankEntry:
        return self._by_id[entry_id]

    def category_matrix(self) -> np.ndarray:
        """Embeddings of ``self.categories`` stacked row-wise, float64."""
        if self._matrix is None:
            self._matrix = np.stack([self.embeddings[c].values for c in self.categories])
            self._matrix.setflags(write=False)
        return self._matrix


def _crop(image: AnnotatedImage, object_index: int):
    obj = image.objects[object_index]
    x0, y0, x1, y1 = pixel_box(obj.bbox, image.width, image.height)
    if x1 - x0 < MIN_OBJECT_SIDE or y1 - y0 < MIN_OBJECT_SIDE:
        raise ObjectSkipped(
            f"object {object_index} of image {image.image_id} is {x1 - x0}x{y1 - y0} px",
            reason="too_small",
        )
    return x0, y0, x1, y1


def instance_from_label_image(
    label_image: np.ndarray, class_index: int, box: tuple[int, int, int, int]
) -> np.ndarray:
    """Full-size mask of the ``class_index`` region that best overlaps ``box``.

    ``box`` is ``(x0, y0, x1, y1)`` with exclusive ends. Regions are
    8-connected; on equal overlap the region found first in raster order wins.
    """
    x0, y0, x1, y1 = box
    components, n = ndimage.label(label_image == class_index, structure=np.ones((3, 3), bool))
    if n == 0:
        return np.zeros(label_image.shape, dtype=bool)
    inside = components[y0:y1, x0:x1]
    overlap = np.bincount(inside.ravel(), minlength=n + 1)
    overlap[0] = 0
    best = int(np.argmax(overlap))
    if overlap[best] == 0:
        return np.zeros(label_image.shape, dtype=bool)
    return components == best


def extract_entry(
    image: AnnotatedImage,
    object_index: int,
    store: EmbeddingStore,
    mask_source: str = GROUND_TRUTH,
    label_image: Optional[np.ndarray] = None,
    class_index: Optional[int] = None,
    entry_id: Optional[str] = None,
) -> BankEntry:
    """Crop one annotated object (pixels and mask) into a bank entry.

    With ``mask_source="gt"`` the object's own instance mask is used. With
    ``"external"`` a class-indexed ``label_image`` and the object's
    ``class_index`` select the instance region.

    Raises:
        ObjectSkipped: the box is smaller than 8x8 or no mask is available.
        EmptyMaskError: the mask has no pixels inside the box.
        UnresolvedLabelError: the category has no embedding.
    """
    obj = image.objects[object_index]
    x0, y0, x1, y1 = _crop(image, object_index)
    if mask_source == GROUND_TRUTH:
        if obj.mask is None:
            raise ObjectSkipped(
                f"object {object_index} of image {image.image_id} has no instance mask",
                reason="no_mask",
            )
        full = obj.mask
    elif mask_source == EXTERNAL:
        if label_image is None or class_index is None:
            raise ObjectSkipped("external mask source needs a label image", reason="no_mask")
        full = instance_from_label_image(label_image, class_index, (x0, y0, x1, y1))
    else:
        raise ValueError(f"unknown mask source {mask_source!r}")
    crop_mask = np.ascontiguousarray(full[y0:y1, x0:x1], dtype=bool)
    if not crop_mask.any():
        raise EmptyMaskError(
            f"object {object_index} of image {image.image_id}: no mask pixels inside bbox"
        )
    embedding = store.resolve(obj.category)
    crop_image = np.ascontiguousarray(image.pixels[y0:y1, x0:x1])
    if entry_id is None:
        entry_id = make_entry_id(image, object_index)
    return BankEntry(
        entry_id,
        obj.category,
        embedding,
        image.image_id,
        (x0, y0, x1 - x0, y1 - y0),
        crop_image,
        crop_mask,
    )


def make_entry_id(image: AnnotatedImage, object_index: int) -> str:
    stem = Path(image.file_name).stem if image.file_name else str(image.image_id)
    return f"{_unsafe.sub('_', stem)}-{object_index:03d}"


def _load_label_image(path: Path) -> np.ndarray:
    with Image.open(path) as im:
        if im.mode in ("P", "L", "I", "I;16"):
            return np.asarray(im).astype(np.int64)
        return np.asarray(im.convert("L")).astype(np.int64)


def _mask_file(directory: Path, image: AnnotatedImage) -> Path:
    stem = Path(image.file_name).stem if image.file_name else str(image.image_id)
    return Path(directory) / f"{stem}.png"


def _attach_voc_instances(image: AnnotatedImage, seg_dir: Optional[Path]) -> Optional[str]:
    """Fill object masks from a VOC SegmentationObject image; return a skip reason or None."""
    if seg_dir is None:
        return "missing_mask_file"
    path = _mask_file(seg_dir, image)
    if not path.exists():
        return "missing_mask_file"
    instances = _load_label_image(path)
    for obj in image.objects:
        obj.mask = instances == (obj.extra.get("index", 0) + 1)
    return None


@dataclass
class BuildReport:
    counts: dict = field(default_factory=dict)
    skipped: list = field(default_factory=list)
    mask_source: str = GROUND_TRUTH
    read_errors: list = field(default_factory=list)

    def skip(self, image_id, object_index, reason, detail=""):
        logger.info("skipping object %s of image %s: %s %s", object_index, image_id, reason, detail)
        self.skipped.append(
            {"image_id": image_id, "object_index": object_index, "reason": reason, "detail": detail}
        )

    def to_dict(self) -> dict:
        reasons: dict[str, int] = {}
        for s in self.skipped:
            reasons[s["reason"]] = reasons.get(s["reason"], 0) + 1
        return {
            "entries": sum(self.counts.values()),
            "per_category": dict(sorted(self.counts.items())),
            "mask_source": self.mask_source,
            "instance_rule": INSTANCE_RULE[self.mask_source],
            "skip_reasons": dict(sorted(reasons.items())),
            "skipped": self.skipped,
            "read_errors": self.read_errors,
        }


def build_bank(
    manifest: DatasetManifest,
    store: EmbeddingStore,
    mask_source: Union[str, Path] = GROUND_TRUTH,
    output_path: Union[str, Path, None] = None,
) -> tuple[ObjectBank, BuildReport]:
    """Extract every usable labelled object of a dataset into a bank.

    ``mask_source`` is ``"gt"`` for ground-truth instance masks (COCO
    segmentations or VOC ``SegmentationObject`` images) or a directory of
    class-indexed label images named after each source image.

    Per-object problems are logged and listed in the report. Unresolved
    labels propagate; a bank with no entries raises :class:`BankError`.
    """
    external_dir = None
    if str(mask_source) != GROUND_TRUTH:
        external_dir = Path(mask_source)
        if not external_dir.is_dir():
            raise BankError(f"mask directory {external_dir} does not exist")
    report = BuildReport(mask_source=GROUND_TRUTH if external_dir is None else EXTERNAL)
    entries: list[BankEntry] = []
    used_ids: set[str] = set()
    read_errors: list = []
    for image in read_dataset(manifest, read_errors):
        label_image = None
        missing = None
        if external_dir is not None:
            path = _mask_file(external_dir, image)
            if path.exists():
                label_image = _load_label_image(path)
                if label_image.shape != (image.height, image.width):
                    missing = "mask_size_mismatch"
            else:
                missing = "missing_mask_file"
        elif manifest.format != COCO:
            missing = _attach_voc_instances(image, manifest.mask_root)
        for k, obj in enumerate(image.objects):
            if missing is not None:
                report.skip(image.image_id, k, missing)
                continue
            if obj.is_crowd:
                report.skip(image.image_id, k, "crowd")
                continue
            entry_id = make_entry_id(image, k)
            while entry_id in used_ids:
                entry_id += "_"
            try:
                class_index = manifest.class_index(obj.category) if external_dir else None
                entry = extract_entry(
                    image,
                    k,
                    store,
                    EXTERNAL if external_dir else GROUND_TRUTH,
                    label_image,
                    class_index,
                    entry_id,
                )
            except ObjectSkipped as exc:
                report.skip(image.image_id, k, exc.reason, str(exc))
                continue
            used_ids.add(entry_id)
            entries.append(entry)
            report.counts[entry.category] = report.counts.get(entry.category, 0) + 1
    report.read_errors = [str(e) for e in read_errors]
    if not entries:
        raise BankError("no usable objects: the bank would be empty")
    bank = ObjectBank(entries)
    if output_path is not None:
        save_bank(bank, output_path, report)
    logger.info("built bank with %d entries over %d categories", len(bank), len(bank.categories))
    return bank, report


def _save_png(path: Path, image: Image.Image) -> None:
    image.save(path, format="PNG", optimize=False, compress_level=6)


def save_bank(bank: ObjectBank, path: Union[str, Path], report: Optional[BuildReport] = None) -> Path:
    path = Path(path)
    (path / "crops").mkdir(parents=True, exist_ok=True)
    (path / "masks").mkdir(parents=True, exist_ok=True)
    for e in bank.entries:
        _save_png(path / "crops" / f"{e.entry_id}.png", Image.fromarray(e.crop_image))
        _save_png(path / "masks" / f"{e.entry_id}.png", Image.fromarray(e.crop_mask).convert("1"))
    dims = {e.embedding.dimension for e in bank.entries}
    manifest = {
        "version": 1,
        "dimension": dims.pop() if len(dims) == 1 else None,
        "categories": [
            {"name": c, "token": bank.embeddings[c].token,
             "embedding": [float(v) for v in bank.embeddings[c].values]}
            for c in bank.categories
        ],
        "entries": [
            {
                "id": e.entry_id,
                "category": e.category,
                "source_image_id": e.source_image_id,
                "bbox": [int(v) for v in e.source_bbox],
            }
            for e in bank.entries
        ],
    }
    with open(path / MANIFEST_NAME, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=1)
        fh.write("\n")
    if report is not None:
        with open(path / REPORT_NAME, "w", encoding="utf-8") as fh:
            json.dump(report.to_dict(), fh, indent=1, sort_keys=True)
            fh.write("\n")
    return path


def load_bank(path: Union[str, Path], preload: bool = False) -> ObjectBank:
    """Open a persisted bank. Crops and masks load lazily unless ``preload``."""
    path = Path(path)
    try:
        with open(path / MANIFEST_NAME, encoding="utf-8") as fh:
            manifest = json.load(fh)
    except FileNotFoundError:
        raise BankError(f"{path} is not an object bank (no {MANIFEST_NAME})") from None
    vectors = {}
    for c in manifest["categories"]:
        values = np.array(c["embedding"], dtype=np.float64)
        values.setflags(write=False)
        vectors[c["name"]] = WordVector(c.get("token", c["name"]), values)
    entries = []
    for rec in manifest["entries"]:
        if rec["category"] not in vectors:
            raise BankError(f"entry {rec['id']} has category without embedding")
        entries.append(
            BankEntry(
                rec["id"],
                rec["category"],
                vectors[rec["category"]],
                rec["source_image_id"],
                tuple(rec["bbox"]),
                _root=path,
            )
        )
    bank = ObjectBank(entries)
    if preload:
        for e in bank.entries:
            e.crop_image, e.crop_mask  # noqa: B018
    return bank


def sample_instance(bank: ObjectBank, category: str, rng: np.random.Generator) -> BankEntry:
    """Uniformly random entry of ``category``."""
    ids = bank.by_category.get(category)
    if not ids:
        raise BankError(f"category {category!r} is not in the bank")
    return bank[ids[int(rng.integers(len(ids)))]]
