"""
Detection dataset I/O for COCO-style JSON and Pascal VOC-style XML.

Both readers produce a stream of :class:`AnnotatedImage` with boxes in
top-left ``(x, y, w, h)`` pixel convention; writers convert back to each
format's native convention and keep every field this package does not touch.
"""

from __future__ import annotations

import copy
import json
import logging
import math
import os
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Iterator, Mapping, Optional, Union

import numpy as np
from PIL import Image

from .errors import AnnotationError, SemanticPasteError
from .masks import decode_segmentation, rle_encode

logger = logging.getLogger(__name__)

COCO = "coco"
VOC = "voc"
FORMATS = (COCO, VOC)

VOC_CLASSES = (
    "aeroplane", "bicycle", "bird", "boat", "bottle", "bus", "car", "cat", "chair", "cow",
    "diningtable", "dog", "horse", "motorbike", "person", "pottedplant", "sheep", "sofa",
    "train", "tvmonitor",
)

PARTIAL_MARKER = "_PARTIAL_OUTPUT"
IMAGE_EXTENSIONS = (".jpg", ".jpeg", ".png", ".bmp")
BBOX_EPS = 1e-6


@dataclass
class ObjectAnnotation:
    category: str
    bbox: tuple  # (x, y, w, h), top-left
    mask: Optional[np.ndarray] = None  # (H, W) bool, full image size
    synthetic: bool = False
    extra: dict = field(default_factory=dict)  # format-specific pass-through fields
    modified: bool = False

    @property
    def is_crowd(self) -> bool:
        return bool(self.extra.get("iscrowd", 0))

    def copy(self) -> "ObjectAnnotation":
        return ObjectAnnotation(
            self.category,
            tuple(self.bbox),
            None if self.mask is None else self.mask.copy(),
            self.synthetic,
            dict(self.extra),
            self.modified,
        )


@dataclass
class AnnotatedImage:
    image_id: Union[int, str]
    width: int
    height: int
    pixels: Optional[np.ndarray]  # (H, W, 3) uint8
    objects: list = field(default_factory=list)
    file_name: str = ""
    extra: dict = field(default_factory=dict)

    def copy(self) -> "AnnotatedImage":
        return AnnotatedImage(
            self.image_id,
            self.width,
            self.height,
            None if self.pixels is None else self.pixels.copy(),
            [o.copy() for o in self.objects],
            self.file_name,
            dict(self.extra),
        )

    def validate(self) -> None:
        for i, obj in enumerate(self.objects):
            check_bbox(obj.bbox, self.width, self.height, self.image_id, i)
            if obj.mask is not None and obj.mask.shape != (self.height, self.width):
                raise AnnotationError(
                    f"object {i} mask shape {obj.mask.shape} != {(self.height, self.width)}",
                    image_id=self.image_id,
                )


def check_bbox(bbox, width, height, image_id=None, index=None, source=None) -> None:
    what = "bbox" if index is None else f"object {index} bbox"
    try:
        x, y, w, h = (float(v) for v in bbox)
    except (TypeError, ValueError):
        raise AnnotationError(f"{what} {bbox!r} is not four numbers", source, image_id) from None
    if not all(math.isfinite(v) for v in (x, y, w, h)):
        raise AnnotationError(f"{what} {bbox!r} has non-finite values", source, image_id)
    if w <= 0 or h <= 0:
        raise AnnotationError(f"{what} {bbox!r} has non-positive size", source, image_id)
    if x < -BBOX_EPS or y < -BBOX_EPS:
        raise AnnotationError(f"{what} {bbox!r} starts outside the image", source, image_id)
    if x + w > width + BBOX_EPS or y + h > height + BBOX_EPS:
        raise AnnotationError(
            f"{what} {bbox!r} extends past image size {width}x{height}", source, image_id
        )


@dataclass(eq=False)
class DatasetManifest:
    format: str
    image_root: Path
    annotation_source: Path
    categories: tuple
    category_ids: Mapping[str, int] = field(default_factory=dict)
    mask_root: Optional[Path] = None  # VOC SegmentationObject directory
    document: Optional[dict] = None  # parsed COCO JSON

    def __post_init__(self):
        if self.format not in FORMATS:
            raise SemanticPasteError(f"unknown dataset format {self.format!r}")
        if len(set(self.categories)) != len(self.categories):
            raise SemanticPasteError("dataset categories must be unique")

    def class_index(self, category: str) -> int:
        """Pixel value that marks ``category`` in class-indexed label images."""
        return self.category_ids[category]


def open_dataset(
    path: Union[str, Path], fmt: str, image_root: Union[str, Path, None] = None
) -> DatasetManifest:
    """Locate annotations and images for a dataset on disk.

    COCO: ``path`` is either the JSON file or a directory holding
    ``annotations.json`` and ``images/``. VOC: ``path`` is a directory with
    ``Annotations/`` and ``JPEGImages/`` (and optionally ``SegmentationObject/``).
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"dataset path {path} does not exist")
    if fmt == COCO:
        ann = path / "annotations.json" if path.is_dir() else path
        root = Path(image_root) if image_root else ann.parent / "images"
        with open(ann, encoding="utf-8") as fh:
            doc = json.load(fh)
        for key in ("images", "annotations", "categories"):
            if key not in doc:
                raise AnnotationError(f"missing top-level key {key!r}", ann)
        cats = [c["name"] for c in doc["categories"]]
        ids = {c["name"]: int(c["id"]) for c in doc["categories"]}
        if not cats:
            raise AnnotationError("no categories defined", ann)
        return DatasetManifest(COCO, root, ann, tuple(cats), ids, None, doc)
    if fmt == VOC:
        ann_dir = path / "Annotations"
        if not ann_dir.is_dir():
            raise FileNotFoundError(f"{ann_dir} not found")
        root = Path(image_root) if image_root else path / "JPEGImages"
        seg = path / "SegmentationObject"
        names = set()
        for xml_path in sorted(ann_dir.glob("*.xml")):
            try:
                tree = ET.parse(xml_path)
            except ET.ParseError:
                continue
            for obj in tree.getroot().iter("object"):
                name = (obj.findtext("name") or "").strip()
                if name:
                    names.add(name)
        if names and names <= set(VOC_CLASSES):
            cats = VOC_CLASSES
        else:
            cats = tuple(sorted(names))
        if not cats:
            raise AnnotationError("no object categories found", ann_dir)
        ids = {c: i + 1 for i, c in enumerate(cats)}
        return DatasetManifest(VOC, root, ann_dir, tuple(cats), ids, seg if seg.is_dir() else None)
    raise SemanticPasteError(f"unknown dataset format {fmt!r}")


def load_pixels(path: Path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.uint8).copy()


def read_dataset(
    manifest: DatasetManifest,
    errors: Optional[list] = None,
    with_pixels: bool = True,
    with_masks: bool = True,
) -> Iterator[AnnotatedImage]:
    """Yield every image of the dataset in a stable order.

    Malformed records are dropped and reported through ``errors`` (and the
    log); the stream continues. Images whose pixels cannot be read are
    skipped the same way.
    """
    if errors is None:
        errors = []
    if manifest.format == COCO:
        yield from _read_coco(manifest, errors, with_pixels, with_masks)
    else:
        yield from _read_voc(manifest, errors, with_pixels)


def _record_error(errors: list, exc: AnnotationError) -> None:
    logger.warning("%s", exc)
    errors.append(exc)


def _read_coco(manifest: DatasetManifest, errors: list, with_pixels: bool, with_masks: bool):
    doc = manifest.document
    src = manifest.annotation_source
    names = {int(c["id"]): c["name"] for c in doc["categories"]}
    by_image: dict[Any, list] = {}
    for pos, ann in enumerate(doc["annotations"]):
        by_image.setdefault(ann.get("image_id"), []).append((pos, ann))
    for img in doc["images"]:
        image_id = img.get("id")
        file_name = img.get("file_name", "")
        try:
            width, height = int(img["width"]), int(img["height"])
        except (KeyError, TypeError, ValueError):
            _record_error(errors, AnnotationError("image record lacks width/height", src, image_id))
            continue
        pixels = None
        if with_pixels:
            try:
                pixels = load_pixels(manifest.image_root / file_name)
            except (OSError, ValueError) as exc:
                _record_error(errors, AnnotationError(f"unreadable image: {exc}", src, image_id))
                continue
            if pixels.shape[:2] != (height, width):
                _record_error(
                    errors,
                    AnnotationError(
                        f"image is {pixels.shape[1]}x{pixels.shape[0]}, record says "
                        f"{width}x{height}",
                        src,
                        image_id,
                    ),
                )
                continue
        objects = []
        for pos, ann in by_image.get(image_id, []):
            where = f"{src}: annotations[{pos}]"
            try:
                cat = names.get(int(ann["category_id"]))
                if cat is None:
                    raise AnnotationError(f"unknown category_id {ann['category_id']}", where, image_id)
                bbox = tuple(float(v) for v in ann["bbox"])
                check_bbox(bbox, width, height, image_id, source=where)
            except AnnotationError as exc:
                _record_error(errors, exc)
                continue
            except (KeyError, TypeError, ValueError) as exc:
                _record_error(errors, AnnotationError(f"malformed record: {exc!r}", where, image_id))
                continue
            extra = {k: v for k, v in ann.items() if k not in ("bbox", "category_id", "synthetic")}
            mask = None
            if with_masks and ann.get("segmentation"):
                try:
                    mask = decode_segmentation(ann["segmentation"], width, height)
                except (ValueError, KeyError, TypeError) as exc:
                    logger.warning("%s: undecodable segmentation (%s); using box", where, exc)
            objects.append(
                ObjectAnnotation(cat, bbox, mask, bool(ann.get("synthetic", False)), extra)
            )
        extra = {k: v for k, v in img.items() if k not in ("id", "file_name", "width", "height")}
        yield AnnotatedImage(image_id, width, height, pixels, objects, file_name, extra)


def _find_image(root: Path, file_name: str, stem: str) -> Path:
    candidate = root / file_name
    if file_name and candidate.exists():
        return candidate
    for ext in IMAGE_EXTENSIONS:
        candidate = root / f"{stem}{ext}"
        if candidate.exists():
            return candidate
    raise FileNotFoundError(f"no image for {stem} under {root}")


def _voc_number(node, tag):
    text = node.findtext(tag)
    if text is None:
        raise ValueError(f"missing <{tag}>")
    return float(text)


def _read_voc(manifest: DatasetManifest, errors: list, with_pixels: bool):
    for xml_path in sorted(Path(manifest.annotation_source).glob("*.xml")):
        stem = xml_path.stem
        try:
            root = ET.parse(xml_path).getroot()
        except ET.ParseError as exc:
            _record_error(errors, AnnotationError(f"unparseable XML: {exc}", xml_path, stem))
            continue
        file_name = (root.findtext("filename") or "").strip()
        pixels = None
        size = root.find("size")
        try:
            width = int(float(size.findtext("width")))
            height = int(float(size.findtext("height")))
        except (AttributeError, TypeError, ValueError):
            width = height = None
        if with_pixels or width is None:
            try:
                pixels = load_pixels(_find_image(manifest.image_root, file_name, stem))
            except (OSError, ValueError) as exc:
                _record_error(errors, AnnotationError(f"unreadable image: {exc}", xml_path, stem))
                continue
            if width is None:
                height, width = pixels.shape[:2]
            elif pixels.shape[:2] != (height, width):
                _record_error(
                    errors,
                    AnnotationError("image size disagrees with <size>", xml_path, stem),
                )
                continue
            if not with_pixels:
                pixels = None
        objects = []
        for i, node in enumerate(root.findall("object")):
            try:
                name = (node.findtext("name") or "").strip()
                if not name:
                    raise ValueError("missing <name>")
                box = node.find("bndbox")
                if box is None:
                    raise ValueError("missing <bndbox>")
                xmin, ymin = _voc_number(box, "xmin"), _voc_number(box, "ymin")
                xmax, ymax = _voc_number(box, "xmax"), _voc_number(box, "ymax")
                bbox = (xmin - 1, ymin - 1, xmax - xmin + 1, ymax - ymin + 1)
                check_bbox(bbox, width, height, stem, i, xml_path)
            except AnnotationError as exc:
                _record_error(errors, exc)
                continue
            except ValueError as exc:
                _record_error(errors, AnnotationError(f"object {i}: {exc}", xml_path, stem))
                continue
            synthetic = (node.findtext("synthetic") or "").strip().lower() == "true"
            objects.append(
                ObjectAnnotation(name, bbox, None, synthetic, {"element": node, "index": i})
            )
        yield AnnotatedImage(stem, width, height, pixels, objects, file_name, {"tree": root})


# --- writing ---


def _output_stem(image: AnnotatedImage) -> str:
    if image.file_name:
        return Path(image.file_name).stem
    return str(image.image_id)


def save_png(path: Path, pixels: np.ndarray) -> None:
    # Fixed compression settings keep output bytes reproducible.
    Image.fromarray(pixels).save(path, format="PNG", optimize=False, compress_level=6)


class CocoWriter:
    def __init__(self, manifest: DatasetManifest, out_root: Path):
        self.manifest = manifest
        self.out_root = Path(out_root)
        self.image_dir = self.out_root / "images"
        self.image_dir.mkdir(parents=True, exist_ok=True)
        doc = manifest.document
        self._doc = {k: copy.deepcopy(v) for k, v in doc.items() if k not in ("images", "annotations")}
        self._images: list = []
        self._annotations: list = []
        self._cat_ids = dict(manifest.category_ids)
        ids = [a.get("id") for a in doc["annotations"] if isinstance(a.get("id"), int)]
        self._next_id = max(ids, default=0) + 1

    def _category_id(self, name: str) -> int:
        if name not in self._cat_ids:
            new_id = max(self._cat_ids.values(), default=0) + 1
            self._cat_ids[name] = new_id
            self._doc["categories"].append({"id": new_id, "name": name, "supercategory": "synthetic"})
        return self._cat_ids[name]

    def add(self, image: AnnotatedImage) -> None:
        file_name = f"{_output_stem(image)}.png"
        save_png(self.image_dir / file_name, image.pixels)
        entry = {"id": image.image_id, "file_name": file_name, "width": image.width, "height": image.height}
        entry.update(image.extra)
        self._images.append(entry)
        for obj in image.objects:
            ann = dict(obj.extra)
            if obj.synthetic and "id" not in ann:
                ann["id"] = self._next_id
                self._next_id += 1
            ann["image_id"] = image.image_id
            ann["category_id"] = self._category_id(obj.category)
            ann["bbox"] = [float(v) for v in obj.bbox]
            if obj.synthetic or obj.modified:
                if obj.mask is not None:
                    ann["segmentation"] = rle_encode(obj.mask)
                    ann["area"] = float(obj.mask.sum())
                else:
                    ann["area"] = float(obj.bbox[2] * obj.bbox[3])
                ann.setdefault("iscrowd", 0)
            if obj.synthetic:
                ann["synthetic"] = True
            self._annotations.append(ann)

    def close(self) -> Path:
        doc = dict(self._doc)
        doc["images"] = self._images
        doc["annotations"] = self._annotations
        path = self.out_root / "annotations.json"
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(doc, fh, indent=1)
            fh.write("\n")
        return path


def _set_text(parent, tag, text):
    node = parent.find(tag)
    if node is None:
        node = ET.SubElement(parent, tag)
    node.text = str(text)
    return node


def _voc_int(v: float) -> str:
    return str(int(round(v))) if abs(v - round(v)) < 1e-9 else repr(float(v))


class VocWriter:
    def __init__(self, manifest: DatasetManifest, out_root: Path):
        self.manifest = manifest
        self.out_root = Path(out_root)
        self.image_dir = self.out_root / "JPEGImages"
        self.ann_dir = self.out_root / "Annotations"
        self.image_dir.mkdir(parents=True, exist_ok=True)
        self.ann_dir.mkdir(parents=True, exist_ok=True)

    def _object_element(self, obj: ObjectAnnotation):
        node = obj.extra.get("element")
        if node is not None and not obj.modified:
            return copy.deepcopy(node)
        if node is not None:
            node = copy.deepcopy(node)
        else:
            node = ET.Element("object")
            _set_text(node, "name", obj.category)
            _set_text(node, "pose", "Unspecified")
            _set_text(node, "truncated", 0)
            _set_text(node, "difficult", 0)
        x, y, w, h = obj.bbox
        box = node.find("bndbox")
        if box is None:
            box = ET.SubElement(node, "bndbox")
        _set_text(box, "xmin", _voc_int(x + 1))
        _set_text(box, "ymin", _voc_int(y + 1))
        _set_text(box, "xmax", _voc_int(x + w))
        _set_text(box, "ymax", _voc_int(y + h))
        if obj.synthetic:
            _set_text(node, "synthetic", "true")
        return node

    def add(self, image: AnnotatedImage) -> None:
        stem = _output_stem(image)
        file_name = f"{stem}.png"
        save_png(self.image_dir / file_name, image.pixels)
        tree = image.extra.get("tree")
        root = copy.deepcopy(tree) if tree is not None else ET.Element("annotation")
        for node in root.findall("object"):
            root.remove(node)
        _set_text(root, "filename", file_name)
        size = root.find("size")
        if size is None:
            size = ET.SubElement(root, "size")
        _set_text(size, "width", image.width)
        _set_text(size, "height", image.height)
        _set_text(size, "depth", 3)
        for obj in image.objects:
            root.append(self._object_element(obj))
        ET.indent(root)
        ET.ElementTree(root).write(self.ann_dir / f"{stem}.xml", encoding="utf-8", xml_declaration=False)

    def close(self) -> Path:
        return self.ann_dir


def make_writer(manifest: DatasetManifest, out_root: Path):
    return (CocoWriter if manifest.format == COCO else VocWriter)(manifest, out_root)


def write_dataset(
    results: Iterable,
    manifest: DatasetManifest,
    out_root: Union[str, Path],
    counter=None,
    report_extra: Optional[dict] = None,
) -> dict:
    """Write augmented images and annotations in the manifest's format.

    ``results`` may hold plain :class:`AnnotatedImage` objects or augmentation
    results exposing ``image``, ``paste_records``, ``removed`` and ``skips``.
    A marker file flags the output as partial until everything is written.
    Returns the augmentation report, also saved as ``report.json``.
    """
    out_root = Path(out_root)
    out_root.mkdir(parents=True, exist_ok=True)
    marker = out_root / PARTIAL_MARKER
    marker.write_text("augmentation output incomplete\n")
    writer = make_writer(manifest, out_root)
    paste_counts: dict[str, int] = {}
    removed: list = []
    skips: dict[str, int] = {}
    n_images = 0
    try:
        for item in results:
            image = item if isinstance(item, AnnotatedImage) else item.image
            writer.add(image)
            n_images += 1
            for rec in getattr(item, "paste_records", ()):
                paste_counts[rec.category] = paste_counts.get(rec.category, 0) + 1
            for rem in getattr(item, "removed", ()):
                removed.append({"image_id": image.image_id, "category": rem.category,
                                "bbox": [float(v) for v in rem.bbox]})
            for reason in getattr(item, "skips", ()):
                skips[reason] = skips.get(reason, 0) + 1
        writer.close()
    except OSError as exc:
        raise SemanticPasteError(f"writing {out_root} failed: {exc}") from exc
    report = {
        "images": n_images,
        "paste_counts": dict(sorted(paste_counts.items())),
        "pastes": sum(paste_counts.values()),
        "skips": dict(sorted(skips.items())),
        "removed_by_occlusion": removed,
        "synthetic_annotation_flags": {"iscrowd": 0, "synthetic": True},
    }
    if counter is not None:
        report["category_counter"] = {"epoch": counter.epoch_id, "counts": counter.snapshot()}
    if report_extra:
        report.update(report_extra)
    with open(out_root / "report.json", "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")
    os.remove(marker)
    return report


def category_counts(images: Iterable[AnnotatedImage]) -> dict[str, int]:
    counts: dict[str, int] = {}
    for image in images:
        for obj in image.objects:
            counts[obj.category] = counts.get(obj.category, 0) + 1
    return counts
