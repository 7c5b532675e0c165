import json
import xml.etree.ElementTree as ET

import numpy as np
import pytest

from semantic_paste.annotations import (
    AnnotatedImage,
    ObjectAnnotation,
    check_bbox,
    open_dataset,
    read_dataset,
    write_dataset,
)
from semantic_paste.compositor import AugmentResult, PasteRecord, Placement, update_occlusions
from semantic_paste.errors import AnnotationError, SemanticPasteError
from semantic_paste.masks import rect_mask

from conftest import make_coco, make_voc


def summary(images):
    """Format-independent view of a dataset for comparisons."""
    out = []
    for im in images:
        objs = sorted(
            (o.category, tuple(round(v, 6) for v in o.bbox), o.synthetic,
             None if o.mask is None else o.mask.tobytes())
            for o in im.objects)
        out.append((str(im.image_id), im.width, im.height, im.pixels.tobytes(), objs))
    return sorted(out)


def test_coco_reads_categories(coco_dir):
    manifest = open_dataset(coco_dir, "coco")
    assert "dining table" in manifest.categories
    images = list(read_dataset(manifest))
    assert len(images) == 12
    for im in images:
        im.validate()
        for o in im.objects:
            assert o.mask.shape == (im.height, im.width)


def test_coco_json_file_path(coco_dir):
    manifest = open_dataset(coco_dir / "annotations.json", "coco")
    assert manifest.image_root == coco_dir / "images"


def test_voc_canonical_categories(voc_dir):
    manifest = open_dataset(voc_dir, "voc")
    assert len(manifest.categories) == 20
    assert manifest.class_index("aeroplane") == 1 and manifest.class_index("tvmonitor") == 20


def test_voc_boxes_are_one_based(voc_dir):
    xml = ET.parse(sorted((voc_dir / "Annotations").glob("*.xml"))[0]).getroot()
    box = xml.find("object/bndbox")
    first = next(read_dataset(open_dataset(voc_dir, "voc"))).objects[0]
    assert first.bbox[0] == float(box.findtext("xmin")) - 1
    assert first.bbox[2] == float(box.findtext("xmax")) - float(box.findtext("xmin")) + 1


@pytest.mark.parametrize("bbox", [(0, 0, 0, 5), (-1, 0, 4, 4), (5, 5, 10, 2), (0, 0, 3)])
def test_check_bbox_rejects(bbox):
    with pytest.raises(AnnotationError):
        check_bbox(bbox, 10, 10, image_id=7)


def test_overflowing_bbox_is_a_record_error(tmp_path):
    root = make_coco(tmp_path / "c", n_images=3)
    doc = json.loads((root / "annotations.json").read_text())
    bad = doc["annotations"][0]
    bad["bbox"][0] = 150.0
    (root / "annotations.json").write_text(json.dumps(doc))
    errors = []
    images = list(read_dataset(open_dataset(root, "coco"), errors))
    assert len(images) == 3
    assert len(errors) == 1 and errors[0].image_id == bad["image_id"]
    assert str(bad["image_id"]) in str(errors[0])


def test_unreadable_image_skipped(tmp_path):
    root = make_coco(tmp_path / "c", n_images=3)
    sorted((root / "images").glob("*.png"))[1].write_bytes(b"junk")
    errors = []
    assert len(list(read_dataset(open_dataset(root, "coco"), errors))) == 2
    assert errors


def test_voc_broken_xml_skipped(voc_dir):
    (voc_dir / "Annotations" / "broken.xml").write_text("<annotation><object>")
    errors = []
    images = list(read_dataset(open_dataset(voc_dir, "voc"), errors))
    assert len(images) == 6 and errors[0].image_id == "broken"


def test_unknown_format(coco_dir):
    with pytest.raises(SemanticPasteError):
        open_dataset(coco_dir, "yolo")


@pytest.mark.parametrize("fmt,maker", [("coco", make_coco), ("voc", make_voc)])
def test_round_trip_fixed_point(tmp_path, fmt, maker):
    manifest = open_dataset(maker(tmp_path / "src"), fmt)
    first = list(read_dataset(manifest))
    write_dataset(first, manifest, tmp_path / "a")
    again_manifest = open_dataset(tmp_path / "a", fmt)
    second = list(read_dataset(again_manifest))
    assert summary(first) == summary(second)
    write_dataset(second, again_manifest, tmp_path / "b")
    for p in sorted((tmp_path / "a").rglob("*")):
        if p.is_file():
            assert p.read_bytes() == (tmp_path / "b" / p.relative_to(tmp_path / "a")).read_bytes()


def _with_paste(image, category="giraffe"):
    h, w = image.height, image.width
    mask = rect_mask((0, 0, w, h // 2), w, h)
    out = image.copy()
    kept, removed = update_occlusions(out.objects, mask, 0.5)
    kept.append(ObjectAnnotation(category, (0.0, 0.0, float(w), float(h // 2)), mask, True,
                                 modified=True))
    out.objects = kept
    record = PasteRecord("e-000", category, Placement((w / 2, h / 4), w, h // 2, 0),
                         (0, 0, w, h // 2))
    return AugmentResult(out, [record], removed)


def test_paste_counts_and_removals_reported(tmp_path, coco_dir):
    manifest = open_dataset(coco_dir, "coco")
    images = list(read_dataset(manifest))
    results = [_with_paste(images[0])] + images[1:]
    report = write_dataset(results, manifest, tmp_path / "out")
    assert report["paste_counts"] == {"giraffe": 1}
    written = json.loads((tmp_path / "out" / "annotations.json").read_text())
    n_in = sum(len(im.objects) for im in images)
    n_removed = len(results[0].removed)
    assert len(written["annotations"]) == n_in + 1 - n_removed
    assert len(report["removed_by_occlusion"]) == n_removed
    synth = [a for a in written["annotations"] if a.get("synthetic")]
    assert len(synth) == 1 and synth[0]["iscrowd"] == 0
    ids = [a["id"] for a in written["annotations"]]
    assert len(set(ids)) == len(ids)
    assert not (tmp_path / "out" / "_PARTIAL_OUTPUT").exists()


def test_new_category_appended(tmp_path):
    root = make_coco(tmp_path / "c", n_images=2, categories=["cat", "dog"])
    manifest = open_dataset(root, "coco")
    images = list(read_dataset(manifest))
    write_dataset([_with_paste(images[0], "zebra"), images[1]], manifest, tmp_path / "o")
    doc = json.loads((tmp_path / "o" / "annotations.json").read_text())
    assert [c["name"] for c in doc["categories"]] == ["cat", "dog", "zebra"]


def test_voc_synthetic_flag_written(tmp_path, voc_dir):
    manifest = open_dataset(voc_dir, "voc")
    images = list(read_dataset(manifest))
    write_dataset([_with_paste(images[0], "dog")] + images[1:], manifest, tmp_path / "o")
    again = next(read_dataset(open_dataset(tmp_path / "o", "voc")))
    assert [o.synthetic for o in again.objects].count(True) == 1


def test_zero_paste_write_is_identity(tmp_path, voc_dir):
    manifest = open_dataset(voc_dir, "voc")
    images = list(read_dataset(manifest))
    report = write_dataset(images, manifest, tmp_path / "o")
    assert report["pastes"] == 0
    assert summary(read_dataset(open_dataset(tmp_path / "o", "voc"))) == summary(images)


def test_copy_is_deep():
    im = AnnotatedImage(1, 4, 4, np.zeros((4, 4, 3), np.uint8),
                        [ObjectAnnotation("cat", (0, 0, 2, 2), np.ones((4, 4), bool))])
    c = im.copy()
    c.pixels[0, 0] = 9
    c.objects[0].mask[0, 0] = False
    assert im.pixels[0, 0, 0] == 0 and im.objects[0].mask[0, 0]
