import json

import numpy as np
import pytest
from PIL import Image

from semantic_paste.annotations import AnnotatedImage, ObjectAnnotation, open_dataset
from semantic_paste.bank import (
    ObjectBank,
    build_bank,
    extract_entry,
    load_bank,
    sample_instance,
    save_bank,
)
from semantic_paste.embeddings import loads_embeddings
from semantic_paste.errors import BankError, EmptyMaskError, ObjectSkipped, UnresolvedLabelError
from semantic_paste.masks import rect_mask

from conftest import make_coco, make_voc


def host_with(obj_mask, bbox=(10, 20, 40, 40), size=100, category="cat"):
    rng = np.random.default_rng(3)
    pixels = rng.integers(0, 256, (size, size, 3), dtype=np.uint8)
    return AnnotatedImage(1, size, size, pixels, [ObjectAnnotation(category, bbox, obj_mask)],
                          "one.png")


def test_extract_crop_dimensions(toy_store):
    image = host_with(rect_mask((10, 20, 40, 40), 100, 100))
    entry = extract_entry(image, 0, toy_store)
    assert entry.crop_image.shape == (40, 40, 3)
    assert entry.crop_mask.shape == (40, 40)
    assert entry.crop_mask.all()
    np.testing.assert_array_equal(entry.crop_image, image.pixels[20:60, 10:50])
    assert entry.source_bbox == (10, 20, 40, 40)


def test_extract_external_class_indexed(toy_store):
    image = host_with(None)
    labels = np.zeros((100, 100), np.int64)
    yy, xx = np.mgrid[0:100, 0:100]
    labels[(xx - 30) ** 2 + (yy - 40) ** 2 < 300] = 12
    labels[25:30, 12:20] = 3
    entry = extract_entry(image, 0, toy_store, "external", labels, 12)
    np.testing.assert_array_equal(entry.crop_mask, labels[20:60, 10:50] == 12)


def test_extract_skips(toy_store):
    with pytest.raises(ObjectSkipped) as exc:
        extract_entry(host_with(None), 0, toy_store)
    assert exc.value.reason == "no_mask"
    with pytest.raises(EmptyMaskError):
        extract_entry(host_with(np.zeros((100, 100), bool)), 0, toy_store)
    with pytest.raises(ObjectSkipped):
        extract_entry(host_with(rect_mask((0, 0, 5, 5), 100, 100), (0, 0, 5, 5)), 0, toy_store)
    with pytest.raises(UnresolvedLabelError):
        extract_entry(host_with(rect_mask((10, 20, 40, 40), 100, 100), category="yak"), 0,
                      toy_store)


def test_build_coco_bank(tmp_path, toy_store):
    manifest = open_dataset(make_coco(tmp_path / "c"), "coco")
    bank, report = build_bank(manifest, toy_store, "gt", tmp_path / "bank")
    assert len(bank) == sum(report.counts.values()) > 0
    ids = [i for ids in bank.by_category.values() for i in ids]
    assert sorted(ids) == sorted(e.entry_id for e in bank.entries)
    for e in bank.entries:
        assert e.crop_mask.shape == e.crop_image.shape[:2] == (e.height, e.width)
        assert e.crop_mask.any()
    assert (tmp_path / "bank" / "build_report.json").exists()


def test_bank_round_trip_bit_identical(tmp_path, toy_store):
    manifest = open_dataset(make_coco(tmp_path / "c"), "coco")
    bank, _ = build_bank(manifest, toy_store, "gt")
    save_bank(bank, tmp_path / "b")
    again = load_bank(tmp_path / "b")
    assert [e.entry_id for e in again.entries] == [e.entry_id for e in bank.entries]
    for a, b in zip(bank.entries, again.entries):
        np.testing.assert_array_equal(a.crop_image, b.crop_image)
        np.testing.assert_array_equal(a.crop_mask, b.crop_mask)
        np.testing.assert_array_equal(a.embedding.values, b.embedding.values)
        assert a.source_bbox == b.source_bbox


def test_rebuild_manifest_byte_identical(tmp_path, toy_store):
    manifest = open_dataset(make_coco(tmp_path / "c"), "coco")
    build_bank(manifest, toy_store, "gt", tmp_path / "b1")
    build_bank(manifest, toy_store, "gt", tmp_path / "b2")
    for name in ("manifest.json", "build_report.json"):
        assert (tmp_path / "b1" / name).read_bytes() == (tmp_path / "b2" / name).read_bytes()


def test_voc_gt_and_external_agree(tmp_path, toy_store):
    root = make_voc(tmp_path / "v")
    manifest = open_dataset(root, "voc")
    gt, _ = build_bank(manifest, toy_store, "gt")
    ext, _ = build_bank(manifest, toy_store, root / "SegmentationClass")
    assert len(gt) == len(ext)
    for a, b in zip(gt.entries, ext.entries):
        assert a.entry_id == b.entry_id
        # Fixture objects are single blobs, so the class region is the instance.
        np.testing.assert_array_equal(a.crop_mask, b.crop_mask)


def test_missing_mask_file_skips_that_image(tmp_path, toy_store):
    root = make_voc(tmp_path / "v")
    victim = sorted((root / "SegmentationObject").glob("*.png"))[0]
    victim.unlink()
    bank, report = build_bank(open_dataset(root, "voc"), toy_store, "gt")
    skipped = [s for s in report.skipped if s["reason"] == "missing_mask_file"]
    assert skipped and {s["image_id"] for s in skipped} == {victim.stem}
    assert victim.stem not in {e.source_image_id for e in bank.entries}


def test_empty_dataset_is_fatal(tmp_path, toy_store):
    root = make_coco(tmp_path / "c", n_images=2)
    doc = json.loads((root / "annotations.json").read_text())
    doc["annotations"] = []
    (root / "annotations.json").write_text(json.dumps(doc))
    with pytest.raises(BankError):
        build_bank(open_dataset(root, "coco"), toy_store, "gt")


def test_unresolved_label_propagates(tmp_path):
    store = loads_embeddings("cat 1 0\n")
    with pytest.raises(UnresolvedLabelError):
        build_bank(open_dataset(make_coco(tmp_path / "c"), "coco"), store, "gt")


def test_crowd_objects_skipped(tmp_path, toy_store):
    root = make_coco(tmp_path / "c")
    doc = json.loads((root / "annotations.json").read_text())
    doc["annotations"][0]["iscrowd"] = 1
    (root / "annotations.json").write_text(json.dumps(doc))
    _, report = build_bank(open_dataset(root, "coco"), toy_store, "gt")
    assert report.to_dict()["skip_reasons"].get("crowd") == 1


def test_missing_bank_dir():
    with pytest.raises(BankError):
        load_bank("/nonexistent/bank")


def _bank(toy_store, sizes):
    from semantic_paste.bank import BankEntry
    entries = []
    for cat, n in sizes.items():
        for k in range(n):
            entries.append(BankEntry(f"{cat}-{k}", cat, toy_store.resolve(cat), k, (0, 0, 8, 8),
                                     np.zeros((8, 8, 3), np.uint8), np.ones((8, 8), bool)))
    return ObjectBank(entries)


def test_sample_singleton(toy_store):
    bank = _bank(toy_store, {"cat": 1})
    rng = np.random.default_rng(0)
    assert {sample_instance(bank, "cat", rng).entry_id for _ in range(20)} == {"cat-0"}


def test_sample_replay(toy_store):
    bank = _bank(toy_store, {"dog": 5})

    def draws(seed):
        rng = np.random.default_rng(seed)
        return [sample_instance(bank, "dog", rng).entry_id for _ in range(30)]

    assert draws(4) == draws(4)
    assert len(set(draws(4))) > 1


def test_sample_uniform(toy_store):
    bank = _bank(toy_store, {"bus": 4})
    rng = np.random.default_rng(1234)
    counts = {}
    for _ in range(10_000):
        e = sample_instance(bank, "bus", rng).entry_id
        counts[e] = counts.get(e, 0) + 1
    sigma = np.sqrt(10_000 * 0.25 * 0.75)
    assert len(counts) == 4
    assert all(abs(c - 2500) <= 4 * sigma for c in counts.values())


def test_sample_unknown_category(toy_store):
    with pytest.raises(BankError):
        sample_instance(_bank(toy_store, {"cat": 1}), "dog", np.random.default_rng(0))


def test_duplicate_ids_rejected(toy_store):
    bank = _bank(toy_store, {"cat": 1})
    with pytest.raises(BankError):
        ObjectBank(bank.entries + bank.entries)


def test_mask_files_are_one_bit(tmp_path, toy_store):
    build_bank(open_dataset(make_coco(tmp_path / "c", n_images=2), "coco"), toy_store, "gt",
               tmp_path / "b")
    for p in (tmp_path / "b" / "masks").glob("*.png"):
        with Image.open(p) as im:
            assert im.mode == "1"
