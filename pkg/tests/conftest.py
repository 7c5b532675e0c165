import json
import xml.etree.ElementTree as ET
from pathlib import Path

import numpy as np
import pytest
from PIL import Image

from semantic_paste.annotations import VOC_CLASSES
from semantic_paste.embeddings import loads_embeddings
from semantic_paste.masks import rle_encode

TOY_CATEGORIES = ["giraffe", "zebra", "truck", "bus", "cat", "dog", "dining table", "person"]
TOY_VOCAB = ["giraffe", "zebra", "truck", "bus", "cat", "dog", "table", "person", "car",
             "bicycle", "bird", "horse", "sheep", "baseball", "hydrant", "parking", "field",
             "plant", "racket", "stoplight", "droplets"]


def toy_vectors(dim=16, seed=0):
    """Deterministic random vectors; animals, vehicles and furniture form loose clusters."""
    rng = np.random.default_rng(seed)
    centres = {g: rng.normal(size=dim) for g in ("animal", "vehicle", "home", "other")}
    group = {"giraffe": "animal", "zebra": "animal", "cat": "animal", "dog": "animal",
             "bird": "animal", "horse": "animal", "sheep": "animal",
             "truck": "vehicle", "bus": "vehicle", "car": "vehicle", "bicycle": "vehicle",
             "table": "home", "plant": "home", "person": "other"}
    out = {}
    for word in TOY_VOCAB:
        c = centres[group.get(word, "other")]
        out[word] = c + 0.6 * rng.normal(size=dim)
    return out


def glove_text(vectors):
    return "".join(
        word + " " + " ".join(repr(float(v)) for v in vec) + "\n" for word, vec in vectors.items()
    )


@pytest.fixture(scope="session")
def toy_store():
    return loads_embeddings(glove_text(toy_vectors()))


@pytest.fixture(scope="session")
def toy_embedding_file(tmp_path_factory):
    path = tmp_path_factory.mktemp("emb") / "vectors.txt"
    path.write_text(glove_text(toy_vectors()))
    return path


def _draw_scene(rng, width, height, n_objects, categories):
    pixels = rng.integers(0, 256, size=(height, width, 3), dtype=np.uint8) // 4 + 96
    objects = []
    for _ in range(n_objects):
        w = int(rng.integers(16, max(17, width // 2)))
        h = int(rng.integers(16, max(17, height // 2)))
        x = int(rng.integers(0, width - w + 1))
        y = int(rng.integers(0, height - h + 1))
        yy, xx = np.mgrid[0:height, 0:width]
        cx, cy = x + (w - 1) / 2, y + (h - 1) / 2
        mask = ((xx - cx) / (w / 2)) ** 2 + ((yy - cy) / (h / 2)) ** 2 <= 1.0
        color = rng.integers(0, 256, size=3, dtype=np.uint8)
        pixels[mask] = color
        cat = categories[int(rng.integers(len(categories)))]
        objects.append((cat, mask))
    # Later objects occlude earlier ones; recompute visible masks and tight boxes.
    visible = []
    taken = np.zeros((height, width), bool)
    for cat, mask in reversed(objects):
        vis = mask & ~taken
        taken |= mask
        if vis.sum() < 64:
            continue
        ys, xs = np.nonzero(vis)
        box = (int(xs.min()), int(ys.min()), int(xs.max() - xs.min() + 1),
               int(ys.max() - ys.min() + 1))
        if box[2] < 8 or box[3] < 8:
            continue
        visible.append((cat, vis, box))
    return pixels, list(reversed(visible))


def make_coco(root, n_images=12, size=(160, 120), categories=TOY_CATEGORIES, seed=0,
              per_image=(1, 4), weights=None, polygons=False):
    root = Path(root)
    (root / "images").mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    cats = [{"id": i + 1, "name": c, "supercategory": "thing"} for i, c in enumerate(categories)]
    ids = {c: i + 1 for i, c in enumerate(categories)}
    images, anns = [], []
    ann_id = 1
    for k in range(n_images):
        w, h = size
        n = int(rng.integers(per_image[0], per_image[1] + 1))
        pick = categories if weights is None else [
            categories[int(rng.choice(len(categories), p=weights))] for _ in range(8)]
        pixels, objs = _draw_scene(rng, w, h, n, pick)
        name = f"img_{k:04d}.png"
        Image.fromarray(pixels).save(root / "images" / name)
        images.append({"id": 100 + k, "file_name": name, "width": w, "height": h,
                       "license": 1, "date_captured": "2014-01-01"})
        for cat, mask, box in objs:
            if polygons:
                x, y, bw, bh = box
                seg = [[x, y, x + bw - 1, y, x + bw - 1, y + bh - 1, x, y + bh - 1]]
            else:
                seg = rle_encode(mask)
            anns.append({"id": ann_id, "image_id": 100 + k, "category_id": ids[cat],
                         "bbox": [float(v) for v in box], "area": float(mask.sum()),
                         "iscrowd": 0, "segmentation": seg})
            ann_id += 1
    doc = {"info": {"description": "toy"}, "licenses": [{"id": 1, "name": "none"}],
           "images": images, "annotations": anns, "categories": cats}
    with open(root / "annotations.json", "w") as fh:
        json.dump(doc, fh)
    return root


def make_voc(root, n_images=6, size=(160, 120), categories=("cat", "dog", "bus", "person"),
             seed=1, with_seg=True):
    root = Path(root)
    for d in ("Annotations", "JPEGImages", "SegmentationObject", "SegmentationClass"):
        (root / d).mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    if set(categories) <= set(VOC_CLASSES):
        class_ids = {c: VOC_CLASSES.index(c) + 1 for c in categories}
    else:
        class_ids = {c: i + 1 for i, c in enumerate(sorted(categories))}
    for k in range(n_images):
        w, h = size
        pixels, objs = _draw_scene(rng, w, h, int(rng.integers(1, 4)), list(categories))
        stem = f"2008_{k:06d}"
        Image.fromarray(pixels).save(root / "JPEGImages" / f"{stem}.png")
        ann = ET.Element("annotation")
        ET.SubElement(ann, "folder").text = "VOC2012"
        ET.SubElement(ann, "filename").text = f"{stem}.png"
        size_el = ET.SubElement(ann, "size")
        ET.SubElement(size_el, "width").text = str(w)
        ET.SubElement(size_el, "height").text = str(h)
        ET.SubElement(size_el, "depth").text = "3"
        ET.SubElement(ann, "segmented").text = "1"
        inst = np.zeros((h, w), np.uint8)
        cls = np.zeros((h, w), np.uint8)
        for i, (cat, mask, (x, y, bw, bh)) in enumerate(objs):
            o = ET.SubElement(ann, "object")
            ET.SubElement(o, "name").text = cat
            ET.SubElement(o, "pose").text = "Left"
            ET.SubElement(o, "truncated").text = "0"
            ET.SubElement(o, "difficult").text = "0"
            b = ET.SubElement(o, "bndbox")
            ET.SubElement(b, "xmin").text = str(x + 1)
            ET.SubElement(b, "ymin").text = str(y + 1)
            ET.SubElement(b, "xmax").text = str(x + bw)
            ET.SubElement(b, "ymax").text = str(y + bh)
            inst[mask] = i + 1
            cls[mask] = class_ids[cat]
        ET.ElementTree(ann).write(root / "Annotations" / f"{stem}.xml")
        if with_seg:
            Image.fromarray(inst).save(root / "SegmentationObject" / f"{stem}.png")
            Image.fromarray(cls).save(root / "SegmentationClass" / f"{stem}.png")
    return root


@pytest.fixture
def coco_dir(tmp_path):
    return make_coco(tmp_path / "coco")


@pytest.fixture
def voc_dir(tmp_path):
    return make_voc(tmp_path / "voc")
