"""
End-to-end runs: one augmentation epoch over a dataset, statistics and previews.

Determinism contract: every image draws from its own random stream seeded
by ``(seed, epoch, image_id)``. Selection (which reads and bumps the shared
category counter) runs first, on the calling thread, over annotations only
and in a per-epoch order fixed by ``(seed, epoch)``. The pixel work then
streams in dataset order, spread over worker threads, so the worker count
never changes the output.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import time
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence, Union

import numpy as np

from .annotations import (
    AnnotatedImage,
    DatasetManifest,
    category_counts,
    read_dataset,
    write_dataset,
)
from .bank import ObjectBank
from .compositor import (
    AugmentResult,
    apply_pastes,
    composite,
    draw_placement,
    draw_scale,
    plan_pastes,
    resize_instance,
)
from .config import AugmentationConfig, load_ap_table
from .embeddings import EmbeddingStore
from .errors import NoHostObjectsError, SemanticPasteError, UnplaceableError, UnresolvedLabelError
from .matcher import BASELINE_MAP, COOCCURRENCE, CategoryCounter, build_cooccurrence, reset_epoch

logger = logging.getLogger(__name__)

COOCCURRENCE_CACHE = "cooccurrence.json"
# Fixed stream key for the per-epoch visiting permutation.
VISIT_KEY = 0x5649534954


def image_rng(seed: int, epoch: int, image_id) -> np.random.Generator:
    """Independent generator for one image in one epoch."""
    digest = hashlib.sha256(str(image_id).encode("utf-8")).digest()
    key = int.from_bytes(digest[:8], "little")
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(epoch), key]))


def check_labels(labels: Iterable[str], store: EmbeddingStore) -> None:
    """Resolve every label up front; raise listing all unresolved ones."""
    missing = []
    for label in sorted(set(labels)):
        try:
            store.resolve(label)
        except UnresolvedLabelError:
            missing.append(label)
    if missing:
        raise UnresolvedLabelError(", ".join(missing))


@dataclass
class RunReport:
    epoch: int
    fingerprint: str
    paste_counts: dict = field(default_factory=dict)
    skip_reasons: dict = field(default_factory=dict)
    similarity_flops: dict = field(default_factory=dict)
    read_errors: list = field(default_factory=list)
    wall_time: float = 0.0
    dataset: dict = field(default_factory=dict)
    per_image: list = field(default_factory=list)

    @property
    def pastes(self) -> int:
        return sum(self.paste_counts.values())


def _load_cooccurrence(manifest: DatasetManifest, bank_dir: Optional[Path]) -> dict:
    if bank_dir is not None:
        cache = Path(bank_dir) / COOCCURRENCE_CACHE
        if cache.exists():
            with open(cache, encoding="utf-8") as fh:
                return json.load(fh)
    table = build_cooccurrence(read_dataset(manifest, with_pixels=False, with_masks=False))
    if bank_dir is not None:
        with open(Path(bank_dir) / COOCCURRENCE_CACHE, "w", encoding="utf-8") as fh:
            json.dump(table, fh, indent=1, sort_keys=True)
            fh.write("\n")
    return table


def prepare_strategy(config: AugmentationConfig, manifest: DatasetManifest,
                     bank_dir: Optional[Path] = None):
    ap = load_ap_table(config.ap_table_path) if config.strategy == BASELINE_MAP and \
        config.ap_table_path else None
    cooc = _load_cooccurrence(manifest, bank_dir) if config.strategy == COOCCURRENCE else None
    return config.selection_strategy(ap, cooc)


def _process(host: AnnotatedImage, decisions, bank, params, rng, flops) -> AugmentResult:
    result = apply_pastes(host, decisions, bank, params, rng)
    result.similarity_flops = flops
    return result


def visit_order(hosts: Sequence[AnnotatedImage], config: AugmentationConfig, epoch: int):
    """Indices of ``hosts`` in the order they draw from the category counter."""
    if config.visit_order == "dataset":
        return list(range(len(hosts)))
    rng = np.random.default_rng(np.random.SeedSequence([int(config.seed), int(epoch), VISIT_KEY]))
    return [int(i) for i in rng.permutation(len(hosts))]


def _plan_epoch(hosts, bank, store, config, counter, strategy, epoch) -> dict:
    """Selection for every image: ``image_id -> (decisions, flops)`` or a skip reason."""
    plans: dict = {}
    for i in visit_order(hosts, config, epoch):
        host = hosts[i]
        select_rng, _ = image_rng(config.seed, epoch, host.image_id).spawn(2)
        if config.probability < 1.0 and select_rng.random() >= config.probability:
            plans[str(host.image_id)] = "not_sampled"
            continue
        try:
            plans[str(host.image_id)] = plan_pastes(
                host, bank, store, config, counter, select_rng, strategy)
        except NoHostObjectsError:
            plans[str(host.image_id)] = "no_host_objects"
    return plans


def run_epoch(
    manifest: DatasetManifest,
    bank: ObjectBank,
    store: EmbeddingStore,
    config: AugmentationConfig,
    out_root: Union[str, Path],
    epoch: int = 0,
    workers: int = 1,
    counter: Optional[CategoryCounter] = None,
    bank_dir: Optional[Path] = None,
) -> RunReport:
    """Augment every image once and write the result under ``out_root``.

    The category counter is reset to the start of ``epoch`` first. Raises
    :class:`UnresolvedLabelError` before touching any image if a dataset or
    bank label has no embedding.
    """
    started = time.perf_counter()
    out_root = Path(out_root)
    read_errors: list = []
    # Annotations only; pixels are streamed later in the write pass.
    hosts = list(read_dataset(manifest, [], with_pixels=False, with_masks=False))
    dataset_counts = category_counts(hosts)
    check_labels(set(bank.categories) | set(dataset_counts), store)

    if counter is None:
        initial = dataset_counts if config.counter_init == "dataset_frequency" else None
        counter = CategoryCounter(bank.categories, epoch - 1, initial)
    reset_epoch(counter, epoch)
    strategy = prepare_strategy(config, manifest, bank_dir)
    params = config.placement_params()
    report = RunReport(epoch, config.fingerprint())
    plans = _plan_epoch(hosts, bank, store, config, counter, strategy, epoch)

    def results() -> Iterable[AugmentResult]:
        pool = ThreadPoolExecutor(max_workers=workers) if workers > 1 else None
        pending: deque = deque()
        try:
            for host in read_dataset(manifest, read_errors):
                plan = plans.get(str(host.image_id))
                if isinstance(plan, str):
                    pending.append(AugmentResult(host, skips=[plan],
                                                 skipped=plan == "no_host_objects"))
                else:
                    decisions, flops = plan
                    _, paste_rng = image_rng(config.seed, epoch, host.image_id).spawn(2)
                    args = (host, decisions, bank, params, paste_rng, flops)
                    pending.append(pool.submit(_process, *args) if pool else _process(*args))
                while len(pending) > max(1, 4 * workers):
                    yield _resolve(pending.popleft())
            while pending:
                yield _resolve(pending.popleft())
        finally:
            if pool is not None:
                pool.shutdown(wait=True)

    def tracked():
        for res in results():
            for rec in res.paste_records:
                report.paste_counts[rec.category] = report.paste_counts.get(rec.category, 0) + 1
            for reason in res.skips:
                report.skip_reasons[reason] = report.skip_reasons.get(reason, 0) + 1
            report.similarity_flops[str(res.image.image_id)] = res.similarity_flops
            report.per_image.append({
                "image_id": res.image.image_id,
                "pastes": [
                    {"category": rec.category, "entry_id": rec.entry_id,
                     "anchor_index": rec.placement.host_anchor_index,
                     "bbox": [float(v) for v in rec.bbox]}
                    for rec in res.paste_records
                ],
            })
            yield res

    extra = {
        "epoch": epoch,
        "config_fingerprint": report.fingerprint,
        "config": config.to_dict(),
        "similarity_flops_per_image": report.similarity_flops,
    }
    write_dataset(tracked(), manifest, out_root, counter, extra)
    report.paste_counts = dict(sorted(report.paste_counts.items()))
    report.skip_reasons = dict(sorted(report.skip_reasons.items()))
    report.read_errors = [str(e) for e in read_errors]
    report.dataset = dict(sorted(dataset_counts.items()))
    _amend_report(out_root, report)
    report.wall_time = time.perf_counter() - started
    with open(out_root / "timing.json", "w", encoding="utf-8") as fh:
        json.dump({"wall_time_s": report.wall_time}, fh)
        fh.write("\n")
    with open(out_root / "augmentation_manifest.json", "w", encoding="utf-8") as fh:
        json.dump(
            {"config_fingerprint": report.fingerprint, "epoch": epoch, "format": manifest.format,
             "config": config.to_dict()},
            fh, indent=2, sort_keys=True,
        )
        fh.write("\n")
    return report


def _resolve(item):
    return item.result() if hasattr(item, "result") else item


def _amend_report(out_root: Path, report: RunReport) -> None:
    path = out_root / "report.json"
    with open(path, encoding="utf-8") as fh:
        data = json.load(fh)
    data["read_errors"] = report.read_errors
    data["dataset_category_counts"] = report.dataset
    data["per_image"] = report.per_image
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(data, fh, indent=2, sort_keys=True)
        fh.write("\n")


def run_epochs(manifest, bank, store, config, out_root, first_epoch=0, workers=1,
               bank_dir=None) -> list[RunReport]:
    """``config.epochs`` consecutive epochs sharing one counter, written to ``epoch_NNN/``."""
    out_root = Path(out_root)
    if config.epochs == 1:
        return [run_epoch(manifest, bank, store, config, out_root, first_epoch, workers,
                          bank_dir=bank_dir)]
    dataset_counts = None
    if config.counter_init == "dataset_frequency":
        dataset_counts = category_counts(read_dataset(manifest, with_pixels=False, with_masks=False))
    counter = CategoryCounter(bank.categories, first_epoch - 1, dataset_counts)
    reports = []
    for e in range(first_epoch, first_epoch + config.epochs):
        reports.append(run_epoch(manifest, bank, store, config, out_root / f"epoch_{e:03d}", e,
                                 workers, counter, bank_dir))
    return reports


# --- statistics ---


def balance_metrics(counts: dict) -> dict:
    """Max/min ratio and Shannon entropy (bits) over categories with nonzero count."""
    values = [v for v in counts.values() if v > 0]
    if not values:
        raise SemanticPasteError("no instances to summarise")
    total = float(sum(values))
    p = np.array(values, dtype=np.float64) / total
    entropy = float(-(p * np.log2(p)).sum())
    return {
        "categories": len(values),
        "instances": int(total),
        "max_min_ratio": max(values) / min(values),
        "entropy_bits": entropy,
        "normalized_entropy": entropy / math.log2(len(values)) if len(values) > 1 else 1.0,
    }


def dataset_stats(before: dict, after: Optional[dict] = None) -> dict:
    stats = {"before": balance_metrics(before), "per_category": {}}
    cats = sorted(set(before) | set(after or {}))
    for c in cats:
        row = {"before": before.get(c, 0)}
        if after is not None:
            row["after"] = after.get(c, 0)
        stats["per_category"][c] = row
    if after is not None:
        stats["after"] = balance_metrics(after)
    return stats


# --- previews ---


@dataclass
class PreviewVariant:
    original: AnnotatedImage
    augmented: AnnotatedImage
    entry_id: str
    category: str
    bbox: tuple
    anchor_bbox: tuple


def preview_variants(
    host: AnnotatedImage,
    bank: ObjectBank,
    store: EmbeddingStore,
    config: AugmentationConfig,
    n_variants: int = 1,
) -> list[PreviewVariant]:
    """Paste ``n_variants`` different instances of one selected category into ``host``.

    The category and anchor are chosen once; instances are drawn without
    replacement while the category has enough of them.
    """
    rng = image_rng(config.seed, 0, host.image_id)
    select_rng, paste_rng = rng.spawn(2)
    counter = CategoryCounter(bank.categories)
    try:
        decisions, _ = plan_pastes(host, bank, store, config, counter, select_rng)
    except NoHostObjectsError:
        raise SemanticPasteError(f"image {host.image_id} has no annotations to anchor a paste")
    decision = decisions[0]
    params = config.placement_params()
    ids = list(bank.by_category[decision.bank_category])
    order = [ids[i] for i in paste_rng.permutation(len(ids))]
    variants = []
    cursor = 0
    while len(variants) < n_variants and cursor < len(order) * (1 + n_variants):
        entry = bank[order[cursor % len(order)]]
        cursor += 1
        try:
            size = draw_scale(entry, host.width, params, paste_rng)
            crop, mask = resize_instance(entry, *size)
            placement = draw_placement(host, decision.host_object_index, size, params, paste_rng)
            out = composite(host, crop, mask, placement, params, decision.bank_category,
                            entry.entry_id, decision.score)
        except UnplaceableError:
            continue
        variants.append(
            PreviewVariant(host, out.image, entry.entry_id, decision.bank_category,
                           out.paste_record.bbox, host.objects[decision.host_object_index].bbox)
        )
    return variants


def find_images(manifest: DatasetManifest, image_ids: Sequence[str]) -> list[AnnotatedImage]:
    wanted = {str(i) for i in image_ids}
    found = {}
    for image in read_dataset(manifest):
        key = str(image.image_id)
        stem = Path(image.file_name).stem if image.file_name else key
        for k in (key, stem):
            if k in wanted:
                found[k] = image
    missing = [i for i in image_ids if str(i) not in found]
    if missing:
        raise SemanticPasteError(f"unknown image id(s): {', '.join(map(str, missing))}")
    return [found[str(i)] for i in image_ids]
