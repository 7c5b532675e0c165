"""Command-line entry point: ``semantic-paste {build-bank,augment,stats,preview,flops}``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 fatal I/O error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
from pathlib import Path

from . import __version__
from .annotations import FORMATS, category_counts, open_dataset, read_dataset
from .bank import GROUND_TRUTH, build_bank, load_bank
from .config import EMBEDDINGS_ENV, load_config
from .embeddings import METRICS, estimate_similarity_flops, load_embeddings
from .errors import ConfigurationError, SemanticPasteError
from .imaging import BLEND_MODES
from .matcher import STRATEGIES
from .pipeline import dataset_stats, find_images, preview_variants, run_epochs
from .plots import render_category_counts, render_preview

logger = logging.getLogger("semantic_paste")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_IO = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _existing_path(value: str) -> Path:
    path = Path(value)
    if not path.exists():
        raise argparse.ArgumentTypeError(f"{value} does not exist")
    return path


def _add_dataset_args(p):
    p.add_argument("--dataset", required=True, type=_existing_path,
                   help="COCO JSON file or dataset directory")
    p.add_argument("--format", required=True, choices=FORMATS)
    p.add_argument("--image-root", type=Path, default=None,
                   help="image directory (COCO only; default: images/ next to the JSON)")


def _add_embedding_arg(p):
    p.add_argument("--embeddings", default=None,
                   help=f"GloVe-format vector file (default: ${EMBEDDINGS_ENV})")
    p.add_argument("--embedding-dim", type=int, default=None)


def _add_config_args(p):
    p.add_argument("--config", type=_existing_path, default=None, help="YAML config file")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--strategy", choices=STRATEGIES, default=None)
    p.add_argument("--top-n", dest="top_n", type=int, default=None)
    p.add_argument("--metric", choices=METRICS, default=None)
    p.add_argument("--similarity-aggregation", choices=("max", "mean"), default=None)
    p.add_argument("--scale-range", nargs=2, type=float, default=None, metavar=("LO", "HI"))
    p.add_argument("--area-bounds", nargs=2, type=float, default=None, metavar=("MIN", "MAX"))
    p.add_argument("--epsilon-frac", type=float, default=None)
    p.add_argument("--objects-per-image", type=int, default=None)
    p.add_argument("--blending", choices=BLEND_MODES, default=None)
    p.add_argument("--visibility-threshold", type=float, default=None)
    p.add_argument("--max-retries", type=int, default=None)
    p.add_argument("--counter-init", choices=("zero", "dataset_frequency"), default=None)
    p.add_argument("--visit-order", choices=("shuffled", "dataset"), default=None,
                   help="order in which images draw from the category counter")
    p.add_argument("--probability", type=float, default=None,
                   help="chance each image is augmented (extension; default 1.0)")
    p.add_argument("--ap-table", dest="ap_table_path", default=None,
                   help="per-category AP file for the baseline_map strategy")


CONFIG_FLAGS = (
    "seed", "strategy", "top_n", "metric", "similarity_aggregation", "scale_range", "area_bounds",
    "epsilon_frac", "objects_per_image", "blending", "visibility_threshold", "max_retries",
    "counter_init", "visit_order", "probability", "ap_table_path", "epochs",
)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="semantic-paste", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("build-bank", help="extract the object bank from a dataset")
    _add_dataset_args(p)
    _add_embedding_arg(p)
    p.add_argument("--masks", default=GROUND_TRUTH,
                   help="'gt' for ground-truth masks, or a directory of class-indexed PNGs")
    p.add_argument("--out", required=True, type=Path)

    p = sub.add_parser("augment", help="run one augmentation epoch")
    _add_dataset_args(p)
    _add_embedding_arg(p)
    _add_config_args(p)
    p.add_argument("--bank", required=True, type=_existing_path)
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--epoch", type=int, default=0, help="epoch id (counter scope)")
    p.add_argument("--epochs", type=int, default=None,
                   help="run several epochs into OUT/epoch_NNN (default 1)")
    p.add_argument("--workers", type=int, default=1)

    p = sub.add_parser("stats", help="per-category counts and balance metrics")
    p.add_argument("--dataset", type=_existing_path, default=None)
    p.add_argument("--format", choices=FORMATS, default=None)
    p.add_argument("--image-root", type=Path, default=None)
    p.add_argument("--augmented", type=_existing_path, default=None,
                   help="augmented dataset (same format) to compare against")
    p.add_argument("--report", type=_existing_path, default=None,
                   help="report.json of an augment run")
    p.add_argument("--out-dir", type=Path, default=None, help="write stats.csv/json/png here")

    p = sub.add_parser("preview", help="side-by-side original/augmented figures")
    _add_dataset_args(p)
    _add_embedding_arg(p)
    _add_config_args(p)
    p.add_argument("--bank", required=True, type=_existing_path)
    p.add_argument("--image-id", dest="image_ids", action="append", required=True)
    p.add_argument("--n-variants", type=int, default=1)
    p.add_argument("--out-dir", required=True, type=Path)

    p = sub.add_parser("flops", help="similarity cost per image")
    p.add_argument("--bank-categories", type=int, required=True)
    p.add_argument("--image-objects", type=int, required=True)
    p.add_argument("--dimension", type=int, required=True)
    return parser


def _config_from(args):
    overrides = {k: getattr(args, k, None) for k in CONFIG_FLAGS}
    if getattr(args, "embeddings", None):
        overrides["embedding_path"] = args.embeddings
    return load_config(args.config, overrides)


def _store(path, dim, substitutions=None):
    path = path or os.environ.get(EMBEDDINGS_ENV)
    if not path:
        raise UsageError(f"no embeddings given (use --embeddings or ${EMBEDDINGS_ENV})")
    store = load_embeddings(path, dim)
    return store.with_substitutions(substitutions) if substitutions else store


def cmd_build_bank(args) -> int:
    manifest = open_dataset(args.dataset, args.format, args.image_root)
    store = _store(args.embeddings, args.embedding_dim)
    bank, report = build_bank(manifest, store, args.masks, args.out)
    summary = report.to_dict()
    print(f"bank: {len(bank)} entries, {len(bank.categories)} categories -> {args.out}")
    for cat, n in summary["per_category"].items():
        print(f"  {cat}\t{n}")
    if summary["skip_reasons"]:
        print("skipped: " + ", ".join(f"{k}={v}" for k, v in summary["skip_reasons"].items()))
    return EXIT_OK


def cmd_augment(args) -> int:
    config = _config_from(args)
    manifest = open_dataset(args.dataset, args.format, args.image_root)
    store = _store(config.embedding_path, args.embedding_dim, config.substitutions)
    bank = load_bank(args.bank)
    if args.workers < 1:
        raise UsageError("--workers must be at least 1")
    reports = run_epochs(manifest, bank, store, config, args.out, args.epoch, args.workers,
                         bank_dir=args.bank)
    for r in reports:
        skips = ", ".join(f"{k}={v}" for k, v in r.skip_reasons.items()) or "none"
        print(f"epoch {r.epoch}: {r.pastes} pastes, skips: {skips}, "
              f"{r.wall_time:.2f}s, fingerprint {r.fingerprint[:12]}")
    return EXIT_OK


def cmd_stats(args) -> int:
    if args.dataset is None and args.report is None:
        raise UsageError("give --dataset and/or --report")
    if args.dataset is not None and args.format is None:
        raise UsageError("--format is required with --dataset")
    before = after = None
    if args.dataset is not None:
        manifest = open_dataset(args.dataset, args.format, args.image_root)
        before = category_counts(read_dataset(manifest, with_pixels=False, with_masks=False))
        if args.augmented is not None:
            aug = open_dataset(args.augmented, args.format)
            after = category_counts(read_dataset(aug, with_pixels=False, with_masks=False))
    if args.report is not None:
        with open(args.report, encoding="utf-8") as fh:
            pasted = json.load(fh).get("paste_counts", {})
        if before is None:
            before = pasted
        elif after is None:
            after = {c: before.get(c, 0) + pasted.get(c, 0) for c in set(before) | set(pasted)}
    if not before or not any(before.values()):
        raise SemanticPasteError("dataset has no annotated instances")
    stats = dataset_stats(before, after)

    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["category", "before"] + (["after"] if after is not None else []))
    for cat, row in stats["per_category"].items():
        writer.writerow([cat, row["before"]] + ([row["after"]] if after is not None else []))
    sys.stdout.write(buf.getvalue())
    for phase in ("before", "after"):
        if phase in stats:
            m = stats[phase]
            print(f"# {phase}: max/min ratio {m['max_min_ratio']:.4f}, "
                  f"entropy {m['entropy_bits']:.4f} bits")
    if args.out_dir is not None:
        args.out_dir.mkdir(parents=True, exist_ok=True)
        (args.out_dir / "stats.csv").write_text(buf.getvalue(), encoding="utf-8")
        with open(args.out_dir / "stats.json", "w", encoding="utf-8") as fh:
            json.dump(stats, fh, indent=2, sort_keys=True)
            fh.write("\n")
        render_category_counts(stats["per_category"], args.out_dir / "stats.png")
    return EXIT_OK


def cmd_preview(args) -> int:
    config = _config_from(args)
    if args.n_variants < 1:
        raise UsageError("--n-variants must be at least 1")
    manifest = open_dataset(args.dataset, args.format, args.image_root)
    store = _store(config.embedding_path, args.embedding_dim, config.substitutions)
    bank = load_bank(args.bank)
    hosts = find_images(manifest, args.image_ids)
    for requested, host in zip(args.image_ids, hosts):
        variants = preview_variants(host, bank, store, config, args.n_variants)
        if not variants:
            print(f"{requested}: no placeable instance", file=sys.stderr)
            continue
        for k, v in enumerate(variants):
            name = f"preview_{requested}.png" if args.n_variants == 1 else \
                f"preview_{requested}_v{k}.png"
            path = render_preview(v, args.out_dir / name, title=str(host.image_id))
            print(f"{path}\t{v.category}\t{v.entry_id}")
    return EXIT_OK


def cmd_flops(args) -> int:
    print(estimate_similarity_flops(args.bank_categories, args.image_objects, args.dimension))
    return EXIT_OK


COMMANDS = {
    "build-bank": cmd_build_bank,
    "augment": cmd_augment,
    "stats": cmd_stats,
    "preview": cmd_preview,
    "flops": cmd_flops,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return COMMANDS[args.command](args)
    except (UsageError, ConfigurationError) as exc:
        print(f"semantic-paste: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (SemanticPasteError, ValueError) as exc:
        print(f"semantic-paste: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except OSError as exc:
        print(f"semantic-paste: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
