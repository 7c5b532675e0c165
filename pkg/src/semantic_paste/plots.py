"""Figure rendering for previews and category statistics (Agg backend, PNG files)."""

from __future__ import annotations

from pathlib import Path
from typing import Optional

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
from matplotlib.patches import Rectangle  # noqa: E402

STYLE = {
    "font.family": "DejaVu Sans",
    "font.size": 9,
    "axes.titlesize": 10,
    "axes.labelsize": 9,
    "xtick.labelsize": 7,
    "ytick.labelsize": 8,
    "legend.fontsize": 8,
    "figure.dpi": 100,
    "savefig.dpi": 100,
    "axes.spines.top": False,
    "axes.spines.right": False,
}

PASTE_COLOR = "#e8402c"
ANCHOR_COLOR = "#2c7be8"
# Blank metadata keeps PNG bytes independent of the matplotlib build.
PNG_METADATA = {"Software": None}


def _save(fig, path: Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, format="png", metadata=PNG_METADATA)
    plt.close(fig)
    return path


def render_preview(variant, path, title: Optional[str] = None) -> Path:
    """Original and augmented image side by side, paste outlined and labelled."""
    orig, aug = variant.original, variant.augmented
    aspect = orig.height / orig.width
    with plt.rc_context(STYLE):
        fig, (ax0, ax1) = plt.subplots(1, 2, figsize=(8, 4 * aspect + 0.6))
        ax0.imshow(orig.pixels, interpolation="nearest")
        ax0.set_title("original")
        ax1.imshow(aug.pixels, interpolation="nearest")
        ax1.set_title("augmented")
        ax = ax1
        x, y, w, h = variant.bbox
        ax.add_patch(Rectangle((x - 0.5, y - 0.5), w, h, fill=False, lw=1.5, ec=PASTE_COLOR))
        ax.text(x - 0.5, y - 1.5, f"{variant.category} ({variant.entry_id})", color="white",
                fontsize=7, va="bottom",
                bbox={"facecolor": PASTE_COLOR, "edgecolor": "none", "pad": 1.0})
        ax, (x, y, w, h) = ax0, variant.anchor_bbox
        ax.add_patch(Rectangle((x - 0.5, y - 0.5), w, h, fill=False, lw=1.0, ls="--",
                               ec=ANCHOR_COLOR))
        for a in (ax0, ax1):
            a.set_xticks([])
            a.set_yticks([])
        if title:
            fig.suptitle(title)
        fig.tight_layout()
        return _save(fig, path)


def render_category_counts(per_category: dict, path, title: str = "instances per category") -> Path:
    """Grouped bars of before/after instance counts per category."""
    cats = list(per_category)
    before = [per_category[c].get("before", 0) for c in cats]
    after = [per_category[c].get("after") for c in cats]
    has_after = any(a is not None for a in after)
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(max(4.0, 0.35 * len(cats) + 1.5), 3.2))
        xs = range(len(cats))
        width = 0.4 if has_after else 0.7
        ax.bar([x - (width / 2 if has_after else 0) for x in xs], before, width,
               label="before", color="#9aa5b1")
        if has_after:
            ax.bar([x + width / 2 for x in xs], [a or 0 for a in after], width,
                   label="after", color=PASTE_COLOR)
            ax.legend(frameon=False)
        ax.set_xticks(list(xs))
        ax.set_xticklabels(cats, rotation=60, ha="right")
        ax.set_ylabel("instances")
        ax.set_title(title)
        fig.tight_layout()
        return _save(fig, path)
