"""
Choosing what to paste and next to which host object.

Every host object label is scored against every bank category. The
selection strategy then picks one (host object, bank category) pair from
the best-scoring categories.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass
from typing import Mapping, Optional, Sequence

import numpy as np

from .annotations import AnnotatedImage
from .bank import ObjectBank
from .embeddings import COSINE, EmbeddingStore, similarity_matrix
from .errors import ConfigurationError, NoHostObjectsError, SemanticPasteError

MOST_SIMILAR = "most_similar"
INSTANCE_BALANCED = "instance_balanced"
BASELINE_MAP = "baseline_map"
COOCCURRENCE = "cooccurrence"
RANDOM_PASTE = "random_paste"
STRATEGIES = (MOST_SIMILAR, INSTANCE_BALANCED, BASELINE_MAP, COOCCURRENCE, RANDOM_PASTE)

AGGREGATE_MAX = "max"
AGGREGATE_MEAN = "mean"


@dataclass(frozen=True)
class SimilarityPair:
    host_object_index: int
    bank_category: str
    score: float


@dataclass
class SelectionStrategy:
    kind: str = INSTANCE_BALANCED
    top_n: int = 3
    per_category_ap: Optional[Mapping[str, float]] = None
    cooccurrence_table: Optional[Mapping[str, Mapping[str, float]]] = None
    aggregation: str = AGGREGATE_MAX

    def __post_init__(self):
        if self.kind not in STRATEGIES:
            raise ConfigurationError(f"unknown strategy {self.kind!r}")
        if int(self.top_n) != self.top_n or self.top_n < 1:
            raise ConfigurationError("top_n must be a positive integer")
        if self.aggregation not in (AGGREGATE_MAX, AGGREGATE_MEAN):
            raise ConfigurationError(f"unknown aggregation {self.aggregation!r}")
        if self.kind == BASELINE_MAP and self.per_category_ap is None:
            raise ConfigurationError("baseline_map strategy needs a per-category AP table")
        if self.kind == COOCCURRENCE and self.cooccurrence_table is None:
            raise ConfigurationError("cooccurrence strategy needs a co-occurrence table")


@dataclass(frozen=True)
class MatchDecision:
    host_object_index: int
    bank_category: str
    score: float
    strategy_kind: str
    top_n_pairs: tuple = ()


class CategoryCounter:
    """Per-epoch count of pasted instances per category.

    ``select`` reads and increments under one lock, so concurrent callers
    see a consistent read-modify-write.
    """

    def __init__(self, categories: Sequence[str] = (), epoch_id: int = 0,
                 initial: Optional[Mapping[str, int]] = None):
        self.epoch_id = epoch_id
        self._base = {c: 0 for c in categories}
        if initial:
            for c, n in initial.items():
                if n < 0:
                    raise ValueError("initial counts must be non-negative")
                self._base[c] = int(n)
        self.counts: dict[str, int] = dict(self._base)
        self.lock = threading.RLock()

    def __getitem__(self, category: str) -> int:
        return self.counts.get(category, 0)

    def increment(self, category: str, by: int = 1) -> None:
        with self.lock:
            self.counts[category] = self.counts.get(category, 0) + by

    def snapshot(self) -> dict[str, int]:
        with self.lock:
            return dict(sorted(self.counts.items()))


def reset_epoch(counter: CategoryCounter, epoch_id: int) -> CategoryCounter:
    """Start a new epoch: counts go back to their initial values (zero by default)."""
    with counter.lock:
        if epoch_id <= counter.epoch_id:
            raise SemanticPasteError(
                f"epoch id must increase: {epoch_id} after {counter.epoch_id}"
            )
        counter.counts = dict(counter._base)
        counter.epoch_id = epoch_id
    return counter


def score_all_pairs(
    host: AnnotatedImage,
    bank: ObjectBank,
    store: EmbeddingStore,
    metric: str = COSINE,
) -> list[SimilarityPair]:
    """Score every (host object, bank category) combination.

    Pairs come out host-object-major, categories in bank order.

    Raises:
        NoHostObjectsError: the host has no non-crowd annotations.
    """
    anchors = [i for i, o in enumerate(host.objects) if not o.is_crowd]
    if not anchors:
        raise NoHostObjectsError(f"image {host.image_id} has no annotated objects")
    if len(bank) == 0:
        raise SemanticPasteError("bank is empty")
    host_vecs = np.stack([store.resolve(host.objects[i].category).values for i in anchors])
    scores = similarity_matrix(metric, host_vecs, bank.category_matrix())
    cats = bank.categories
    return [
        SimilarityPair(i, cats[j], float(scores[r, j]))
        for r, i in enumerate(anchors)
        for j in range(len(cats))
    ]


def aggregate_by_category(pairs: Sequence[SimilarityPair], aggregation: str = AGGREGATE_MAX):
    """One pair per category.

    ``max`` keeps the category's best-scoring pair (lowest host index on
    ties). ``mean`` scores the category by the mean over host objects and
    anchors it at the host object with the highest individual score.
    """
    best: dict[str, SimilarityPair] = {}
    totals: dict[str, float] = {}
    n: dict[str, int] = {}
    for p in pairs:
        cur = best.get(p.bank_category)
        if cur is None or p.score > cur.score or (
            p.score == cur.score and p.host_object_index < cur.host_object_index
        ):
            best[p.bank_category] = p
        totals[p.bank_category] = totals.get(p.bank_category, 0.0) + p.score
        n[p.bank_category] = n.get(p.bank_category, 0) + 1
    if aggregation == AGGREGATE_MAX:
        return list(best.values())
    if aggregation == AGGREGATE_MEAN:
        return [
            SimilarityPair(b.host_object_index, c, totals[c] / n[c]) for c, b in best.items()
        ]
    raise ConfigurationError(f"unknown aggregation {aggregation!r}")


def _rank_key(p: SimilarityPair):
    return (-p.score, p.bank_category)


def top_n_pairs(
    pairs: Sequence[SimilarityPair], n: int, aggregation: str = AGGREGATE_MAX
) -> list[SimilarityPair]:
    """The ``n`` best distinct categories, by descending score then label."""
    if n < 1:
        raise SemanticPasteError("n must be at least 1")
    if not pairs:
        raise SemanticPasteError("no pairs to rank")
    per_category = aggregate_by_category(pairs, aggregation)
    return sorted(per_category, key=_rank_key)[:n]


def average_similarity_mode(pairs: Sequence[SimilarityPair], n: int) -> list[SimilarityPair]:
    return top_n_pairs(pairs, n, AGGREGATE_MEAN)


def select(
    pairs: Sequence[SimilarityPair],
    strategy: SelectionStrategy,
    counter: CategoryCounter,
    rng: Optional[np.random.Generator] = None,
    host_categories: Sequence[str] = (),
) -> MatchDecision:
    """Pick the paste category and its host anchor, then count it.

    ``host_categories`` (labels of the host's objects) is only consulted by
    the co-occurrence strategy, which samples among the top-N categories in
    proportion to how often each co-occurs with them (set ``top_n`` to the
    bank size for the plain co-occurrence baseline). ``rng`` is required for the co-occurrence
    and random strategies.
    """
    kind = strategy.kind
    if kind in (COOCCURRENCE, RANDOM_PASTE) and rng is None:
        raise ConfigurationError(f"{kind} strategy needs a random generator")
    with counter.lock:
        if kind == RANDOM_PASTE:
            # Category and anchor are independent uniform draws.
            per_category = sorted(aggregate_by_category(pairs), key=lambda p: p.bank_category)
            hosts = sorted({p.host_object_index for p in pairs})
            cat = per_category[int(rng.integers(len(per_category)))].bank_category
            host = hosts[int(rng.integers(len(hosts)))]
            score = next(p.score for p in pairs
                         if p.bank_category == cat and p.host_object_index == host)
            decision = MatchDecision(host, cat, score, kind, ())
        elif kind == COOCCURRENCE:
            pool = top_n_pairs(pairs, strategy.top_n, strategy.aggregation)
            weights = np.array(
                [cooccurrence_weight(strategy.cooccurrence_table, p.bank_category, host_categories)
                 for p in pool],
                dtype=np.float64,
            )
            if weights.sum() > 0:
                choice = pool[int(rng.choice(len(pool), p=weights / weights.sum()))]
            else:
                choice = pool[int(rng.integers(len(pool)))]
            decision = _decision(choice, kind, pool)
        else:
            top = top_n_pairs(pairs, 1 if kind == MOST_SIMILAR else strategy.top_n,
                              strategy.aggregation)
            if kind == MOST_SIMILAR:
                choice = top[0]
            elif kind == INSTANCE_BALANCED:
                choice = min(top, key=lambda p: (counter[p.bank_category],) + _rank_key(p))
            else:
                ap = strategy.per_category_ap
                missing = [p.bank_category for p in top if p.bank_category not in ap]
                if missing:
                    raise ConfigurationError(f"AP table lacks categories {missing}")
                choice = min(top, key=lambda p: (float(ap[p.bank_category]),) + _rank_key(p))
            decision = _decision(choice, kind, top)
        counter.increment(decision.bank_category)
    return decision


def _decision(choice: SimilarityPair, kind: str, pool) -> MatchDecision:
    return MatchDecision(choice.host_object_index, choice.bank_category, choice.score, kind,
                         tuple(pool))


def cooccurrence_weight(table, category: str, host_categories: Sequence[str]) -> float:
    row = table.get(category, {})
    return float(sum(row.get(h, 0) for h in host_categories))


def build_cooccurrence(images) -> dict[str, dict[str, int]]:
    """Symmetric table: entry (a, b) = number of images containing both a and b."""
    table: dict[str, dict[str, int]] = {}
    for image in images:
        present = sorted({o.category for o in image.objects})
        for a in present:
            row = table.setdefault(a, {})
            for b in present:
                row[b] = row.get(b, 0) + 1
    return {a: dict(sorted(row.items())) for a, row in sorted(table.items())}
