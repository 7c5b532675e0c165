"""
Word-vector store used to compare category labels.

Vectors are read from the plain-text GloVe distribution format (one token
followed by ``d`` numbers per line). Dataset labels are resolved to vectors
by exact lowercase lookup, then through a substitution table for labels the
vocabulary does not contain (multiword COCO names such as "dining table").
"""

from __future__ import annotations

import io
import logging
from dataclasses import dataclass, field
from pathlib import Path
from types import MappingProxyType
from typing import Iterable, Mapping, Optional, TextIO, Union

import numpy as np

from .errors import EmbeddingLoadError, SemanticPasteError, UnresolvedLabelError

logger = logging.getLogger(__name__)

# Labels missing from the 300-d GloVe vocabulary and the token used in their place.
DEFAULT_SUBSTITUTIONS: Mapping[str, str] = MappingProxyType(
    {
        "baseball bat": "baseball",
        "baseball glove": "baseball",
        "dining table": "table",
        "fire hydrant": "hydrant",
        "parking meter": "parking",
        "playing field": "field",
        "potted plant": "plant",
        "tennis racket": "racket",
        "traffic light": "stoplight",
        "stop sign": "stoplight",
        "waterdrops": "droplets",
    }
)

COSINE = "cosine"
EUCLIDEAN = "euclidean"
METRICS = (COSINE, EUCLIDEAN)


@dataclass(frozen=True)
class WordVector:
    token: str
    values: np.ndarray

    @property
    def dimension(self) -> int:
        return int(self.values.shape[0])


@dataclass(frozen=True)
class EmbeddingStore:
    """Immutable token -> vector dictionary with a label substitution table."""

    dimension: int
    entries: Mapping[str, WordVector]
    substitutions: Mapping[str, str] = field(default_factory=dict)

    def __contains__(self, token: str) -> bool:
        return token.lower() in self.entries

    def __len__(self) -> int:
        return len(self.entries)

    def resolve(self, raw_label: str) -> WordVector:
        return resolve_label(self, raw_label)

    def with_substitutions(self, overrides: Mapping[str, str]) -> "EmbeddingStore":
        """Return a copy whose substitution table is extended by ``overrides``."""
        merged = dict(self.substitutions)
        merged.update({k.lower(): v.lower() for k, v in overrides.items()})
        return EmbeddingStore(
            self.dimension, self.entries, _checked_substitutions(merged, self.entries)
        )


def _checked_substitutions(table: Mapping[str, str], entries: Mapping[str, WordVector]):
    kept = {}
    for raw, target in table.items():
        if target in entries:
            kept[raw] = target
        else:
            logger.warning(
                "substitution %r -> %r dropped: target token not in embeddings", raw, target
            )
    return MappingProxyType(kept)


def _parse_lines(lines: Iterable[str], expected_dim: Optional[int]):
    entries: dict[str, WordVector] = {}
    dim = expected_dim
    for lineno, line in enumerate(lines, start=1):
        parts = line.split()
        if not parts:
            continue
        token, raw_values = parts[0].lower(), parts[1:]
        if dim is None:
            dim = len(raw_values)
            if dim == 0:
                raise EmbeddingLoadError(f"token {token!r} has no vector values", lineno)
        if len(raw_values) != dim:
            raise EmbeddingLoadError(
                f"token {token!r} has {len(raw_values)} values, expected {dim}", lineno
            )
        try:
            values = np.array([float(v) for v in raw_values], dtype=np.float64)
        except ValueError as exc:
            raise EmbeddingLoadError(f"non-numeric value for {token!r}: {exc}", lineno) from None
        if not np.all(np.isfinite(values)):
            raise EmbeddingLoadError(f"non-finite value for {token!r}", lineno)
        if not np.any(values):
            raise EmbeddingLoadError(f"zero vector for {token!r}", lineno)
        values.setflags(write=False)
        # GloVe files contain a handful of case-duplicates; first occurrence wins.
        entries.setdefault(token, WordVector(token, values))
    if not entries:
        raise EmbeddingLoadError("embedding source is empty")
    return dim, entries


def load_embeddings(
    source: Union[TextIO, str, Path],
    expected_dim: Optional[int] = None,
    substitutions: Optional[Mapping[str, str]] = None,
) -> EmbeddingStore:
    """Load word vectors from a GloVe-style text stream or file path.

    Args:
        source: open text stream, or a path to the vector file.
        expected_dim: if given, every line must carry exactly this many values.
        substitutions: label -> token table; defaults to ``DEFAULT_SUBSTITUTIONS``.
            Entries whose target token is absent from the file are dropped
            with a warning.

    Raises:
        EmbeddingLoadError: on an empty source, a dimension mismatch, a
            non-numeric value or an all-zero vector. The message names the
            offending line.
    """
    if expected_dim is not None and expected_dim <= 0:
        raise ValueError("expected_dim must be positive")
    if isinstance(source, (str, Path)):
        with open(source, encoding="utf-8") as fh:
            dim, entries = _parse_lines(fh, expected_dim)
    else:
        dim, entries = _parse_lines(source, expected_dim)
    table = DEFAULT_SUBSTITUTIONS if substitutions is None else substitutions
    table = {k.lower(): v.lower() for k, v in table.items()}
    store = EmbeddingStore(dim, MappingProxyType(entries), _checked_substitutions(table, entries))
    logger.info("loaded %d word vectors of dimension %d", len(entries), dim)
    return store


def loads_embeddings(text: str, expected_dim: Optional[int] = None, **kwargs) -> EmbeddingStore:
    return load_embeddings(io.StringIO(text), expected_dim, **kwargs)


def resolve_label(store: EmbeddingStore, raw_label: str) -> WordVector:
    """Exact lowercase match first, then the substitution table, else error."""
    key = raw_label.strip().lower()
    vec = store.entries.get(key)
    if vec is not None:
        return vec
    target = store.substitutions.get(key)
    if target is not None:
        return store.entries[target]
    raise UnresolvedLabelError(raw_label)


def similarity(metric: str, a: WordVector, b: WordVector) -> float:
    """Score two vectors so that larger always means more similar.

    Cosine returns the usual normalized dot product; euclidean returns the
    negated L2 distance.
    """
    va, vb = _as_vector(a), _as_vector(b)
    if va.shape != vb.shape:
        raise SemanticPasteError(f"dimension mismatch: {va.shape[0]} vs {vb.shape[0]}")
    if metric == COSINE:
        na, nb = np.linalg.norm(va), np.linalg.norm(vb)
        if na == 0.0 or nb == 0.0:
            raise SemanticPasteError("cosine similarity is undefined for a zero vector")
        return float(np.dot(va / na, vb / nb))
    if metric == EUCLIDEAN:
        return -float(np.linalg.norm(va - vb))
    raise SemanticPasteError(f"unknown similarity metric {metric!r}")


def similarity_matrix(metric: str, left: np.ndarray, right: np.ndarray) -> np.ndarray:
    """Pairwise scores between the rows of ``left`` (n, d) and ``right`` (m, d)."""
    left = np.asarray(left, dtype=np.float64)
    right = np.asarray(right, dtype=np.float64)
    if left.shape[1] != right.shape[1]:
        raise SemanticPasteError(
            f"dimension mismatch: {left.shape[1]} vs {right.shape[1]}"
        )
    if metric == COSINE:
        ln = np.linalg.norm(left, axis=1, keepdims=True)
        rn = np.linalg.norm(right, axis=1, keepdims=True)
        if np.any(ln == 0) or np.any(rn == 0):
            raise SemanticPasteError("cosine similarity is undefined for a zero vector")
        return (left / ln) @ (right / rn).T
    if metric == EUCLIDEAN:
        diff = left[:, None, :] - right[None, :, :]
        return -np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
    raise SemanticPasteError(f"unknown similarity metric {metric!r}")


def estimate_similarity_flops(bank_categories: int, image_objects: int, dimension: int) -> int:
    """Multiply-adds needed to score every host object against every bank category."""
    for name, value in (
        ("bank_categories", bank_categories),
        ("image_objects", image_objects),
        ("dimension", dimension),
    ):
        if int(value) != value or value <= 0:
            raise ValueError(f"{name} must be a positive integer, got {value!r}")
    return int(bank_categories) * int(image_objects) * int(dimension)


def _as_vector(v) -> np.ndarray:
    if isinstance(v, WordVector):
        return v.values
    arr = np.asarray(v, dtype=np.float64)
    if arr.ndim != 1:
        raise SemanticPasteError("word vectors must be one-dimensional")
    return arr

