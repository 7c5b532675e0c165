"""Run configuration: defaults, YAML loading, flag overrides and fingerprinting."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Optional, Union

import yaml

from .compositor import PlacementParams
from .embeddings import COSINE, METRICS
from .errors import ConfigurationError
from .imaging import BLEND_MODES, BLEND_NONE
from .matcher import AGGREGATE_MAX, INSTANCE_BALANCED, STRATEGIES, SelectionStrategy

EMBEDDINGS_ENV = "SEMANTIC_PASTE_EMBEDDINGS"
COUNTER_INIT = ("zero", "dataset_frequency")
VISIT_ORDERS = ("shuffled", "dataset")


@dataclass
class AugmentationConfig:
    strategy: str = INSTANCE_BALANCED
    top_n: int = 3
    metric: str = COSINE
    similarity_aggregation: str = AGGREGATE_MAX
    scale_range: tuple = (0.05, 0.40)
    area_bounds: tuple = (300, 90000)
    epsilon_frac: float = 0.05
    objects_per_image: int = 1
    blending: str = BLEND_NONE
    visibility_threshold: float = 0.05
    max_retries: int = 20
    counter_init: str = "zero"
    visit_order: str = "shuffled"
    probability: float = 1.0
    seed: int = 0
    epochs: int = 1
    embedding_path: Optional[str] = None
    substitutions: dict = field(default_factory=dict)
    ap_table_path: Optional[str] = None

    def __post_init__(self):
        self.scale_range = tuple(self.scale_range)
        self.area_bounds = tuple(self.area_bounds)
        if self.strategy not in STRATEGIES:
            raise ConfigurationError(f"strategy must be one of {STRATEGIES}")
        if self.metric not in METRICS:
            raise ConfigurationError(f"metric must be one of {METRICS}")
        if self.blending not in BLEND_MODES:
            raise ConfigurationError(f"blending must be one of {BLEND_MODES}")
        if self.counter_init not in COUNTER_INIT:
            raise ConfigurationError(f"counter_init must be one of {COUNTER_INIT}")
        if self.visit_order not in VISIT_ORDERS:
            raise ConfigurationError(f"visit_order must be one of {VISIT_ORDERS}")
        if self.objects_per_image < 1:
            raise ConfigurationError("objects_per_image must be at least 1")
        if self.top_n < 1:
            raise ConfigurationError("top_n must be at least 1")
        if self.epochs < 1:
            raise ConfigurationError("epochs must be at least 1")
        if not 0.0 <= self.probability <= 1.0:
            raise ConfigurationError("probability must be in [0, 1]")
        if not 0 <= self.seed < 2**64:
            raise ConfigurationError("seed must be a 64-bit unsigned integer")
        self.placement_params()

    def placement_params(self) -> PlacementParams:
        return PlacementParams(
            scale_lo=float(self.scale_range[0]),
            scale_hi=float(self.scale_range[1]),
            area_min=self.area_bounds[0],
            area_max=self.area_bounds[1],
            epsilon_frac=self.epsilon_frac,
            max_retries=self.max_retries,
            blending=self.blending,
            visibility_threshold=self.visibility_threshold,
        )

    def selection_strategy(self, per_category_ap=None, cooccurrence_table=None) -> SelectionStrategy:
        return SelectionStrategy(
            self.strategy, self.top_n, per_category_ap, cooccurrence_table,
            self.similarity_aggregation,
        )

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["scale_range"] = list(self.scale_range)
        d["area_bounds"] = list(self.area_bounds)
        return d

    def fingerprint(self) -> str:
        """SHA-256 over the resolved settings that influence outputs."""
        d = self.to_dict()
        # Paths name where inputs live, not what the run does.
        d.pop("embedding_path", None)
        d.pop("ap_table_path", None)
        blob = json.dumps(d, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()


FIELD_NAMES = {f.name for f in dataclasses.fields(AugmentationConfig)}


def load_config(
    path: Union[str, Path, None] = None, overrides: Optional[Mapping[str, Any]] = None
) -> AugmentationConfig:
    """Defaults, then the YAML file, then non-None ``overrides``, then the env var."""
    values: dict = {}
    if path is not None:
        with open(path, encoding="utf-8") as fh:
            loaded = yaml.safe_load(fh) or {}
        if not isinstance(loaded, dict):
            raise ConfigurationError(f"{path}: top level must be a mapping")
        values.update(loaded)
    for key, value in (overrides or {}).items():
        if value is not None:
            values[key] = value
    unknown = set(values) - FIELD_NAMES
    if unknown:
        raise ConfigurationError(f"unknown configuration keys: {sorted(unknown)}")
    env = os.environ.get(EMBEDDINGS_ENV)
    if env and not (overrides or {}).get("embedding_path"):
        values["embedding_path"] = env
    try:
        return AugmentationConfig(**values)
    except TypeError as exc:
        raise ConfigurationError(str(exc)) from None


def load_ap_table(path: Union[str, Path]) -> dict[str, float]:
    """Per-category AP as a YAML/JSON mapping ``category: ap``."""
    with open(path, encoding="utf-8") as fh:
        table = yaml.safe_load(fh)
    if not isinstance(table, dict):
        raise ConfigurationError(f"{path}: AP table must be a mapping")
    return {str(k): float(v) for k, v in table.items()}
