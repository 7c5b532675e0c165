"""Word-embedding-guided copy-paste augmentation for object-detection datasets."""

__version__ = "0.1.0"

from .annotations import AnnotatedImage, DatasetManifest, ObjectAnnotation, open_dataset, read_dataset, write_dataset
from .bank import BankEntry, ObjectBank, build_bank, extract_entry, load_bank, sample_instance, save_bank
from .compositor import (
    AugmentResult,
    CompositeResult,
    Placement,
    PlacementParams,
    augment_image,
    composite,
    draw_placement,
    draw_scale,
    resize_instance,
    update_occlusions,
)
from .config import AugmentationConfig, load_config
from .embeddings import (
    EmbeddingStore,
    WordVector,
    estimate_similarity_flops,
    load_embeddings,
    resolve_label,
    similarity,
)
from .errors import SemanticPasteError
from .imaging import blend
from .pipeline import image_rng, run_epoch
from .matcher import (
    CategoryCounter,
    MatchDecision,
    SelectionStrategy,
    SimilarityPair,
    average_similarity_mode,
    reset_epoch,
    score_all_pairs,
    select,
    top_n_pairs,
)
