"""powerdyad: predict the direction of organizational power between email correspondents."""

from .corpus import (
    DominanceRecord,
    DyadInstance,
    Email,
    MaskingRules,
    SplitManifest,
    Thread,
    extract_pairs,
    ingest_corpus,
    make_splits,
    mask_boilerplate,
)
from .features import (
    EmbeddingTable,
    FeatureStandardizer,
    StructuralFeatures,
    embed_email,
    load_embeddings,
    structural_features,
    tokenize,
)
from .models import (
    Checkpoint,
    InstanceTensorizer,
    ModelConfig,
    PowerScore,
    bce_loss,
    build_model,
)
from .training import SearchSpace, TrainConfig, TrainRecord, train, tune
from .baseline import BaselineConfig, BaselineModel, NgramVectorizer, train_baseline
from .evaluation import EvalReport, evaluate_model

__version__ = "0.1.0"

__all__ = [
    "BaselineConfig",
    "BaselineModel",
    "Checkpoint",
    "DominanceRecord",
    "DyadInstance",
    "Email",
    "EmbeddingTable",
    "EvalReport",
    "FeatureStandardizer",
    "InstanceTensorizer",
    "MaskingRules",
    "ModelConfig",
    "NgramVectorizer",
    "PowerScore",
    "SearchSpace",
    "SplitManifest",
    "StructuralFeatures",
    "Thread",
    "TrainConfig",
    "TrainRecord",
    "bce_loss",
    "build_model",
    "embed_email",
    "evaluate_model",
    "extract_pairs",
    "ingest_corpus",
    "load_embeddings",
    "make_splits",
    "mask_boilerplate",
    "structural_features",
    "tokenize",
    "train",
    "train_baseline",
    "tune",
]
