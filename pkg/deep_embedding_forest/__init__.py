"""Deep Embedding Forest: embedding-fed forests for low-latency click prediction."""

from __future__ import annotations

from .const import VERSION
from .data import (
    Dataset,
    FeatureGroup,
    FeatureSchema,
    Sample,
    SparseVector,
    SynthConfig,
    featurize_records,
    gen_synthetic,
    parse_samples,
    parse_schema,
    serialize_samples,
    serialize_schema,
)
from .errors import (
    ConfigError,
    DefError,
    ModelFormatError,
    ParseError,
    ShapeError,
    StageDependencyError,
    TrainingDivergedError,
    ValidationError,
)
from .fuzzy import (
    FuzzyConfig,
    FuzzyForest,
    complexity_stats,
    fuzzy_backward,
    fuzzy_forward,
    init_fuzzy,
    joint_train,
)
from .gbdt import Forest, GbdtConfig, Tree, TreeNode, predict_hard, train_gbdt
from .nn import (
    DeepCrossingModel,
    EmbeddingLayer,
    StackingVector,
    TrainConfig,
    embed_forward,
    extract_stacking,
    load_checkpoint,
    save_checkpoint,
    stack,
    train_deep_crossing,
)
from .serve import (
    BenchConfig,
    ModelBundle,
    Predictor,
    bench,
    compile_bundle,
    load_bundle,
    predict,
    relative_log_loss,
    save_bundle,
)

__version__ = VERSION

__all__ = [
    "BenchConfig",
    "ConfigError",
    "Dataset",
    "DeepCrossingModel",
    "DefError",
    "EmbeddingLayer",
    "FeatureGroup",
    "FeatureSchema",
    "Forest",
    "FuzzyConfig",
    "FuzzyForest",
    "GbdtConfig",
    "ModelBundle",
    "ModelFormatError",
    "ParseError",
    "Predictor",
    "Sample",
    "ShapeError",
    "SparseVector",
    "StackingVector",
    "StageDependencyError",
    "SynthConfig",
    "TrainConfig",
    "TrainingDivergedError",
    "Tree",
    "TreeNode",
    "ValidationError",
    "bench",
    "compile_bundle",
    "complexity_stats",
    "embed_forward",
    "extract_stacking",
    "featurize_records",
    "fuzzy_backward",
    "fuzzy_forward",
    "gen_synthetic",
    "init_fuzzy",
    "joint_train",
    "load_bundle",
    "load_checkpoint",
    "parse_samples",
    "parse_schema",
    "predict",
    "predict_hard",
    "relative_log_loss",
    "save_bundle",
    "save_checkpoint",
    "serialize_samples",
    "serialize_schema",
    "stack",
    "train_deep_crossing",
    "train_gbdt",
]
