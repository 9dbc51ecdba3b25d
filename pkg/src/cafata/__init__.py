"""Context-aware feature attribution for recommenders.

Predictions are additive over per-feature ratings, every prediction maps to a
tripolar argumentation framework with checkable balance and monotonicity
properties, and explanations are rendered from three templates.
"""

from .argumentation import (
    CheckReport,
    Polarity,
    TripolarFramework,
    build_taf,
    check_weak_balance,
    check_weak_monotonicity,
    export_dot,
    mute_and_predict,
    reaggregate,
    taf_to_json,
)
from .data import (
    Dataset,
    Interaction,
    ModelBundle,
    RatingScale,
    k_core_filter,
    load_interactions,
    load_item_features,
    load_model,
    log_transform_ratings,
    prepare_dataset,
    save_model,
    scale_ratings,
    split,
)
from .evaluation import (
    MetricsReport,
    binarize,
    classification_metrics,
    evaluate_model,
    rmse_mae,
)
from .explanation import Explanation, Scenario, classify_scenario, generate_explanation
from .model import (
    EmbeddingSpace,
    ItemCatalog,
    PredictionBreakdown,
    Variant,
    contextual_user,
    feature_rating,
    feature_type_importance,
    normalize_scores,
    predict,
)
from .training import (
    GradientSet,
    TrainingConfig,
    TrainingResult,
    backward,
    gradient_check,
    loss,
    predict_batch,
    train,
)

__version__ = "0.1.0"

__all__ = [
    "CheckReport",
    "Dataset",
    "EmbeddingSpace",
    "Explanation",
    "GradientSet",
    "Interaction",
    "ItemCatalog",
    "MetricsReport",
    "ModelBundle",
    "Polarity",
    "PredictionBreakdown",
    "RatingScale",
    "Scenario",
    "TrainingConfig",
    "TrainingResult",
    "TripolarFramework",
    "Variant",
    "backward",
    "binarize",
    "build_taf",
    "check_weak_balance",
    "check_weak_monotonicity",
    "classification_metrics",
    "classify_scenario",
    "contextual_user",
    "evaluate_model",
    "export_dot",
    "feature_rating",
    "feature_type_importance",
    "generate_explanation",
    "gradient_check",
    "k_core_filter",
    "load_interactions",
    "load_item_features",
    "load_model",
    "log_transform_ratings",
    "loss",
    "mute_and_predict",
    "normalize_scores",
    "predict",
    "predict_batch",
    "prepare_dataset",
    "reaggregate",
    "rmse_mae",
    "save_model",
    "scale_ratings",
    "split",
    "taf_to_json",
    "train",
]
