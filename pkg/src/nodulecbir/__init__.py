"""Content-based retrieval engine for pulmonary-nodule semantic embeddings.

The library covers the whole pipeline: the annotated-nodule data model
and a synthetic generator, a small trainable regression head whose
middle layer yields 10-D embeddings, an exact nearest-neighbour index,
the cross-validated dissent/precision evaluation protocol, and the
embedding-space structure analyses (minimum-variance clustering and an
exact 2-D stochastic neighbour embedding).
"""

from .data import (
    BENIGN,
    CHARACTERISTICS,
    Dataset,
    FilterReport,
    FoldAssignment,
    MALIGNANT,
    NoduleRecord,
    RatingVector,
    SCALE_NORMALIZED,
    SCALE_RAW,
    assign_folds,
    consensus,
    denormalize_rating,
    filter_dataset,
    generate_synthetic,
    malignancy_class,
    normalize_rating,
)
from .errors import CbirError
from .evaluate import (
    DissentSample,
    EvaluationReport,
    LogNormalFit,
    algorithm_dissent,
    build_report,
    cross_validated_cbir_dissent,
    doctor_dissent,
    lognormal_mle_fit,
    mean_precision_over_ks,
    random_baseline_prediction,
    rating_rmse,
    rating_rmse_std_per_component,
    retrieval_precision,
    run_cross_validation,
)
from .head import (
    Embedding,
    ForwardResult,
    HeadConfig,
    HeadModel,
    TrainReport,
    embed_all,
    forward,
    gradients,
    init_model,
    mse_loss,
    train,
)
from .index import (
    RetrievalIndex,
    RetrievalResult,
    build_index,
    distance,
    predict_ratings_topk,
    query_top_k,
)
from .tsne import ProjectedPoint, TsneConfig, TsneResult, color_by_malignancy, tsne
from .ward import Dendrogram, SplitSummary, top_splits_summary, ward_cluster

__version__ = "0.1.0"

__all__ = [
    "BENIGN",
    "CHARACTERISTICS",
    "CbirError",
    "Dataset",
    "Dendrogram",
    "DissentSample",
    "Embedding",
    "EvaluationReport",
    "FilterReport",
    "FoldAssignment",
    "ForwardResult",
    "HeadConfig",
    "HeadModel",
    "LogNormalFit",
    "MALIGNANT",
    "NoduleRecord",
    "ProjectedPoint",
    "RatingVector",
    "RetrievalIndex",
    "RetrievalResult",
    "SCALE_NORMALIZED",
    "SCALE_RAW",
    "SplitSummary",
    "TrainReport",
    "TsneConfig",
    "TsneResult",
    "algorithm_dissent",
    "assign_folds",
    "build_index",
    "build_report",
    "color_by_malignancy",
    "consensus",
    "cross_validated_cbir_dissent",
    "denormalize_rating",
    "distance",
    "doctor_dissent",
    "embed_all",
    "filter_dataset",
    "forward",
    "generate_synthetic",
    "gradients",
    "init_model",
    "lognormal_mle_fit",
    "malignancy_class",
    "mean_precision_over_ks",
    "mse_loss",
    "normalize_rating",
    "predict_ratings_topk",
    "query_top_k",
    "random_baseline_prediction",
    "rating_rmse",
    "rating_rmse_std_per_component",
    "retrieval_precision",
    "run_cross_validation",
    "top_splits_summary",
    "train",
    "tsne",
    "ward_cluster",
]
