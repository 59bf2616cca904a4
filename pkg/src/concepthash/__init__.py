"""Concept-similarity guided learning-to-hash toolkit.

Build a pairwise semantic similarity source from image-concept score
matrices (with frequency-based concept denoising), train a small hashing
head against it, and evaluate the resulting binary codes with a bit-packed
Hamming retrieval engine.
"""

from .conceptsim import (
    CONCEPT,
    CONCEPT_NO_DENOISE,
    FEATURE_COSINE,
    DenoiseError,
    DenoiseReport,
    SimilaritySource,
    concept_distributions,
    concept_frequencies,
    denoise,
    denoise_shared,
    discard_mask,
    format_denoise_report,
    similarity_block,
)
from .datastore import (
    DistributionMatrix,
    FeatureMatrix,
    FormatError,
    LabelTable,
    PackedCodeSet,
    ScoreMatrix,
    pack_bits,
    read_codes,
    read_distribution_matrix,
    read_feature_matrix,
    read_labels,
    read_score_matrix,
    unpack_bits,
    write_codes,
    write_distribution_matrix,
    write_feature_matrix,
    write_labels,
    write_score_matrix,
)
from .evaluate import (
    RetrievalReport,
    average_precision,
    evaluate_retrieval,
    map_at_n,
    pr_curve_hamming,
    precision_at_n_curve,
    relevant,
    write_report_csvs,
)
from .hamming import binarize, hamming_distance, radius_histogram, rank_topn
from .hashnet import (
    HashHeadParams,
    LossBreakdown,
    PRESETS,
    SgdState,
    TrainConfig,
    TrainingDivergedError,
    backward,
    forward,
    init_params,
    load_params,
    loss,
    loss_grad,
    preset_config,
    save_params,
    sgd_step,
    train,
)
from .synthdata import make_clustered_dataset

__version__ = "0.1.0"

__all__ = [
    "CONCEPT",
    "CONCEPT_NO_DENOISE",
    "FEATURE_COSINE",
    "DenoiseError",
    "DenoiseReport",
    "DistributionMatrix",
    "FeatureMatrix",
    "FormatError",
    "HashHeadParams",
    "LabelTable",
    "LossBreakdown",
    "PRESETS",
    "PackedCodeSet",
    "RetrievalReport",
    "ScoreMatrix",
    "SgdState",
    "SimilaritySource",
    "TrainConfig",
    "TrainingDivergedError",
    "average_precision",
    "backward",
    "binarize",
    "concept_distributions",
    "concept_frequencies",
    "denoise",
    "denoise_shared",
    "discard_mask",
    "evaluate_retrieval",
    "format_denoise_report",
    "forward",
    "hamming_distance",
    "init_params",
    "load_params",
    "loss",
    "loss_grad",
    "make_clustered_dataset",
    "map_at_n",
    "pack_bits",
    "pr_curve_hamming",
    "precision_at_n_curve",
    "preset_config",
    "radius_histogram",
    "rank_topn",
    "read_codes",
    "read_distribution_matrix",
    "read_feature_matrix",
    "read_labels",
    "read_score_matrix",
    "relevant",
    "save_params",
    "sgd_step",
    "similarity_block",
    "train",
    "unpack_bits",
    "write_codes",
    "write_distribution_matrix",
    "write_feature_matrix",
    "write_labels",
    "write_report_csvs",
    "write_score_matrix",
]
