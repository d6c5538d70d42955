"""Hyperdimensional feature fusion for out-of-distribution detection.

Fuses multi-layer feature maps into high-dimensional class descriptors
via similarity-preserving random projections and bundling, then flags
samples whose descriptor angle to every class exceeds a threshold.
"""

from .algebra import (
    ProjectionMatrix,
    ProjectionSet,
    angle_degrees,
    bind,
    build_projection_set,
    bundle,
    cosine,
    generate_semi_orthogonal,
    layer_seed,
    project,
    random_rademacher,
    splitmix64,
)
from .errors import (
    DegenerateInputError,
    DimensionError,
    FitError,
    FormatError,
    HdffError,
    PackValidationError,
    UsageError,
)
from .metrics import (
    F1Sweep,
    Histogram,
    MetricReport,
    ScoreRecord,
    angle_histogram,
    auroc,
    decide,
    detection_error,
    evaluate,
    f1_sweep,
    fpr_at_95_tpr,
    pairwise_similarity,
    score,
    score_batch,
)
from .packio import (
    FeaturePack,
    load_model,
    read_tensor_file,
    save_model,
    write_feature_pack,
    write_tensor_file,
)
from .pipeline import (
    EnsembleTable,
    FittedModel,
    LayerStats,
    center,
    descriptor_for_sample,
    descriptors_for_samples,
    ensemble_descriptor,
    ensemble_image_descriptor,
    fit,
    image_descriptor,
    pool,
)
from .synth import SyntheticSpec, generate

__version__ = "0.1.0"
