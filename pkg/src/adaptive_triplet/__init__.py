"""Adaptive-margin triplet metric learning on rating data."""

from adaptive_triplet.embed_net import (
    EmbeddingNet,
    backward,
    embed,
    embedding_distance,
    forward,
    init_net,
    l2_normalize,
)
from adaptive_triplet.errors import (
    DegeneratePairError,
    InvalidConfigError,
    InvalidInputError,
    NumericFailureError,
    ParseError,
)
from adaptive_triplet.losses import (
    LossWeights,
    MarginMode,
    RegressionKind,
    combined_loss,
    regression_loss,
    triplet_loss,
    triplet_loss_grads,
)
from adaptive_triplet.sampling import (
    FeatureDataset,
    HardnessClass,
    PairRatingDataset,
    Quadruplet,
    RatedItem,
    RatedPair,
    adaptive_margin,
    classify_hardness,
    generate_quadruplets_pairwise,
    generate_quadruplets_single,
    margin_histogram,
    similarity_to_distance,
)
from adaptive_triplet.evaluation import (
    RankResult,
    eval_pairwise,
    eval_reference,
    eval_regression,
    srocc,
)
from adaptive_triplet.training import (
    RegressionHead,
    TrainConfig,
    TrainReport,
    detect_collapse,
    optimizer_step,
    train,
)

__version__ = "0.1.0"
