"""Unsupervised single-image underwater depth estimation.

Two dense-block autoencoder generators translate between unpaired underwater
images and hazy above-water RGB-D samples under a cycle-consistent
adversarial objective; the depth channel of the underwater-to-aerial
generator is the depth estimate.
"""

__version__ = "0.1.0"

from .data import (
    CorpusIndex,
    HazeParams,
    ImageTensor,
    RGBDSample,
    bilateral_filter_depth,
    load_image,
    make_unpaired_batch,
    sample_patch,
    synthesize_haze,
)
from .errors import (
    ConfigError,
    DataError,
    EvaluationError,
    NumericalError,
    ShapeError,
    UndefinedMetricError,
    UwdepthError,
)
from .evaluation import EvalItem, EvalReport, evaluate_corpus, infer_depth, pearson, si_mse
from .losses import (
    CycleBundle,
    LossWeights,
    cycle_loss,
    grad_sparsity_loss,
    lsgan_d_loss,
    lsgan_g_loss,
    ssim_loss,
    ssim_map,
    total_generator_loss,
)
from .models import (
    DiscriminatorSpec,
    GeneratorSpec,
    NetworkParams,
    build_discriminator,
    build_generator,
    forward_discriminator,
    forward_generator,
    registry_get_backbone,
)
from .training import HistoryPool, TrainConfig, TrainState, fit, pool_query, train_step

__all__ = [
    "CorpusIndex",
    "CycleBundle",
    "ConfigError",
    "DataError",
    "DiscriminatorSpec",
    "EvalItem",
    "EvalReport",
    "EvaluationError",
    "GeneratorSpec",
    "HazeParams",
    "HistoryPool",
    "ImageTensor",
    "LossWeights",
    "NetworkParams",
    "NumericalError",
    "RGBDSample",
    "ShapeError",
    "TrainConfig",
    "TrainState",
    "UndefinedMetricError",
    "UwdepthError",
    "bilateral_filter_depth",
    "build_discriminator",
    "build_generator",
    "cycle_loss",
    "evaluate_corpus",
    "fit",
    "forward_discriminator",
    "forward_generator",
    "grad_sparsity_loss",
    "infer_depth",
    "load_image",
    "lsgan_d_loss",
    "lsgan_g_loss",
    "make_unpaired_batch",
    "pearson",
    "pool_query",
    "registry_get_backbone",
    "sample_patch",
    "si_mse",
    "ssim_loss",
    "ssim_map",
    "synthesize_haze",
    "total_generator_loss",
    "train_step",
]
