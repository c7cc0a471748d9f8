"""Domain-generalizable optic cup/disc segmentation via anatomy/style
disentanglement, style-contrastive training, and style-mixing augmentation."""

__version__ = "0.1.0"

from .data import (
    DomainStyleSpec,
    ImageSample,
    SplitPlan,
    default_domain_specs,
    generate_multidomain_dataset,
    generate_synthetic_domain,
    load_multisite_dataset,
    make_leave_one_out_splits,
    sample_domain_minibatches,
    save_dataset,
)
from .errors import CheckpointMismatchError, ConfigError, DataError, DivergenceError
from .losses import (
    LossReport,
    LossWeights,
    anatomy_consistency_loss,
    cross_entropy_loss,
    dice_loss,
    kl_loss,
    reconstruction_loss,
    segmentation_loss,
    style_contrastive_loss,
    total_loss,
)
from .domain_mix import (
    MixWeights,
    domain_augmentation_loss,
    mix_style_codes,
    sample_mixing_weights,
    synthesize_mixed_domain,
)
from .metrics import (
    EvalResult,
    EvalRow,
    average_surface_distance,
    build_report,
    dice_score,
    evaluate_split,
    masks_from_prediction,
)
from .nets import (
    AnatomyRep,
    DisentangleModel,
    NetConfig,
    StyleCode,
    gumbel_binarize,
    load_checkpoint,
    save_checkpoint,
)
from .trainer import (
    TrainConfig,
    TrainResult,
    TrainState,
    VARIANTS,
    plateau_scheduler,
    train,
    train_step,
)

__all__ = [
    "AnatomyRep",
    "CheckpointMismatchError",
    "ConfigError",
    "DataError",
    "DisentangleModel",
    "DivergenceError",
    "DomainStyleSpec",
    "EvalResult",
    "EvalRow",
    "ImageSample",
    "LossReport",
    "LossWeights",
    "MixWeights",
    "NetConfig",
    "SplitPlan",
    "StyleCode",
    "TrainConfig",
    "TrainResult",
    "TrainState",
    "VARIANTS",
    "anatomy_consistency_loss",
    "average_surface_distance",
    "build_report",
    "cross_entropy_loss",
    "default_domain_specs",
    "dice_loss",
    "dice_score",
    "domain_augmentation_loss",
    "evaluate_split",
    "generate_multidomain_dataset",
    "generate_synthetic_domain",
    "gumbel_binarize",
    "kl_loss",
    "load_checkpoint",
    "load_multisite_dataset",
    "make_leave_one_out_splits",
    "masks_from_prediction",
    "mix_style_codes",
    "plateau_scheduler",
    "reconstruction_loss",
    "sample_domain_minibatches",
    "sample_mixing_weights",
    "save_checkpoint",
    "save_dataset",
    "segmentation_loss",
    "style_contrastive_loss",
    "synthesize_mixed_domain",
    "total_loss",
    "train",
    "train_step",
]
