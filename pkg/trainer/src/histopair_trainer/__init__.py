"""Toy-scale conditional GAN trainer for paired HE-to-IHC image translation.

The trainer consumes the patch manifest CSV and PNG pairs produced by the
histopair pipeline through their on-disk formats alone, optimizes a residual
encoder-decoder generator against a patch-based discriminator with an
adversarial + L1 + Gaussian-pyramid objective, and exports deterministic
generated images for the evaluation CLI.
"""

from .config import MAX_SCALES, LossWeights, TrainConfig, lr_factor
from .data import MANIFEST_COLUMNS, PairDataset, PairRecord, batches, load_image, read_manifest
from .losses import (
    COMPONENT_KEYS,
    blur,
    downsample,
    from_intensity,
    gradcheck_multiscale,
    l1_reconstruction,
    multi_scale_components,
    multi_scale_loss,
    objective,
    scale_representative,
    to_intensity,
)
from .networks import (
    DISCRIMINATOR_MIN_SIZE,
    GENERATOR_STRIDE,
    ImageGenerator,
    PairDiscriminator,
    build_discriminator,
    build_generator,
)
from .toydata import build_toy_dataset
from .train import (
    CHECKPOINT_NAME,
    GENERATED_DIR_NAME,
    LOSS_COLUMNS,
    LOSS_CSV_NAME,
    TrainResult,
    train,
)

__version__ = "0.1.0"

__all__ = [
    "MAX_SCALES",
    "LossWeights",
    "TrainConfig",
    "lr_factor",
    "MANIFEST_COLUMNS",
    "PairRecord",
    "PairDataset",
    "batches",
    "load_image",
    "read_manifest",
    "COMPONENT_KEYS",
    "blur",
    "downsample",
    "scale_representative",
    "multi_scale_components",
    "multi_scale_loss",
    "l1_reconstruction",
    "to_intensity",
    "from_intensity",
    "objective",
    "gradcheck_multiscale",
    "ImageGenerator",
    "PairDiscriminator",
    "build_generator",
    "build_discriminator",
    "GENERATOR_STRIDE",
    "DISCRIMINATOR_MIN_SIZE",
    "build_toy_dataset",
    "TrainResult",
    "train",
    "LOSS_COLUMNS",
    "CHECKPOINT_NAME",
    "LOSS_CSV_NAME",
    "GENERATED_DIR_NAME",
    "__version__",
]
