"""Registered HE/IHC pair construction, multi-scale losses, and evaluation."""

from .config import CONFIG_KEYS, PipelineConfig, build_config, parse_config_file
from .metrics import MetricReport, PairResult, evaluate_pairs, mse, psnr, ssim
from .patchify import (
    HER2_LEVELS,
    FilterThresholds,
    PatchManifest,
    PatchPair,
    PatchRecord,
    SplitRule,
    alignment_score,
    build_manifest,
    cut_patches,
    load_manifest,
    tissue_ratio,
)
from .pyramid import (
    GaussianKernel,
    GaussianPyramid,
    Octave,
    ScaleWeights,
    blur,
    build_pyramid,
    downsample,
    gaussian_kernel,
    l1_reconstruction,
    multi_scale_loss,
    scale_loss,
    scale_representative,
)
from .raster import (
    DimensionMismatchError,
    Plane,
    Raster,
    UnsupportedBitDepthError,
    UnsupportedChannelCountError,
    ValidityMask,
    load_image,
    merge_channels,
    save_image,
    split_channels,
    to_luma,
)
from .registration import (
    BlockGrid,
    DegenerateGeometryError,
    DisplacementField,
    Homography,
    PointPair,
    RegistrationConfig,
    RegistrationResult,
    RegistrationStageError,
    UnregistrableBlockError,
    apply_field,
    estimate_homography,
    fill_gaps,
    load_field,
    load_point_pairs,
    partition_blocks,
    register_block,
    register_pair,
    save_field,
    stitch,
    two_step_projection,
    warp,
    zero_field,
)

__version__ = "0.1.0"
