"""resotune: image resolution as a tunable inference-time parameter.

Calibrates how many bytes of a progressively encoded JPEG must be read
per inference resolution, selects the resolution per image with a
lightweight scale model, and autotunes resolution-specialized conv2d
kernels.
"""

from .calibrate import (
    CalibrationConfig,
    QualityLadders,
    QualityThresholdTable,
    ReadReport,
    build_threshold_table,
    calibrate_threshold,
    min_scans_for_threshold,
    read_savings,
)
from .jpegscan import (
    PixelRaster,
    ScanIndexedImage,
    cumulative_bytes,
    decode,
    index_scans,
    truncate_at_scan,
)
from .pipeline import (
    EvalRecord,
    FlopsTable,
    PipelineContext,
    ResolutionDecision,
    choose_resolution,
    crop_sweep,
    default_flops_table,
    flops_lookup,
    run_dynamic,
    run_static,
    train_shard_plan,
)
from .quality import CropSpec, SsimParams, center_crop, psnr, quality_at_scan, resize, ssim
from .synthetic import SyntheticBackbone, SyntheticConfig, SyntheticScale, generate_synthetic_scale_dataset

__version__ = "0.1.0"
