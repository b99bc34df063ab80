"""Transient-robust Gaussian splatting: rendering, transient masks and the staged pipeline."""

from ._core import (
    Camera,
    Config,
    ConfigError,
    MissingStageError,
    PipelineError,
    evaluate,
    export_viz,
    finalize,
    generate,
    load_config,
    optimal_transient_probability,
    parse_config,
    psnr,
    read_checkpoint,
    read_mask_png,
    read_png,
    refine,
    render,
    ssim,
    train,
    write_checkpoint,
    write_png,
)

__all__ = [
    "Camera",
    "Config",
    "ConfigError",
    "MissingStageError",
    "PipelineError",
    "evaluate",
    "export_viz",
    "finalize",
    "generate",
    "load_config",
    "optimal_transient_probability",
    "parse_config",
    "psnr",
    "read_checkpoint",
    "read_mask_png",
    "read_png",
    "refine",
    "render",
    "ssim",
    "train",
    "write_checkpoint",
    "write_png",
]
