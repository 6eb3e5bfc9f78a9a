"""Super-resolution training under a designed discriminator filter-bank loss."""

from .estimators import AdaptiveLossSR, DiscriminatorFilterBank
from .filterdesign import (
    FilterBank,
    check_feasibility,
    design_filter_bank,
    homogenize,
    load_bank,
    save_bank,
    solve_next_filter,
)
from .gram import GramMatrix, accumulate_gram, build_circulant, conv2d_full, gram_from_autocorr
from .imagecore import degrade, downsample, read_png, residual, upsample, write_png
from .metrics import evaluate, hf_psnr, psnr, ssim
from .orchestrator import TrainingConfig, run_training
from .srnet import ModelParams, filter_loss, forward, init_params, pixel_loss, total_loss

__all__ = [
    "AdaptiveLossSR", "DiscriminatorFilterBank", "FilterBank", "GramMatrix", "ModelParams",
    "TrainingConfig", "accumulate_gram", "build_circulant", "check_feasibility", "conv2d_full",
    "degrade", "design_filter_bank", "downsample", "evaluate", "filter_loss", "forward",
    "gram_from_autocorr", "hf_psnr", "homogenize", "init_params", "load_bank", "pixel_loss",
    "psnr", "read_png", "residual", "run_training", "save_bank", "solve_next_filter", "ssim",
    "total_loss", "upsample", "write_png",
]
