"""Classification and super-resolution pipelines built on the kernel network."""

from .classify import (ClassifierConfig, ClassifierHead, compare_to_baselines, evaluate_error, one_vs_all,
                       train_classifier)
from .imaging import bicubic_resize, rgb_to_ycbcr, ycbcr_to_rgb
from .metrics import error_rate, psnr, ssim
from .superres import PixelRegressor, SrConfig, SrModel, build_sr_patchset, sr_upscale, train_sr
from .whitening import LocalWhitening, whiten_local

__all__ = [
    "ClassifierConfig", "ClassifierHead", "compare_to_baselines", "evaluate_error", "one_vs_all", "train_classifier",
    "bicubic_resize", "rgb_to_ycbcr", "ycbcr_to_rgb", "error_rate", "psnr", "ssim",
    "PixelRegressor", "SrConfig", "SrModel", "build_sr_patchset", "sr_upscale", "train_sr",
    "LocalWhitening", "whiten_local",
]
