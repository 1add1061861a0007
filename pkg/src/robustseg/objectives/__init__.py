"""Training losses and segmentation metrics."""

from .losses import (
    FeatureBundle,
    LossWeights,
    dice_loss,
    focal_loss,
    loss_components,
    mfc_loss,
    normalized_l2,
    overall_loss,
    seg_loss,
    tc_loss,
)
from .metrics import DEFAULT_THRESHOLDS, MetricReport, ap_size_buckets, average_precision, pixel_metrics, size_bucket

__all__ = [
    "DEFAULT_THRESHOLDS",
    "FeatureBundle",
    "LossWeights",
    "MetricReport",
    "ap_size_buckets",
    "average_precision",
    "dice_loss",
    "focal_loss",
    "loss_components",
    "mfc_loss",
    "normalized_l2",
    "overall_loss",
    "pixel_metrics",
    "seg_loss",
    "size_bucket",
    "tc_loss",
]
