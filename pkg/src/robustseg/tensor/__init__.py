"""Minimal reverse-mode tensor engine on top of numpy."""

from .core import (
    Parameter,
    Tape,
    Tensor,
    add,
    as_tensor,
    backward,
    clip_min,
    concat,
    div,
    exp,
    getitem,
    log,
    matmul,
    mean,
    mul,
    neg,
    no_grad,
    power,
    precision,
    reshape,
    sqrt,
    stack,
    sub,
    transpose,
    tsum,
)
from .fft import fft2, from_frequency, ifft2, to_frequency
from .functional import (
    BatchNormStats,
    activate,
    adaptive_avg_pool,
    batch_norm,
    conv2d,
    gelu,
    instance_norm,
    layer_norm,
    linear,
    logsigmoid,
    relu,
    resize_bilinear,
    sigmoid,
    softmax,
    transposed_conv2d,
)
from .gradcheck import GradCheckReport, grad_check
from .optim import Adam, AdamState, adam_step

__all__ = [name for name in dir() if not name.startswith("_")]
