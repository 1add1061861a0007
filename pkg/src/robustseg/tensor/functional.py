"""Differentiable layers built directly on numpy kernels.

Spatial ops accept either a single ``(C, H, W)`` feature map or a batch
``(N, C, H, W)``; the unbatched form is a thin wrapper over the batched one.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import expit, log_expit

from ..errors import ContractError, DimensionError
from .core import Tensor, as_tensor, reshape, result, unbroadcast

_SQRT_2_OVER_PI = float(np.sqrt(2.0 / np.pi))


def _batched(x: Tensor):
    if x.ndim == 3:
        return reshape(x, (1,) + x.shape), True
    if x.ndim != 4:
        raise DimensionError(f"expected (C,H,W) or (N,C,H,W), got {x.shape}")
    return x, False


def _unbatch(y: Tensor, squeeze: bool) -> Tensor:
    return reshape(y, y.shape[1:]) if squeeze else y


# ---------------------------------------------------------------------------
# activations
# ---------------------------------------------------------------------------


def relu(x) -> Tensor:
    x = as_tensor(x)
    keep = x.data > 0
    return result(np.where(keep, x.data, 0).astype(x.dtype), (x,), lambda g: (g * keep,), "relu")


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    s = expit(x.data)
    return result(s, (x,), lambda g: (g * s * (1.0 - s),), "sigmoid")


def logsigmoid(x) -> Tensor:
    x = as_tensor(x)
    xd = x.data
    return result(log_expit(xd), (x,), lambda g: (g * expit(-xd),), "logsigmoid")


def gelu(x) -> Tensor:
    """GELU, tanh approximation."""
    x = as_tensor(x)
    xd = x.data
    x2 = xd * xd
    t = np.tanh(_SQRT_2_OVER_PI * xd * (1.0 + 0.044715 * x2))
    out = 0.5 * xd * (1.0 + t)

    def bw(g):
        du = _SQRT_2_OVER_PI * (1.0 + 3 * 0.044715 * x2)
        return (g * (0.5 * (1.0 + t) + 0.5 * xd * (1.0 - t * t) * du),)

    return result(out, (x,), bw, "gelu")


def tanh(x) -> Tensor:
    x = as_tensor(x)
    t = np.tanh(x.data)
    return result(t, (x,), lambda g: (g * (1.0 - t * t),), "tanh")


_ACTIVATIONS = {"relu": relu, "sigmoid": sigmoid, "gelu": gelu, "tanh": tanh}


def activate(x, kind: str) -> Tensor:
    try:
        return _ACTIVATIONS[kind](x)
    except KeyError:
        raise ContractError(f"unknown activation {kind!r}") from None


def softmax(x, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return result(y, (x,), bw, "softmax")


# ---------------------------------------------------------------------------
# dense layers
# ---------------------------------------------------------------------------


def linear(x, weight, bias=None) -> Tensor:
    """``x @ weight + bias`` with weight stored as (in, out)."""
    x, weight = as_tensor(x), as_tensor(weight)
    if x.shape[-1] != weight.shape[0]:
        raise DimensionError(f"linear: input {x.shape} does not match weight {weight.shape}")
    parents = [x, weight] + ([as_tensor(bias)] if bias is not None else [])
    lead = x.shape[:-1]
    x2 = x.data.reshape(-1, x.shape[-1])
    out = x2 @ weight.data
    if bias is not None:
        out = out + parents[2].data
    wd = weight.data

    def bw(g):
        g2 = g.reshape(-1, g.shape[-1])
        gx = (g2 @ wd.T).reshape(x.shape) if x.requires_grad else None
        gw = x2.T @ g2 if weight.requires_grad else None
        if bias is None:
            return gx, gw
        gb = g2.sum(axis=0) if parents[2].requires_grad else None
        return gx, gw, gb

    return result(out.reshape(lead + (wd.shape[1],)), parents, bw, "linear")


# ---------------------------------------------------------------------------
# normalization
# ---------------------------------------------------------------------------


def _normalize(x: Tensor, gamma, beta, axes: tuple, eps: float, op: str,
               param_shape: tuple) -> Tensor:
    xd = x.data
    mu = xd.mean(axis=axes, keepdims=True)
    xc = xd - mu
    var = (xc * xc).mean(axis=axes, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    gamma, beta = as_tensor(gamma), as_tensor(beta)
    gd = gamma.data.reshape(param_shape)
    out = xhat * gd + beta.data.reshape(param_shape)
    count = int(np.prod([xd.shape[a] for a in axes]))

    def bw(g):
        gx = None
        if x.requires_grad:
            dxhat = g * gd
            s1 = dxhat.sum(axis=axes, keepdims=True)
            s2 = (dxhat * xhat).sum(axis=axes, keepdims=True)
            gx = inv * (dxhat - s1 / count - xhat * (s2 / count))
        ggam = gbet = None
        if gamma.requires_grad:
            ggam = unbroadcast(g * xhat, param_shape).reshape(gamma.shape)
        if beta.requires_grad:
            gbet = unbroadcast(g, param_shape).reshape(beta.shape)
        return gx, ggam, gbet

    return result(out, (x, gamma, beta), bw, op)


def layer_norm(x, gamma, beta, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis (also used as instance norm for tokens)."""
    x = as_tensor(x)
    param_shape = (1,) * (x.ndim - 1) + (x.shape[-1],)
    return _normalize(x, gamma, beta, (x.ndim - 1,), eps, "layer_norm", param_shape)


def instance_norm(x, gamma, beta, eps: float = 1e-5) -> Tensor:
    """Per-sample, per-channel normalization over the spatial axes."""
    x = as_tensor(x)
    xb, squeeze = _batched(x)
    c = xb.shape[1]
    out = _normalize(xb, gamma, beta, (2, 3), eps, "instance_norm", (1, c, 1, 1))
    return _unbatch(out, squeeze)


@dataclass
class BatchNormStats:
    """Running mean/variance for one batch-norm layer."""

    mean: np.ndarray
    var: np.ndarray
    momentum: float = 0.1
    initialized: bool = False

    @classmethod
    def create(cls, channels: int, momentum: float = 0.1) -> "BatchNormStats":
        return cls(np.zeros(channels, np.float32), np.ones(channels, np.float32), momentum)


def batch_norm(x, gamma, beta, stats: BatchNormStats, training: bool, eps: float = 1e-5) -> Tensor:
    """Batch normalization over (N, H, W) per channel.

    Training mode normalizes with batch statistics and folds them into
    ``stats`` by exponential moving average (unbiased variance, as is
    conventional). Eval mode only reads ``stats``.
    """
    x = as_tensor(x)
    if x.ndim != 4:
        raise DimensionError(f"batch_norm expects (N,C,H,W), got {x.shape}")
    n, c, h, w = x.shape
    if training:
        m = n * h * w
        if m < 2:
            raise ContractError("batch_norm training mode needs at least two values per channel")
        out = _normalize(x, gamma, beta, (0, 2, 3), eps, "batch_norm", (1, c, 1, 1))
        bmean = x.data.mean(axis=(0, 2, 3))
        bvar = x.data.var(axis=(0, 2, 3)) * (m / (m - 1))
        mom = stats.momentum
        stats.mean = ((1 - mom) * stats.mean + mom * bmean).astype(np.float32)
        stats.var = ((1 - mom) * stats.var + mom * bvar).astype(np.float32)
        stats.initialized = True
        return out
    if not stats.initialized:
        raise ContractError("batch_norm eval mode with uninitialized statistics")
    gamma, beta = as_tensor(gamma), as_tensor(beta)
    inv = 1.0 / np.sqrt(stats.var.reshape(1, c, 1, 1) + eps)
    scale = gamma.data.reshape(1, c, 1, 1) * inv
    shift = beta.data.reshape(1, c, 1, 1) - stats.mean.reshape(1, c, 1, 1) * scale
    xd = x.data
    xhat = (xd - stats.mean.reshape(1, c, 1, 1)) * inv

    def bw(g):
        gx = g * scale if x.requires_grad else None
        ggam = (g * xhat).sum(axis=(0, 2, 3)) if gamma.requires_grad else None
        gbet = g.sum(axis=(0, 2, 3)) if beta.requires_grad else None
        return gx, ggam, gbet

    return result(xd * scale + shift, (x, gamma, beta), bw, "batch_norm_eval")


# ---------------------------------------------------------------------------
# convolutions
# ---------------------------------------------------------------------------


def conv2d(x, kernel, bias=None, pad: int = 0, stride: int = 1) -> Tensor:
    """2-D cross-correlation with zero padding.

    ``kernel`` is (Cout, Cin, k, k); output extents are
    ``(H + 2*pad - k) // stride + 1``.
    """
    x, kernel = as_tensor(x), as_tensor(kernel)
    xb, squeeze = _batched(x)
    n, cin, h, w = xb.shape
    if kernel.ndim != 4 or kernel.shape[1] != cin or kernel.shape[2] != kernel.shape[3]:
        raise DimensionError(f"conv2d: kernel {kernel.shape} incompatible with input {x.shape}")
    if pad < 0 or stride < 1:
        raise ContractError(f"conv2d: invalid pad={pad} stride={stride}")
    cout, _, k, _ = kernel.shape
    hp, wp = h + 2 * pad, w + 2 * pad
    if hp < k or wp < k:
        raise DimensionError(f"conv2d: kernel {k}x{k} larger than padded input {hp}x{wp}")
    ho, wo = (hp - k) // stride + 1, (wp - k) // stride + 1
    xd = xb.data
    if pad:
        xd = np.pad(xd, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    wm = kernel.data.reshape(cout, cin * k * k)

    if k == 1 and stride == 1:
        cols = np.ascontiguousarray(xd.transpose(1, 0, 2, 3)).reshape(cin, n * ho * wo)
    else:
        cols = np.empty((cin, k, k, n, ho, wo), dtype=xd.dtype)
        xt = xd.transpose(1, 0, 2, 3)
        for i in range(k):
            for j in range(k):
                cols[:, i, j] = xt[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride]
        cols = cols.reshape(cin * k * k, n * ho * wo)
    out = wm @ cols
    parents = [xb, kernel]
    if bias is not None:
        b = as_tensor(bias)
        parents.append(b)
        out = out + b.data.reshape(cout, 1)
    out = np.ascontiguousarray(out.reshape(cout, n, ho, wo).transpose(1, 0, 2, 3))

    def bw(g):
        gm = np.ascontiguousarray(g.transpose(1, 0, 2, 3)).reshape(cout, n * ho * wo)
        gx = gk = gb = None
        if kernel.requires_grad:
            gk = (gm @ cols.T).reshape(kernel.shape)
        if len(parents) == 3 and parents[2].requires_grad:
            gb = gm.sum(axis=1)
        if xb.requires_grad:
            dcols = (wm.T @ gm).reshape(cin, k, k, n, ho, wo)
            dxp = np.zeros((cin, n, hp, wp), dtype=g.dtype)
            for i in range(k):
                for j in range(k):
                    dxp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += dcols[:, i, j]
            gx = dxp[:, :, pad:pad + h, pad:pad + w].transpose(1, 0, 2, 3)
            gx = np.ascontiguousarray(gx)
        return (gx, gk) if len(parents) == 2 else (gx, gk, gb)

    return _unbatch(result(out, parents, bw, "conv2d"), squeeze)


def transposed_conv2d(x, kernel, bias=None, stride: int = 2) -> Tensor:
    """2x2 transposed convolution with stride 2: every input cell scatters a
    2x2 output block, so spatial extents exactly double."""
    if stride != 2:
        raise ContractError("transposed_conv2d supports stride 2 only")
    x, kernel = as_tensor(x), as_tensor(kernel)
    xb, squeeze = _batched(x)
    n, cin, h, w = xb.shape
    if kernel.ndim != 4 or kernel.shape[0] != cin or kernel.shape[2:] != (2, 2):
        raise DimensionError(f"transposed_conv2d: kernel {kernel.shape} incompatible with input {x.shape}")
    cout = kernel.shape[1]
    xm = np.ascontiguousarray(xb.data.transpose(1, 0, 2, 3)).reshape(cin, n * h * w)
    km = kernel.data.reshape(cin, cout * 4)
    y = km.T @ xm
    parents = [xb, kernel]
    if bias is not None:
        b = as_tensor(bias)
        parents.append(b)
        y = y + np.repeat(b.data, 4).reshape(cout * 4, 1)
    out = y.reshape(cout, 2, 2, n, h, w).transpose(3, 0, 4, 1, 5, 2).reshape(n, cout, 2 * h, 2 * w)
    out = np.ascontiguousarray(out)

    def bw(g):
        gm = g.reshape(n, cout, h, 2, w, 2).transpose(1, 3, 5, 0, 2, 4).reshape(cout * 4, n * h * w)
        gx = gk = gb = None
        if xb.requires_grad:
            gx = np.ascontiguousarray((km @ gm).reshape(cin, n, h, w).transpose(1, 0, 2, 3))
        if kernel.requires_grad:
            gk = (xm @ gm.T).reshape(kernel.shape)
        if len(parents) == 3 and parents[2].requires_grad:
            gb = gm.reshape(cout, 4, -1).sum(axis=(1, 2))
        return (gx, gk) if len(parents) == 2 else (gx, gk, gb)

    return _unbatch(result(out, parents, bw, "transposed_conv2d"), squeeze)


# ---------------------------------------------------------------------------
# resampling
# ---------------------------------------------------------------------------


@lru_cache(maxsize=64)
def pooling_matrix(n_in: int, n_out: int) -> np.ndarray:
    """Adaptive-average-pooling weights: window i spans
    [floor(i*n_in/n_out), ceil((i+1)*n_in/n_out))."""
    m = np.zeros((n_out, n_in), dtype=np.float64)
    for i in range(n_out):
        lo = (i * n_in) // n_out
        hi = -((-(i + 1) * n_in) // n_out)
        m[i, lo:hi] = 1.0 / (hi - lo)
    return m


@lru_cache(maxsize=64)
def bilinear_matrix(n_in: int, n_out: int) -> np.ndarray:
    """Half-pixel-centred linear interpolation weights (edge-clamped)."""
    m = np.zeros((n_out, n_in), dtype=np.float64)
    scale = n_in / n_out
    for i in range(n_out):
        src = (i + 0.5) * scale - 0.5
        src = min(max(src, 0.0), n_in - 1)
        lo = int(np.floor(src))
        hi = min(lo + 1, n_in - 1)
        frac = src - lo
        m[i, lo] += 1.0 - frac
        m[i, hi] += frac
    return m


def separable_resample(x, mh: np.ndarray, mw: np.ndarray, op: str = "resample") -> Tensor:
    """y[..., i, j] = sum_ab mh[i, a] x[..., a, b] mw[j, b]."""
    x = as_tensor(x)
    mh = mh.astype(x.dtype)
    mw = mw.astype(x.dtype)
    if x.shape[-2] != mh.shape[1] or x.shape[-1] != mw.shape[1]:
        raise DimensionError(f"{op}: input {x.shape} does not match resampling matrices")
    out = np.matmul(np.matmul(mh, x.data), mw.T)

    def bw(g):
        return (np.matmul(np.matmul(mh.T, g), mw),)

    return result(out, (x,), bw, op)


def adaptive_avg_pool(x, out: tuple[int, int]) -> Tensor:
    x = as_tensor(x)
    h, w = x.shape[-2:]
    oh, ow = out
    if oh > h or ow > w or oh < 1 or ow < 1:
        raise DimensionError(f"adaptive_avg_pool: cannot pool {h}x{w} to {oh}x{ow}")
    return separable_resample(x, pooling_matrix(h, oh), pooling_matrix(w, ow), "adaptive_avg_pool")


def resize_bilinear(x, out: tuple[int, int]) -> Tensor:
    x = as_tensor(x)
    h, w = x.shape[-2:]
    return separable_resample(x, bilinear_matrix(h, out[0]), bilinear_matrix(w, out[1]), "resize_bilinear")
