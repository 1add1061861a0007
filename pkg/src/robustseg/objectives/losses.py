"""Training objectives.

Feature and token consistency use an epsilon-guarded L2 norm divided by the
square root of the element count. Batched inputs (leading axis N) are reduced
per sample and then averaged.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .. import tensor as T
from ..errors import DimensionError, DomainError
from ..tensor import Tensor
from ..tensor import functional as F

NORM_EPS = 1e-12
LOG_FLOOR = float(np.log(1e-12))


@dataclass(frozen=True)
class LossWeights:
    tc: float = 1.0      # lambda1
    seg: float = 1.0     # lambda2
    focal: float = 20.0  # lambda3

    def __post_init__(self):
        if min(self.tc, self.seg, self.focal) < 0:
            raise DomainError(f"loss weights must be non-negative: {self}")


@dataclass
class FeatureBundle:
    f_mfd_hat: Tensor
    f_cfd_hat: Tensor
    f_mfc: Tensor
    f_cfc: Tensor
    t_ro_hat: Tensor
    t_oc: Tensor
    f_mfd: Optional[Tensor] = None
    f_cfd: Optional[Tensor] = None
    t_ro: Optional[Tensor] = None


def normalized_l2(a, b, batched: bool = False) -> Tensor:
    """sqrt(sum d^2 + eps) / sqrt(count); per sample when ``batched``."""
    a, b = T.as_tensor(a), T.as_tensor(b)
    if a.shape != b.shape:
        raise DimensionError(f"shape mismatch {a.shape} vs {b.shape}")
    d = a - b
    if not batched:
        return T.sqrt(T.tsum(d * d) + NORM_EPS) * (1.0 / np.sqrt(d.size))
    axes = tuple(range(1, d.ndim))
    count = int(np.prod(d.shape[1:]))
    per = T.sqrt(T.tsum(d * d, axis=axes) + NORM_EPS) * (1.0 / np.sqrt(count))
    return T.mean(per)


def _batched(b: FeatureBundle) -> bool:
    return b.f_mfc.ndim == 4


def mfc_loss(b: FeatureBundle) -> Tensor:
    batched = _batched(b)
    return normalized_l2(b.f_cfd_hat, b.f_cfc, batched) + normalized_l2(b.f_mfd_hat, b.f_mfc, batched)


def tc_loss(b: FeatureBundle) -> Tensor:
    if b.t_ro_hat.shape[-1] != b.t_oc.shape[-1]:
        raise DimensionError(f"token dims differ: {b.t_ro_hat.shape} vs {b.t_oc.shape}")
    return normalized_l2(b.t_ro_hat, b.t_oc, b.t_ro_hat.ndim == 2)


def _pixel_axes(x: Tensor) -> tuple[int, ...]:
    return (x.ndim - 2, x.ndim - 1)


def dice_loss(p_prob, g, smooth: float = 1.0) -> Tensor:
    """1 - (2 sum PG + s) / (sum P + sum G + s); masks are the trailing two axes."""
    p_prob = T.as_tensor(p_prob)
    g = np.asarray(g, dtype=p_prob.dtype)
    if p_prob.shape != g.shape:
        raise DimensionError(f"prediction {p_prob.shape} and target {g.shape} differ")
    if np.any(p_prob.data < 0) or np.any(p_prob.data > 1) or not np.all(np.isfinite(p_prob.data)):
        raise DomainError("dice_loss needs probabilities in [0, 1]")
    axes = _pixel_axes(p_prob)
    inter = T.tsum(p_prob * g, axis=axes)
    denom = T.tsum(p_prob, axis=axes) + g.sum(axis=axes) + smooth
    return T.mean(1.0 - (inter * 2.0 + smooth) / denom)


def focal_loss(logits, g, gamma: float = 2.0, alpha: float = 0.25) -> Tensor:
    """Mean over pixels of -alpha_t (1 - p_t)^gamma log p_t, evaluated through
    z = (2G - 1) x so that log p_t = logsigmoid(z) stays stable."""
    logits = T.as_tensor(logits)
    g = np.asarray(g, dtype=logits.dtype)
    if logits.shape != g.shape:
        raise DimensionError(f"logits {logits.shape} and target {g.shape} differ")
    sign = (2.0 * g - 1.0).astype(logits.dtype)
    z = logits * sign
    log_pt = T.clip_min(F.logsigmoid(z), LOG_FLOOR)
    alpha_t = np.where(g > 0.5, alpha, 1.0 - alpha).astype(logits.dtype)
    if gamma == 0:
        return T.mean(log_pt * (-alpha_t))
    mod = T.power(1.0 - F.sigmoid(z), gamma)
    return T.mean(mod * log_pt * (-alpha_t))


def seg_loss(logits, g, focal_weight: float = 20.0, gamma: float = 2.0, alpha: float = 0.25) -> Tensor:
    logits = T.as_tensor(logits)
    loss = dice_loss(F.sigmoid(logits), g)
    if focal_weight == 0:
        return loss
    return loss + focal_loss(logits, g, gamma, alpha) * focal_weight


def overall_loss(b: FeatureBundle, logits, g, w: LossWeights = LossWeights()) -> Tensor:
    """mfc + lambda1 * tc + lambda2 * seg."""
    total = mfc_loss(b)
    if w.tc:
        total = total + tc_loss(b) * w.tc
    if w.seg:
        total = total + seg_loss(logits, g, w.focal) * w.seg
    return total


def loss_components(b: FeatureBundle | None, logits, g, w: LossWeights = LossWeights()) -> dict:
    """Scalar values of each term, for logging."""
    out = {"seg": float(seg_loss(logits, g, w.focal).item())}
    if b is not None:
        out["mfc"] = float(mfc_loss(b).item())
        out["tc"] = float(tc_loss(b).item())
    return out
