"""Degradation-invariance statistic: silhouette of pooled mask features with
respect to the degradation label (lower means more invariant)."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .. import tensor as T
from ..degrade.kinds import DegradationKind as K
from ..degrade.kinds import DegradationSpec
from ..degrade.ops import apply
from ..degrade.rng import derive_seed
from ..errors import ContractError
from ..model.robust import RobustPath
from ..model.sam import SamMini, to_nchw
from ..model.teacher import eval_prompt

DEFAULT_KINDS = (K.SNOW, K.FOG, K.GAUSSIAN_NOISE, K.MOTION_BLUR, K.LOW_LIGHT, K.COMPRESSION)


def silhouette(x: np.ndarray, labels) -> float:
    """Mean over samples of (b - a) / max(a, b) with Euclidean distances.

    a is the mean distance to the sample's own cluster, b the smallest mean
    distance to another cluster; samples in singleton clusters and samples
    with a = b = 0 contribute 0.
    """
    x = np.asarray(x, dtype=np.float64)
    labels = np.asarray(labels)
    names = np.unique(labels)
    if len(names) < 2:
        raise ContractError("silhouette needs at least two distinct labels")
    sq = (x * x).sum(axis=1)
    d = np.sqrt(np.maximum(sq[:, None] + sq[None, :] - 2.0 * x @ x.T, 0.0))
    np.fill_diagonal(d, 0.0)
    scores = np.zeros(len(x))
    for i in range(len(x)):
        own = labels == labels[i]
        n_own = own.sum() - 1
        if n_own == 0:
            continue
        a = d[i, own].sum() / n_own
        b = min(d[i, labels == other].mean() for other in names if other != labels[i])
        denom = max(a, b)
        scores[i] = 0.0 if denom == 0 else (b - a) / denom
    return float(scores.mean())


@dataclass
class InvarianceReport:
    silhouettes: dict[str, float]
    kinds: list[str]
    n_images: int
    feature: str = "global average of the final 32-channel mask feature"
    sample_counts: dict[str, int] = field(default_factory=dict)

    def as_dict(self) -> dict:
        return asdict(self)


def teacher_features(teacher: SamMini):
    """Feature function: (NHWC images, (N, P, 2) coords) -> (N, 32, 64, 64)."""

    def fn(images, coords):
        with T.no_grad():
            emb = teacher.encode_image(to_nchw(images))
            dec = teacher.decode(emb, teacher.encode_prompt(coords, "point"))
            return teacher.mask_head(dec.precursor).data
    return fn


def robust_features(teacher: SamMini, robust: RobustPath):
    robust.eval()

    def fn(images, coords):
        with T.no_grad():
            return robust.forward(teacher, to_nchw(images), coords, "point").feature.data
    return fn


def pooled_features(feature_fn, records, kinds, seed: int = 0, batch: int = 30) -> tuple[np.ndarray, list]:
    """One 32-vector per (image, kind): instance 0, one seeded point prompt."""
    images, coords, labels = [], [], []
    for r in records:
        prompt = eval_prompt(r.masks[0], r.gen_seed, 0)
        for kind in kinds:
            spec = DegradationSpec(kind, 2, derive_seed(seed, r.gen_seed, kind.value))
            images.append(apply(r.image, spec))
            coords.append(prompt.coords())
            labels.append(kind.value)
    feats = []
    for s in range(0, len(images), batch):
        f = feature_fn(np.stack(images[s:s + batch]), np.stack(coords[s:s + batch]))
        feats.append(f.mean(axis=(2, 3)))
    return np.concatenate(feats), labels


def invariance_report(models: dict, records, kinds=DEFAULT_KINDS, seed: int = 0) -> InvarianceReport:
    """``models`` maps a name to a feature function (see teacher_features)."""
    kinds = list(kinds)
    if len(kinds) < 2:
        raise ContractError("invariance needs at least two degradation kinds")
    out, counts = {}, {}
    for name, fn in models.items():
        feats, labels = pooled_features(fn, records, kinds, seed)
        out[name] = silhouette(feats, labels)
        counts[name] = len(labels)
    return InvarianceReport(out, [k.value for k in kinds], len(records), sample_counts=counts)
