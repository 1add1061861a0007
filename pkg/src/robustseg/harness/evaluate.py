"""Per-degradation evaluation through the inference path only."""

from __future__ import annotations

from pathlib import Path
from typing import Callable

import numpy as np
from scipy.special import expit

from .. import tensor as T
from ..data.io import Manifest, read_record
from ..degrade.kinds import DegradationKind, degraded_kinds
from ..errors import ManifestError
from ..model.robust import RobustPath
from ..model.sam import SamMini, to_nchw
from ..model.teacher import eval_prompt
from ..objectives.metrics import MetricReport, average_precision, bucket_means, pixel_metrics, size_bucket

Predictor = Callable[[np.ndarray, np.ndarray, str], np.ndarray]

_SPLIT_CACHE: dict[tuple[str, str], dict] = {}


def load_variants(manifest: Manifest, split: str) -> dict[str, list]:
    """Records of one split grouped by variant: "clear" plus one key per kind."""
    key = (str(Path(manifest.root).resolve()), split)
    if key in _SPLIT_CACHE:
        return _SPLIT_CACHE[key]
    groups: dict[str, list] = {}
    for e in manifest.split(split):
        rec = read_record(e, manifest.root)
        name = "clear" if rec.degradation is None else rec.degradation.kind.value
        groups.setdefault(name, []).append(rec)
    expected = ["clear"] + [k.value for k in DegradationKind]
    missing = [k for k in expected if k not in groups]
    if missing:
        raise ManifestError(f"split {split!r} lacks variants {missing}")
    sizes = {len(v) for v in groups.values()}
    if len(sizes) != 1:
        raise ManifestError(f"split {split!r} has uneven variant counts {sorted(sizes)}")
    _SPLIT_CACHE[key] = groups
    return groups


def teacher_predictor(teacher: SamMini) -> Predictor:
    def predict(images, coords, kind):
        with T.no_grad():
            return teacher.forward(to_nchw(images), coords, kind).data
    return predict


def robust_predictor(teacher: SamMini, robust: RobustPath) -> Predictor:
    robust.eval()

    def predict(images, coords, kind):
        with T.no_grad():
            return robust.forward(teacher, to_nchw(images), coords, kind).logits.data
    return predict


def evaluate_records(predict: Predictor, records, prompt_kind: str = "point", n_points: int = 1,
                     batch: int = 32, collect_ap: bool = False):
    """Mean (iou, dice, pa) over every (record, instance); optionally the
    per-instance (AP, size bucket) pairs."""
    items = []
    for r in records:
        for k, m in enumerate(r.masks):
            if m.any():
                items.append((r.image, eval_prompt(m, r.gen_seed, k, prompt_kind, n_points).coords(), m))
    sums = {"iou": 0.0, "dice": 0.0, "pa": 0.0}
    pairs = []
    for s in range(0, len(items), batch):
        chunk = items[s:s + batch]
        logits = predict(np.stack([c[0] for c in chunk]), np.stack([c[1] for c in chunk]), prompt_kind)
        for lg, (_, _, m) in zip(logits, chunk):
            pm = pixel_metrics(lg > 0, m)
            for c in sums:
                sums[c] += pm[c]
            if collect_ap:
                pairs.append((average_precision(expit(lg.astype(np.float64)), m), size_bucket(m)))
    n = max(len(items), 1)
    return {c: v / n for c, v in sums.items()}, pairs


def evaluate(predict: Predictor, manifest: Manifest, split: str = "test", prompt_kind: str = "point",
             n_points: int = 1, metadata: dict | None = None, with_ap: bool = True) -> MetricReport:
    groups = load_variants(manifest, split)
    rows = {}
    pairs_all = []
    for kind in degraded_kinds():
        rows[kind.value], pairs = evaluate_records(predict, groups[kind.value], prompt_kind, n_points,
                                                   collect_ap=with_ap)
        pairs_all += pairs
    identity, _ = evaluate_records(predict, groups[DegradationKind.IDENTITY.value], prompt_kind, n_points)
    clear, pairs = evaluate_records(predict, groups["clear"], prompt_kind, n_points, collect_ap=with_ap)
    pairs_all += pairs
    ap = bucket_means(pairs_all) if with_ap and pairs_all else {}
    meta = {"split": split, "prompt": prompt_kind, "points": n_points, **(metadata or {})}
    return MetricReport(rows, clear, ap, meta, identity)
