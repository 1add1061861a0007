"""Pixel metrics, threshold-averaged precision and the evaluation report."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from ..errors import ContractError, DimensionError, DomainError

DEFAULT_THRESHOLDS = tuple(round(0.05 * i, 2) for i in range(1, 20))
SMALL_FRACTION = 0.005
LARGE_FRACTION = 0.05


def _binary(x, name: str) -> np.ndarray:
    arr = np.asarray(x)
    if arr.dtype == bool:
        return arr
    if not np.all((arr == 0) | (arr == 1)):
        raise DomainError(f"{name} must be binary")
    return arr.astype(bool)


def pixel_metrics(p_binary, g) -> dict[str, float]:
    p, g = _binary(p_binary, "prediction"), _binary(g, "ground truth")
    if p.shape != g.shape:
        raise DimensionError(f"prediction {p.shape} and ground truth {g.shape} differ")
    inter = int(np.count_nonzero(p & g))
    union = int(np.count_nonzero(p | g))
    total = int(np.count_nonzero(p)) + int(np.count_nonzero(g))
    agree = int(np.count_nonzero(p == g))
    return {
        "iou": 1.0 if union == 0 else inter / union,
        "dice": 1.0 if total == 0 else 2.0 * inter / total,
        "pa": agree / p.size,
    }


def check_thresholds(thresholds) -> np.ndarray:
    t = np.asarray(list(thresholds), dtype=np.float64)
    if t.size == 0:
        raise ContractError("average_precision needs at least one threshold")
    if np.any(t <= 0) or np.any(t >= 1) or np.any(np.diff(t) <= 0):
        raise ContractError("thresholds must be strictly increasing inside (0, 1)")
    return t


def average_precision(p_prob, g, thresholds=DEFAULT_THRESHOLDS) -> float:
    """Mean over thresholds of TP / (TP + FP); an empty prediction counts as
    precision 1."""
    t = check_thresholds(thresholds)
    p = np.asarray(p_prob, dtype=np.float64)
    g = _binary(g, "ground truth")
    if p.shape != g.shape:
        raise DimensionError(f"prediction {p.shape} and ground truth {g.shape} differ")
    pf, gf = p.ravel(), g.ravel()
    # exact rational mean of the per-threshold precisions, rounded once
    total = Fraction(0)
    for th in t:
        pred = pf >= th
        n_pred = int(np.count_nonzero(pred))
        tp = int(np.count_nonzero(pred & gf))
        total += 1 if n_pred == 0 else Fraction(tp, n_pred)
    return float(total / len(t))


def size_bucket(g) -> str:
    frac = np.count_nonzero(g) / np.asarray(g).size
    if frac < SMALL_FRACTION:
        return "S"
    return "M" if frac < LARGE_FRACTION else "L"


def bucket_means(scored: list[tuple[float, str]]) -> dict[str, float]:
    """Aggregate (AP, bucket) pairs; empty buckets are left out."""
    out = {"AP": float(np.mean([a for a, _ in scored]))}
    for name in ("S", "M", "L"):
        vals = [a for a, b in scored if b == name]
        if vals:
            out[f"AP_{name}"] = float(np.mean(vals))
    return out


def ap_size_buckets(instances, thresholds=DEFAULT_THRESHOLDS) -> dict[str, float]:
    """AP over all instances plus per-size buckets (by ground-truth area)."""
    if not instances:
        raise ContractError("ap_size_buckets needs at least one instance")
    return bucket_means([(average_precision(p, g, thresholds), size_bucket(g)) for p, g in instances])


@dataclass
class MetricReport:
    """Per-kind (iou, dice, pa) rows, a clear row, and the weighted average.

    The average weights the 16 variants (15 corruptions plus identity, whose
    images equal the clear ones) against the clear row 16:1.
    """

    rows: dict[str, dict[str, float]]
    clear: dict[str, float]
    ap: dict[str, float] = field(default_factory=dict)
    metadata: dict = field(default_factory=dict)
    identity: dict[str, float] | None = None

    COLUMNS = ("iou", "dice", "pa")

    @property
    def average(self) -> dict[str, float]:
        ident = self.identity if self.identity is not None else self.clear
        out = {}
        for c in self.COLUMNS:
            variants = [r[c] for r in self.rows.values()] + [ident[c]]
            out[c] = (16.0 * float(np.mean(variants)) + self.clear[c]) / 17.0
        return out

    @property
    def degraded(self) -> dict[str, float]:
        """Mean over the corruption rows only."""
        return {c: float(np.mean([r[c] for r in self.rows.values()])) for c in self.COLUMNS}

    def table(self) -> list[tuple[str, dict[str, float]]]:
        return list(self.rows.items()) + [("clear", self.clear), ("average", self.average)]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["kind", *self.COLUMNS])
        for name, row in self.table():
            w.writerow([name, *(f"{row[c]:.6f}" for c in self.COLUMNS)])
        return buf.getvalue()

    def to_json(self) -> str:
        body = {"rows": self.rows, "clear": self.clear, "average": self.average,
                "degraded": self.degraded, "identity": self.identity, "ap": self.ap,
                "metadata": self.metadata}
        # rows keep table order, so no sort_keys
        return json.dumps(body, indent=2) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "MetricReport":
        body = json.loads(text)
        return cls(body["rows"], body["clear"], body.get("ap", {}), body.get("metadata", {}),
                   body.get("identity"))
