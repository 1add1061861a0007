"""Five-variant ablation ladder."""

from __future__ import annotations

import csv
import io

from ..data.io import Manifest
from ..model.robust import VARIANTS
from ..model.sam import SamMini
from .config import TrainConfig
from .evaluate import evaluate, robust_predictor
from .train import train_robust

LADDER = ("token_only", "amfg", "amfg_f", "amfg_f_aotg", "all")


def ablation_run(teacher: SamMini, base: TrainConfig, manifest: Manifest, split: str = "test",
                 variants=LADDER, log_fn=None) -> list[dict]:
    """Train and evaluate each variant with the same seed; rows carry degraded iou/pa."""
    rows = []
    for name in variants:
        cfg = base.with_variant(name)
        state = train_robust(teacher, cfg, log_fn=log_fn)
        report = evaluate(robust_predictor(teacher, state.robust), manifest, split,
                          metadata={"variant": name, "seed": cfg.seed}, with_ap=False)
        rows.append({"variant": name, "iou": report.degraded["iou"], "pa": report.degraded["pa"],
                     "report": report})
    return rows


def ablation_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["variant", "iou", "pa"])
    for r in rows:
        w.writerow([r["variant"], f"{r['iou']:.6f}", f"{r['pa']:.6f}"])
    return buf.getvalue()


__all__ = ["LADDER", "VARIANTS", "ablation_run", "ablation_csv"]
