"""Clear-image pretraining of the teacher and its checkpoint format."""

from __future__ import annotations

import hashlib
import json
import logging
import time
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .. import tensor as T
from ..data.build import load_split, load_train_images
from ..data.io import Manifest
from ..data.prompts import box_prompt, point_prompt
from ..degrade.rng import DeterministicRng, derive_seed
from ..errors import ContractError, DivergenceError, RecordIOError, TrainingQualityError
from ..objectives.losses import seg_loss
from ..objectives.metrics import pixel_metrics
from ..tensor import serialize
from ..tensor.optim import Adam
from .sam import SamMini, predict_mask, to_nchw

log = logging.getLogger(__name__)

MIOU_FLOOR = 0.85


@dataclass(frozen=True)
class TeacherConfig:
    seed: int = 0
    epochs: int = 16
    lr: float = 1e-3
    batch_size: int = 8
    box_fraction: float = 0.2
    aux_weight: float = 1.0
    focal_weight: float = 20.0
    lr_floor: float = 0.1
    min_train_records: int = 200
    quality_floor: float = MIOU_FLOOR

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(asdict(self), sort_keys=True).encode()).hexdigest()[:16]


def eval_prompt(mask: np.ndarray, gen_seed: int, instance: int, kind: str = "point", n: int = 1):
    """Prompt for one evaluation instance; seeded by (record, instance) so every
    model sees the same prompt."""
    if kind == "box":
        return box_prompt(mask)
    rng = DeterministicRng(derive_seed(gen_seed, "prompt", instance))
    return point_prompt(mask, n, rng)


def sample_batch_prompts(masks_per_record, indices, rng: DeterministicRng, box_fraction: float):
    """One instance per record and one prompt per instance; the prompt kind is
    shared within the batch so the token count is uniform."""
    kind = "box" if rng.random() < box_fraction else "point"
    coords, targets = [], []
    for i in indices:
        masks = masks_per_record[i]
        k = int(rng.integers(0, len(masks)))
        p = box_prompt(masks[k]) if kind == "box" else point_prompt(masks[k], 1, rng)
        coords.append(p.coords())
        targets.append(masks[k])
    return kind, np.stack(coords), np.stack(targets).astype(np.float32)


def lr_at(cfg, step: int, total: int) -> float:
    """Cosine decay from lr to lr * lr_floor."""
    frac = step / max(total - 1, 1)
    return cfg.lr * (cfg.lr_floor + (1.0 - cfg.lr_floor) * 0.5 * (1.0 + np.cos(np.pi * frac)))


def teacher_logits(model: SamMini, images: np.ndarray, coords: np.ndarray, kind: str) -> np.ndarray:
    with T.no_grad():
        return model.forward(to_nchw(images), coords, kind).data


def validation_miou(model: SamMini, records, kind: str = "point", batch: int = 32) -> float:
    items = []
    for r in records:
        for k, m in enumerate(r.masks):
            items.append((r.image, eval_prompt(m, r.gen_seed, k, kind).coords(), m))
    ious = []
    for s in range(0, len(items), batch):
        chunk = items[s:s + batch]
        logits = teacher_logits(model, np.stack([c[0] for c in chunk]), np.stack([c[1] for c in chunk]), kind)
        for lg, (_, _, m) in zip(logits, chunk):
            ious.append(pixel_metrics(lg > 0, m)["iou"])
    return float(np.mean(ious))


def pretrain_teacher(manifest: Manifest, cfg: TeacherConfig = TeacherConfig(), log_fn=None,
                     enforce_floor: bool = True) -> tuple[SamMini, dict]:
    images, masks, _ = load_train_images(manifest)
    if len(images) < cfg.min_train_records:
        raise ContractError(f"teacher pretraining needs >= {cfg.min_train_records} records, got {len(images)}")
    val = load_split(manifest, "val", clear_only=True)
    model = SamMini(seed=cfg.seed)
    params = model.parameters()
    opt = Adam(params, lr=cfg.lr)
    root = DeterministicRng(derive_seed(cfg.seed, "teacher"))
    steps_per_epoch = len(images) // cfg.batch_size
    total = steps_per_epoch * cfg.epochs
    step = 0
    history = []
    t0 = time.time()
    for epoch in range(cfg.epochs):
        rng = root.child("epoch", epoch)
        order = rng.permutation(len(images))
        losses = []
        for b in range(steps_per_epoch):
            idx = order[b * cfg.batch_size:(b + 1) * cfg.batch_size]
            kind, coords, target = sample_batch_prompts(masks, idx, rng, cfg.box_fraction)
            logits, aux = model.forward(to_nchw(images[idx]), coords, kind, aux=True)
            loss = seg_loss(logits, target, cfg.focal_weight)
            if cfg.aux_weight:
                loss = loss + seg_loss(aux, target, cfg.focal_weight) * cfg.aux_weight
            value = float(loss.item())
            if not np.isfinite(value):
                raise DivergenceError(step, value)
            opt.zero_grad()
            T.backward(loss, params=params)
            opt.state.lr = lr_at(cfg, step, total)
            opt.step()
            losses.append(value)
            step += 1
        miou = validation_miou(model, val)
        entry = {"epoch": epoch + 1, "loss": float(np.mean(losses)), "val_miou": miou,
                 "wall": round(time.time() - t0, 2)}
        history.append(entry)
        (log_fn or log.info)(f"teacher epoch={epoch + 1} loss={entry['loss']:.4f} "
                             f"val_miou={miou:.4f} wall={entry['wall']}")
    model.freeze()
    info = {"val_miou": history[-1]["val_miou"], "frozen": True, "cfg_hash": cfg.digest(),
            "history": history, "train_seconds": round(time.time() - t0, 2)}
    if enforce_floor and info["val_miou"] < cfg.quality_floor:
        raise TrainingQualityError(info["val_miou"], cfg.quality_floor)
    return model, info


# ---------------------------------------------------------------------------
# checkpoint
# ---------------------------------------------------------------------------

PREFIX = "teacher/"


def teacher_state(model: SamMini) -> dict[str, np.ndarray]:
    return {PREFIX + k: v for k, v in model.state_dict().items()}


def teacher_bytes(model: SamMini) -> bytes:
    return serialize.dumps(teacher_state(model))


def teacher_hash(model: SamMini) -> str:
    return hashlib.sha256(teacher_bytes(model)).hexdigest()


def save_teacher(model: SamMini, info: dict, path: str | Path) -> Path:
    path = Path(path)
    if not model.frozen:
        raise ContractError("only frozen teachers are checkpointed")
    path.parent.mkdir(parents=True, exist_ok=True)
    serialize.save(path, teacher_state(model))
    sidecar = dict(info, frozen=True, tensor_sha256=teacher_hash(model))
    try:
        path.with_suffix(".json").write_text(json.dumps(sidecar, indent=2, sort_keys=True) + "\n")
    except OSError as exc:
        raise RecordIOError(str(path.with_suffix(".json")), f"cannot write sidecar: {exc}") from exc
    return path


def load_teacher(path: str | Path) -> tuple[SamMini, dict]:
    path = Path(path)
    state = serialize.load(path)
    try:
        info = json.loads(path.with_suffix(".json").read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise RecordIOError(str(path.with_suffix(".json")), f"cannot read sidecar: {exc}") from exc
    model = SamMini(seed=0)
    model.load_state_dict({k[len(PREFIX):]: v for k, v in state.items() if k.startswith(PREFIX)})
    if info.get("frozen"):
        model.freeze()
    return model, info


__all__ = ["TeacherConfig", "pretrain_teacher", "save_teacher", "load_teacher", "teacher_hash",
           "teacher_bytes", "validation_miou", "eval_prompt", "predict_mask"]
