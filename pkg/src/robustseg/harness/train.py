"""Robust training: the frozen teacher sees the clear image, the student path
sees a degraded copy, and only the robust parameters are updated."""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .. import tensor as T
from ..data.build import load_train_images
from ..data.io import Manifest
from ..data.prompts import point_prompt
from ..degrade.kinds import IDENTITY, DegradationKind, sample_spec
from ..degrade.ops import apply, elastic_field, elastic_warp, spec_generator
from ..degrade.rng import DeterministicRng, derive_seed
from ..errors import ContractError, DivergenceError, RecordIOError
from ..model.robust import RobustPath, init_from_teacher
from ..model.sam import SamMini, to_nchw
from ..model.teacher import teacher_hash
from ..objectives.losses import FeatureBundle, mfc_loss, seg_loss, tc_loss
from ..tensor import serialize
from ..tensor.optim import Adam
from .config import TrainConfig, format_config, parse_config

_TRAIN_CACHE: dict[str, tuple] = {}


def training_set(data_root: str | Path):
    key = str(Path(data_root).resolve())
    if key not in _TRAIN_CACHE:
        _TRAIN_CACHE[key] = load_train_images(Manifest.read(data_root, check_files=False))
    return _TRAIN_CACHE[key]


@dataclass
class RunState:
    robust: RobustPath
    optimizer: Adam
    epoch: int = 0
    step: int = 0
    teacher_sha: str = ""
    history: list = field(default_factory=list)
    log_lines: list = field(default_factory=list)


def degrade_sample(image_u8: np.ndarray, mask: np.ndarray, spec):
    """Degraded float image plus the target mask (moved only by elastic warps)."""
    clear = image_u8.astype(np.float32) / 255.0
    if spec.kind is DegradationKind.ELASTIC_TRANSFORM:
        dy, dx = elastic_field(clear.shape[:2], spec.severity, spec_generator(spec))
        warped, (wmask,) = elastic_warp(clear.astype(np.float64), [mask], dy, dx)
        return clear, np.clip(warped, 0.0, 1.0).astype(np.float32), wmask
    return clear, apply(clear, spec), mask


def make_batch(images, masks, indices, rng: DeterministicRng, cfg: TrainConfig):
    clear, degraded, coords, targets, specs = [], [], [], [], []
    for i in indices:
        spec = IDENTITY if cfg.identity_only else sample_spec(rng)
        k = int(rng.integers(0, len(masks[i])))
        c, d, target = degrade_sample(images[i], masks[i][k], spec)
        region = masks[i][k] & target
        prompt = point_prompt(region if region.any() else masks[i][k], cfg.prompt_points, rng)
        clear.append(c)
        degraded.append(d)
        coords.append(prompt.coords())
        targets.append(target)
        specs.append(spec.token())
    return (to_nchw(np.stack(clear)), to_nchw(np.stack(degraded)), np.stack(coords),
            np.stack(targets).astype(np.float32), specs)


def teacher_targets(teacher: SamMini, clear: np.ndarray, coords: np.ndarray):
    with T.no_grad():
        emb = teacher.encode_image(clear)
        dec = teacher.decode(emb, teacher.encode_prompt(coords, "point"))
        f_mfc, f_cfc = teacher.teacher_heads(dec)
    return f_mfc, f_cfc, dec.token


def train_step(state: RunState, teacher: SamMini, batch, cfg: TrainConfig) -> dict:
    clear, degraded, coords, target, _ = batch
    f_mfc, f_cfc, t_oc = teacher_targets(teacher, clear, coords)
    out = state.robust.forward(teacher, degraded, coords, "point")
    bundle = FeatureBundle(out.f_mfd_hat, out.f_cfd_hat, f_mfc, f_cfc, out.t_ro_hat, t_oc)
    seg = seg_loss(out.logits, target, cfg.focal_weight)
    w = cfg.weights
    if cfg.consistency:
        # the overall objective, assembled from parts so each is computed once
        mfc, tc = mfc_loss(bundle), tc_loss(bundle)
        loss = mfc + tc * w.tc + seg * w.seg
    else:
        with T.no_grad():
            mfc, tc = mfc_loss(bundle), tc_loss(bundle)
        loss = seg * w.seg
    value = float(loss.item())
    if not np.isfinite(value):
        raise DivergenceError(state.step, value)
    params = state.optimizer.params
    state.optimizer.zero_grad()
    T.backward(loss, params=params)
    state.optimizer.step()
    state.step += 1
    return {"loss": value, "mfc": float(mfc.item()), "tc": float(tc.item()), "seg": float(seg.item())}


def new_run(teacher: SamMini, cfg: TrainConfig) -> RunState:
    if not teacher.frozen:
        raise ContractError("teacher must be frozen before robust training")
    robust = init_from_teacher(teacher, seed=derive_seed(cfg.seed, "robust-init") % (1 << 32),
                               variant=cfg.variant)
    robust.train()
    return RunState(robust, Adam(robust.trainable(), lr=cfg.lr), teacher_sha=teacher_hash(teacher))


def train_robust(teacher: SamMini, cfg: TrainConfig, resume: RunState | None = None,
                 stop_epoch: int | None = None, checkpoint_dir: str | Path | None = None,
                 log_fn=None) -> RunState:
    """Train up to ``stop_epoch`` (default ``cfg.epochs``); resumable per epoch."""
    images, masks, _ = training_set(cfg.data)
    if cfg.train_records:
        images, masks = images[:cfg.train_records], masks[:cfg.train_records]
    state = resume if resume is not None else new_run(teacher, cfg)
    if state.teacher_sha != teacher_hash(teacher):
        raise ContractError("checkpoint was trained against a different teacher")
    state.robust.train()
    teacher.eval()
    per_epoch = len(images) // cfg.batch_size
    last = cfg.epochs if stop_epoch is None else min(stop_epoch, cfg.epochs)
    t0 = time.time()
    while state.epoch < last:
        rng = DeterministicRng(derive_seed(cfg.seed, "robust-epoch", state.epoch))
        order = rng.permutation(len(images))
        comps = []
        for b in range(per_epoch):
            batch = make_batch(images, masks, order[b * cfg.batch_size:(b + 1) * cfg.batch_size], rng, cfg)
            c = train_step(state, teacher, batch, cfg)
            comps.append(c)
            if cfg.log_every and state.step % cfg.log_every == 0:
                line = (f"step={state.step} loss={c['loss']:.6f} mfc={c['mfc']:.6f} "
                        f"tc={c['tc']:.6f} seg={c['seg']:.6f} wall={time.time() - t0:.2f}")
                state.log_lines.append(line)
                if log_fn:
                    log_fn(line)
        state.epoch += 1
        summary = {"epoch": state.epoch,
                   **{k: float(np.median([c[k] for c in comps])) for k in ("loss", "mfc", "tc", "seg")}}
        state.history.append(summary)
        if log_fn:
            log_fn(f"epoch={state.epoch} median_loss={summary['loss']:.6f} wall={time.time() - t0:.2f}")
        if checkpoint_dir is not None:
            save_run(state, cfg, Path(checkpoint_dir) / f"epoch_{state.epoch:03d}.rstn")
    state.robust.eval()
    return state


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------


def run_tensors(state: RunState) -> dict[str, np.ndarray]:
    out = {f"robust/{k}": v for k, v in state.robust.state_dict().items()}
    out.update({f"optim/{k}": v for k, v in state.optimizer.state_arrays().items()})
    return out


def save_run(state: RunState, cfg: TrainConfig, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    serialize.save(path, run_tensors(state))
    meta = {"epoch": state.epoch, "step": state.step, "teacher_sha256": state.teacher_sha,
            "config": format_config(cfg), "cfg_hash": cfg.digest(), "history": state.history}
    try:
        path.with_suffix(".json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    except OSError as exc:
        raise RecordIOError(str(path.with_suffix(".json")), f"cannot write sidecar: {exc}") from exc
    return path


def load_run(path: str | Path, teacher: SamMini) -> tuple[RunState, TrainConfig]:
    path = Path(path)
    tensors = serialize.load(path)
    try:
        meta = json.loads(path.with_suffix(".json").read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise RecordIOError(str(path.with_suffix(".json")), f"cannot read sidecar: {exc}") from exc
    cfg = parse_config(meta["config"])
    state = new_run(teacher, cfg)
    if meta["teacher_sha256"] != state.teacher_sha:
        raise ContractError(f"{path}: checkpoint belongs to a different teacher")
    state.robust.load_state_dict({k[7:]: v for k, v in tensors.items() if k.startswith("robust/")})
    state.optimizer.load_state_arrays({k[6:]: v for k, v in tensors.items() if k.startswith("optim/")})
    state.epoch, state.step, state.history = meta["epoch"], meta["step"], meta["history"]
    state.robust.eval()
    return state, cfg
