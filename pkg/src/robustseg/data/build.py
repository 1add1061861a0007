from __future__ import annotations

from pathlib import Path

import numpy as np

from ..degrade.kinds import DegradationKind, DegradationSpec, kinds
from ..degrade.ops import apply_with_mask
from ..degrade.rng import DeterministicRng, derive_seed
from ..errors import DomainError
from .io import Manifest, read_record, record_paths, write_record
from .records import ImageMaskRecord
from .scenes import SceneConfig, generate_scene

SPLITS = ("train", "val", "test")
DEFAULT_COUNTS = {"train": 2000, "val": 200, "test": 200}


def scene_seed(seed: int, split: str, index: int) -> int:
    return derive_seed(seed, "scene", split, index)


def variant_spec(record: ImageMaskRecord, kind: DegradationKind) -> DegradationSpec:
    """Severity and seed of one evaluation variant, fixed by (record, kind)."""
    rng = DeterministicRng(derive_seed(record.gen_seed, "variant", kind.value))
    return DegradationSpec(kind, int(rng.integers(1, 4)), rng.next_seed())


def build_dataset(seed: int, counts: dict[str, int] | None = None, root: str | Path = "data",
                  policy: str = "fanout", scene_cfg: SceneConfig = SceneConfig()) -> Manifest:
    """Generate scenes for every split and write them with a manifest.

    Train records are stored clear; val and test records also get all 16
    variants (15 corruptions plus identity) on disk.
    """
    counts = dict(DEFAULT_COUNTS if counts is None else counts)
    if policy != "fanout":
        raise DomainError(f"unknown degradation policy {policy!r}")
    for split in SPLITS:
        if counts.get(split, 0) < 1:
            raise DomainError(f"count for split {split!r} must be >= 1")
    root = Path(root)
    entries: list[dict] = []
    for split in SPLITS:
        for i in range(counts[split]):
            rid = f"{split}-{i:05d}"
            record = generate_scene(scene_seed(seed, split, i), scene_cfg, record_id=rid)
            clear = write_record(record, root)
            clear["split"] = split
            entries.append(clear)
            if split == "train":
                continue
            for kind in kinds():
                spec = variant_spec(record, kind)
                variant = apply_with_mask(record, spec).replace(id=f"{rid}-{kind.value}")
                if kind is DegradationKind.ELASTIC_TRANSFORM:
                    e = write_record(variant, root)
                else:
                    e = write_record(variant, root, mask_paths=clear["masks"], write_masks=False)
                e["split"] = split
                entries.append(e)
    manifest = Manifest(entries, root)
    manifest.write()
    return manifest


def load_split(manifest: Manifest, split: str, clear_only: bool = False) -> list[ImageMaskRecord]:
    entries = manifest.clear(split) if clear_only else manifest.split(split)
    return [read_record(e, manifest.root) for e in entries]


def load_train_images(manifest: Manifest) -> tuple[np.ndarray, list[list[np.ndarray]], list[int]]:
    """Clear training set held in memory: uint8 images, masks, gen seeds."""
    recs = load_split(manifest, "train", clear_only=True)
    images = np.stack([np.round(r.image * 255.0).astype(np.uint8) for r in recs])
    return images, [r.masks for r in recs], [r.gen_seed for r in recs]


__all__ = ["build_dataset", "load_split", "load_train_images", "scene_seed", "variant_spec",
           "record_paths", "SPLITS", "DEFAULT_COUNTS"]
