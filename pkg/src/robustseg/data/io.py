"""PNG persistence for records and the JSON-lines manifest."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from ..degrade.kinds import DegradationSpec
from ..errors import ManifestError, RecordIOError
from .records import ImageMaskRecord


def quantize(image: np.ndarray) -> np.ndarray:
    return np.round(np.clip(image, 0.0, 1.0) * 255.0).astype(np.uint8)


def write_png(path: Path, arr: np.ndarray) -> None:
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        Image.fromarray(arr).save(path, format="PNG")
    except OSError as exc:
        raise RecordIOError(str(path), f"cannot write PNG: {exc}") from exc


def read_png(path: Path) -> np.ndarray:
    try:
        with Image.open(path) as im:
            im.load()
            return np.asarray(im)
    except (OSError, ValueError) as exc:
        raise RecordIOError(str(path), f"cannot read PNG: {exc}") from exc


def record_paths(record_id: str, n_masks: int) -> tuple[str, list[str]]:
    return f"images/{record_id}.png", [f"masks/{record_id}_{i}.png" for i in range(n_masks)]


def write_record(record: ImageMaskRecord, root: str | Path, mask_paths: list[str] | None = None,
                 write_masks: bool = True) -> dict:
    """Write the image (and masks) under ``root``; returns the manifest entry."""
    root = Path(root)
    image_rel, default_masks = record_paths(record.id, len(record.masks))
    mask_rel = mask_paths if mask_paths is not None else default_masks
    write_png(root / image_rel, quantize(record.image))
    if write_masks:
        for rel, mask in zip(mask_rel, record.masks):
            write_png(root / rel, np.where(np.asarray(mask, bool), 255, 0).astype(np.uint8))
    return {"id": record.id, "image": image_rel, "masks": list(mask_rel),
            "degradation": record.degradation.token() if record.degradation else "clear",
            "gen_seed": int(record.gen_seed)}


def read_record(entry: dict, root: str | Path) -> ImageMaskRecord:
    root = Path(root)
    img = read_png(root / entry["image"])
    if img.ndim != 3 or img.shape[2] != 3:
        raise RecordIOError(str(root / entry["image"]), f"expected RGB, got shape {img.shape}")
    masks = []
    for rel in entry["masks"]:
        m = read_png(root / rel)
        if m.ndim != 2:
            raise RecordIOError(str(root / rel), f"expected grayscale mask, got shape {m.shape}")
        masks.append(m > 127)
    token = entry.get("degradation", "clear")
    deg = None if token == "clear" else DegradationSpec.parse(token)
    return ImageMaskRecord(id=entry["id"], image=img.astype(np.float32) / 255.0, masks=masks,
                           gen_seed=int(entry.get("gen_seed", 0)), degradation=deg)


@dataclass
class Manifest:
    entries: list[dict]
    root: Path

    def split(self, tag: str) -> list[dict]:
        return [e for e in self.entries if e["split"] == tag]

    def clear(self, tag: str) -> list[dict]:
        return [e for e in self.entries if e["split"] == tag and e["degradation"] == "clear"]

    def write(self, path: str | Path | None = None) -> Path:
        path = Path(path) if path else self.root / "manifest.jsonl"
        try:
            with open(path, "w", encoding="utf-8") as fh:
                for e in self.entries:
                    fh.write(json.dumps(e, sort_keys=True) + "\n")
        except OSError as exc:
            raise RecordIOError(str(path), f"cannot write manifest: {exc}") from exc
        return path

    @classmethod
    def read(cls, path: str | Path, check_files: bool = True) -> "Manifest":
        path = Path(path)
        if path.is_dir():
            path = path / "manifest.jsonl"
        try:
            lines = path.read_text(encoding="utf-8").splitlines()
        except OSError as exc:
            raise RecordIOError(str(path), f"cannot read manifest: {exc}") from exc
        entries = []
        for n, line in enumerate(lines, 1):
            if not line.strip():
                continue
            try:
                entries.append(json.loads(line))
            except json.JSONDecodeError as exc:
                raise ManifestError(f"{path}:{n}: {exc}") from None
        man = cls(entries, path.parent)
        man.validate(check_files)
        return man

    def validate(self, check_files: bool = True) -> None:
        seen = set()
        for e in self.entries:
            for key in ("id", "image", "masks", "split", "degradation"):
                if key not in e:
                    raise ManifestError(f"entry {e.get('id')!r} lacks key {key!r}")
            if e["id"] in seen:
                raise ManifestError(f"duplicate record id {e['id']!r}")
            seen.add(e["id"])
            if check_files:
                for rel in [e["image"], *e["masks"]]:
                    if not (self.root / rel).is_file():
                        raise RecordIOError(str(self.root / rel), "referenced file is missing")
