"""Golden-hash regression table for the degradation kernels.

The reference image is built from closed-form expressions (no RNG), every
kind is applied at severity 2 with seed 7, and the SHA-256 of the raw
little-endian float32 bytes is compared with the committed table.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np

from .kinds import DegradationSpec, kinds
from .ops import apply

TABLE_PATH = Path(__file__).with_name("golden_hashes.json")
SEVERITY = 2
SEED = 7


def reference_image(size: int = 64) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64) / (size - 1)
    r = 0.15 + 0.7 * xx
    g = 0.2 + 0.6 * yy
    b = 0.5 + 0.3 * np.sin(2 * np.pi * (xx + yy))
    img = np.stack([r, g, b], axis=-1)
    disk = (xx - 0.55) ** 2 + (yy - 0.45) ** 2 < 0.2 ** 2
    img[disk] = (0.9, 0.25, 0.1)
    square = (np.abs(xx - 0.25) < 0.12) & (np.abs(yy - 0.75) < 0.12)
    img[square] = (0.1, 0.3, 0.85)
    return np.clip(img, 0.0, 1.0).astype(np.float32)


def digest(arr: np.ndarray) -> str:
    return hashlib.sha256(np.ascontiguousarray(arr, dtype="<f4").tobytes()).hexdigest()


def compute_table() -> dict[str, str]:
    img = reference_image()
    return {k.value: digest(apply(img, DegradationSpec(k, SEVERITY, SEED))) for k in kinds()}


def load_table(path: Path = TABLE_PATH) -> dict[str, str]:
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def check_table(path: Path = TABLE_PATH) -> dict[str, bool]:
    expected = load_table(path)
    actual = compute_table()
    return {k: expected.get(k) == v for k, v in actual.items()}


def write_table(path: Path = TABLE_PATH) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(compute_table(), fh, indent=2, sort_keys=False)
        fh.write("\n")
