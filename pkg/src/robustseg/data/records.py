from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ..degrade.kinds import DegradationSpec


@dataclass
class ImageMaskRecord:
    """One RGB image (H, W, 3) in [0, 1] with one boolean mask per instance."""

    id: str
    image: np.ndarray
    masks: list[np.ndarray]
    gen_seed: int = 0
    degradation: Optional[DegradationSpec] = None
    shapes: list[dict] = field(default_factory=list)

    @property
    def size(self) -> tuple[int, int]:
        return self.image.shape[0], self.image.shape[1]

    def replace(self, **changes) -> "ImageMaskRecord":
        values = dict(id=self.id, image=self.image, masks=self.masks, gen_seed=self.gen_seed,
                      degradation=self.degradation, shapes=self.shapes)
        values.update(changes)
        return ImageMaskRecord(**values)
