from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import DomainError


@dataclass(frozen=True)
class Prompt:
    """Points are (x, y, label) in pixel indices; the box is (x0, y0, x1, y1)."""

    kind: str
    points: tuple[tuple[int, int, int], ...] = field(default_factory=tuple)
    box: tuple[int, int, int, int] | None = None

    def __post_init__(self):
        if self.kind not in ("point", "box"):
            raise DomainError(f"prompt kind must be 'point' or 'box', got {self.kind!r}")
        if self.kind == "point" and not self.points:
            raise DomainError("point prompt without points")
        if self.kind == "box" and self.box is None:
            raise DomainError("box prompt without a box")

    def coords(self) -> np.ndarray:
        """(P, 2) array of (x, y) positions fed to the prompt encoder."""
        if self.kind == "point":
            return np.array([(x, y) for x, y, _ in self.points], dtype=np.float64)
        x0, y0, x1, y1 = self.box
        return np.array([(x0, y0), (x1, y1)], dtype=np.float64)


def _foreground(mask) -> np.ndarray:
    mask = np.asarray(mask).astype(bool)
    if mask.ndim != 2:
        raise DomainError(f"mask must be 2-D, got shape {mask.shape}")
    if not mask.any():
        raise DomainError("mask has no foreground pixels")
    return mask


def point_prompt(mask, n: int, rng) -> Prompt:
    """``n`` foreground pixels, distinct when the mask is large enough."""
    if n < 1:
        raise DomainError(f"need at least one point, got n={n}")
    mask = _foreground(mask)
    ys, xs = np.nonzero(mask)
    gen = getattr(rng, "gen", rng)
    idx = gen.choice(len(xs), size=n, replace=len(xs) < n)
    return Prompt("point", points=tuple((int(xs[i]), int(ys[i]), 1) for i in idx))


def box_prompt(mask) -> Prompt:
    mask = _foreground(mask)
    rows = np.flatnonzero(mask.any(axis=1))
    cols = np.flatnonzero(mask.any(axis=0))
    return Prompt("box", box=(int(cols[0]), int(rows[0]), int(cols[-1]), int(rows[-1])))
