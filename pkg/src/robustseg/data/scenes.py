"""Procedural scenes: a two-colour gradient background with faint texture
and one to four flat-coloured shapes stacked in z-order."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from ..degrade.rng import DeterministicRng
from ..errors import GenerationError
from .records import ImageMaskRecord

SHAPE_KINDS = ("ellipse", "polygon", "annulus")


@dataclass(frozen=True)
class SceneConfig:
    size: int = 128
    min_instances: int = 1
    max_instances: int = 4
    min_visible: int = 200
    radius_range: tuple[float, float] = (12.0, 34.0)
    texture_amplitude: float = 0.03
    min_color_distance: float = 0.35
    max_attempts: int = 100


def pixel_grid(size: int) -> tuple[np.ndarray, np.ndarray]:
    """Pixel-centre coordinates (x, y), each of shape (size, size)."""
    c = np.arange(size, dtype=np.float64) + 0.5
    return np.meshgrid(c, c, indexing="xy")


def rasterize(shape: dict, size: int) -> np.ndarray:
    """Full (un-occluded) footprint of one shape as a boolean mask."""
    xs, ys = pixel_grid(size)
    kind = shape["kind"]
    if kind == "ellipse":
        cx, cy = shape["center"]
        a, b = shape["axes"]
        th = shape["angle"]
        dx, dy = xs - cx, ys - cy
        u = (dx * np.cos(th) + dy * np.sin(th)) / a
        v = (-dx * np.sin(th) + dy * np.cos(th)) / b
        return u * u + v * v <= 1.0
    if kind == "annulus":
        cx, cy = shape["center"]
        d2 = (xs - cx) ** 2 + (ys - cy) ** 2
        return (d2 <= shape["outer"] ** 2) & (d2 > shape["inner"] ** 2)
    if kind == "polygon":
        verts = np.asarray(shape["vertices"], dtype=np.float64)
        inside = np.ones((size, size), dtype=bool)
        for i in range(len(verts)):
            x0, y0 = verts[i]
            x1, y1 = verts[(i + 1) % len(verts)]
            cross = (x1 - x0) * (ys - y0) - (y1 - y0) * (xs - x0)
            inside &= cross >= 0.0
        return inside
    raise GenerationError(f"unknown shape kind {kind!r}")


def visible_masks(footprints: list[np.ndarray]) -> list[np.ndarray]:
    """Later shapes sit on top: each visible mask excludes everything above it."""
    covered = np.zeros_like(footprints[0])
    out = [None] * len(footprints)
    for i in range(len(footprints) - 1, -1, -1):
        out[i] = footprints[i] & ~covered
        covered |= footprints[i]
    return out


def _sample_shape(rng: DeterministicRng, cfg: SceneConfig) -> dict:
    size = cfg.size
    lo, hi = cfg.radius_range
    r = float(rng.uniform(lo, hi))
    margin = 0.5 * r
    cx = float(rng.uniform(margin, size - margin))
    cy = float(rng.uniform(margin, size - margin))
    kind = SHAPE_KINDS[int(rng.integers(0, len(SHAPE_KINDS)))]
    if kind == "ellipse":
        ratio = float(rng.uniform(0.45, 1.0))
        return {"kind": kind, "center": [cx, cy], "axes": [r, r * ratio],
                "angle": float(rng.uniform(0.0, np.pi))}
    if kind == "annulus":
        return {"kind": kind, "center": [cx, cy], "outer": r,
                "inner": r * float(rng.uniform(0.35, 0.6))}
    # Convex polygon: sorted angles on a circle, then an axis stretch. Gaps
    # are capped so the polygon never collapses to a sliver.
    n = int(rng.integers(3, 8))
    while True:
        ang = np.sort(rng.uniform(0.0, 2 * np.pi, n))
        gaps = np.diff(np.concatenate([ang, ang[:1] + 2 * np.pi]))
        if gaps.max() < 0.75 * np.pi:
            break
    stretch = float(rng.uniform(0.7, 1.3))
    rot = float(rng.uniform(0.0, np.pi))
    px, py = r * np.cos(ang) * stretch, r * np.sin(ang) / stretch
    vx = cx + px * np.cos(rot) - py * np.sin(rot)
    vy = cy + px * np.sin(rot) + py * np.cos(rot)
    verts = np.stack([vx, vy], axis=1)
    return {"kind": kind, "vertices": verts.tolist()}


def _sample_colors(rng: DeterministicRng, k: int, avoid: list[np.ndarray], min_dist: float):
    colors: list[np.ndarray] = []
    for _ in range(2000):
        c = rng.uniform(0.0, 1.0, 3)
        if all(np.linalg.norm(c - o) >= min_dist for o in avoid + colors):
            colors.append(c)
            if len(colors) == k:
                return colors
    raise GenerationError("could not find distinct fill colours")


def background(rng: DeterministicRng, cfg: SceneConfig) -> tuple[np.ndarray, list[np.ndarray]]:
    size = cfg.size
    c0, c1 = rng.uniform(0.15, 0.85, 3), rng.uniform(0.15, 0.85, 3)
    theta = float(rng.uniform(0.0, 2 * np.pi))
    xs, ys = pixel_grid(size)
    proj = (xs - size / 2) * np.cos(theta) + (ys - size / 2) * np.sin(theta)
    t = (proj - proj.min()) / max(np.ptp(proj), 1e-9)
    img = c0[None, None] * (1.0 - t[..., None]) + c1[None, None] * t[..., None]
    return img, [c0, c1, 0.5 * (c0 + c1)]


def _texture(rng: DeterministicRng, cfg: SceneConfig) -> np.ndarray:
    noise = ndimage.gaussian_filter(rng.normal(size=(cfg.size, cfg.size, 3)), (1.5, 1.5, 0))
    noise /= max(noise.std(), 1e-9)
    return cfg.texture_amplitude * noise


def generate_scene(seed: int, cfg: SceneConfig = SceneConfig(), record_id: str | None = None
                   ) -> ImageMaskRecord:
    """Deterministic in ``seed``; rejection-resamples until every visible
    mask has at least ``cfg.min_visible`` pixels."""
    root = DeterministicRng(seed)
    for attempt in range(cfg.max_attempts):
        rng = root.child(attempt)
        n = int(rng.integers(cfg.min_instances, cfg.max_instances + 1))
        shapes = [_sample_shape(rng, cfg) for _ in range(n)]
        masks = visible_masks([rasterize(s, cfg.size) for s in shapes])
        if min(int(m.sum()) for m in masks) < cfg.min_visible:
            continue
        img, avoid = background(rng, cfg)
        colors = _sample_colors(rng, n, avoid, cfg.min_color_distance)
        for shape, mask, color in zip(shapes, masks, colors):
            img[mask] = color
            shape["color"] = color.tolist()
        img = np.clip(img + _texture(rng, cfg), 0.0, 1.0).astype(np.float32)
        return ImageMaskRecord(id=record_id or f"scene-{seed}", image=img, masks=masks,
                               gen_seed=seed, shapes=shapes)
    raise GenerationError(f"seed {seed}: no valid scene after {cfg.max_attempts} attempts")
