"""The corruption kernels.

Every kernel takes a float64 HWC image in [0, 1], a severity and a numpy
generator, and returns an unclamped float64 image; :func:`apply` handles
validation, clamping and the float32 cast. Severity s in {1, 2, 3} places a
parameter at the low end, midpoint or high end of its range.
"""

from __future__ import annotations

import numpy as np
from matplotlib.colors import hsv_to_rgb, rgb_to_hsv
from scipy import fft as sfft
from scipy import ndimage

from ..errors import DimensionError, DomainError
from ..tensor.functional import bilinear_matrix
from .kinds import DegradationKind as K
from .kinds import DegradationSpec
from .rng import derive_seed

LUMA = np.array([0.299, 0.587, 0.114])

# Standard JPEG luminance quantization table (Annex K).
JPEG_LUMA_TABLE = np.array([
    [16, 11, 10, 16, 24, 40, 51, 61],
    [12, 12, 14, 19, 26, 58, 60, 55],
    [14, 13, 16, 24, 40, 57, 69, 56],
    [14, 17, 22, 29, 51, 87, 80, 62],
    [18, 22, 37, 56, 68, 109, 103, 77],
    [24, 35, 55, 64, 81, 104, 113, 92],
    [49, 64, 78, 87, 103, 121, 120, 101],
    [72, 92, 95, 98, 112, 100, 103, 99],
], dtype=np.float64)


def lerp(lo: float, hi: float, severity: int) -> float:
    return lo + (hi - lo) * (severity - 1) / 2.0


def pick(options, severity: int):
    return options[severity - 1]


def signed(rng: np.random.Generator, magnitude: float) -> float:
    return magnitude if rng.random() < 0.5 else -magnitude


def box_blur(img: np.ndarray, size: int) -> np.ndarray:
    return ndimage.uniform_filter(img, size=(size, size, 1)[: img.ndim], mode="reflect")


def luma(img: np.ndarray) -> np.ndarray:
    return img @ LUMA


# ---------------------------------------------------------------------------
# weather
# ---------------------------------------------------------------------------


def snow(img, s, rng):
    h, w, _ = img.shape
    coverage = lerp(0.01, 0.05, s)
    field = ndimage.gaussian_filter(rng.normal(size=(h, w)), 1.0, mode="wrap")
    flakes = (field >= np.quantile(field, 1.0 - coverage)).astype(np.float64)
    soft = np.clip(ndimage.gaussian_filter(flakes, 0.6) * 2.0, 0.0, 1.0)
    lift = lerp(0.02, 0.08, s)
    return img + (1.0 - img) * 0.9 * soft[..., None] + lift


def fog(img, s, rng):
    h, w, _ = img.shape
    f = lerp(0.3, 0.7, s)
    low = box_blur(box_blur(rng.random((h, w)), 9), 9)
    t = (1.0 - f * low)[..., None]
    return img * t + 0.9 * (1.0 - t)


def _line_points(x0, y0, x1, y1, step=0.25):
    n = max(2, int(np.ceil(np.hypot(x1 - x0, y1 - y0) / step)) + 1)
    u = np.linspace(0.0, 1.0, n)
    return x0 + u * (x1 - x0), y0 + u * (y1 - y0)


def _splat(layer: np.ndarray, xs: np.ndarray, ys: np.ndarray, weight: float) -> None:
    """Bilinear splat of sample points: the anti-aliasing step for lines."""
    h, w = layer.shape
    x0, y0 = np.floor(xs).astype(int), np.floor(ys).astype(int)
    fx, fy = xs - x0, ys - y0
    for dx, dy, wt in ((0, 0, (1 - fx) * (1 - fy)), (1, 0, fx * (1 - fy)),
                       (0, 1, (1 - fx) * fy), (1, 1, fx * fy)):
        xi, yi = x0 + dx, y0 + dy
        ok = (xi >= 0) & (xi < w) & (yi >= 0) & (yi < h)
        np.add.at(layer, (yi[ok], xi[ok]), weight * wt[ok])


def rain(img, s, rng):
    h, w, _ = img.shape
    count = int(round(lerp(40, 120, s) * h * w / (128 * 128)))
    length = lerp(8, 20, s)
    layer = np.zeros((h, w))
    for _ in range(max(count, 1)):
        cx, cy = rng.uniform(0, w), rng.uniform(0, h)
        angle = np.deg2rad(rng.uniform(60.0, 120.0))
        dx, dy = 0.5 * length * np.cos(angle), 0.5 * length * np.sin(angle)
        xs, ys = _line_points(cx - dx, cy - dy, cx + dx, cy + dy)
        _splat(layer, xs, ys, 0.25)
    layer = box_blur(np.clip(layer, 0.0, 1.0), 3)[..., None]
    alpha = 0.7 * layer
    return img * (1.0 - alpha) + alpha


# ---------------------------------------------------------------------------
# noise
# ---------------------------------------------------------------------------


def gaussian_noise_sigma(severity: int) -> float:
    return lerp(0.04, 0.12, severity)


def gaussian_noise(img, s, rng):
    return img + rng.normal(0.0, gaussian_noise_sigma(s), img.shape)


def iso_noise(img, s, rng):
    h, w, _ = img.shape
    sigma0 = lerp(0.05, 0.10, s)
    lum_sigma = sigma0 * (0.3 + luma(img))
    lum = rng.normal(size=(h, w)) * lum_sigma
    chroma = rng.normal(0.0, lerp(0.02, 0.05, s), img.shape)
    return img + lum[..., None] + chroma


def impulse_noise(img, s, rng):
    h, w, _ = img.shape
    p = lerp(0.01, 0.05, s)
    hit = rng.random((h, w)) < p
    value = (rng.random((h, w)) < 0.5).astype(np.float64)
    out = img.copy()
    out[hit] = value[hit][:, None]
    return out


# ---------------------------------------------------------------------------
# blur
# ---------------------------------------------------------------------------


def _resample(img, out_h, out_w):
    mh = bilinear_matrix(img.shape[0], out_h)
    mw = bilinear_matrix(img.shape[1], out_w)
    return np.einsum("ia,abc,jb->ijc", mh, img, mw, optimize=True)


def resampling_blur(img, s, rng):
    h, w, _ = img.shape
    f = pick((2, 3, 4), s)
    small = _resample(img, max(1, round(h / f)), max(1, round(w / f)))
    return _resample(small, h, w)


def line_kernel(length: int, angle_deg: float) -> np.ndarray:
    k = np.zeros((length, length))
    c = (length - 1) / 2.0
    a = np.deg2rad(angle_deg)
    half = (length - 1) / 2.0
    xs, ys = _line_points(c - half * np.cos(a), c - half * np.sin(a),
                          c + half * np.cos(a), c + half * np.sin(a))
    _splat(k, xs, ys, 1.0)
    return k / k.sum()


def motion_blur(img, s, rng):
    k = line_kernel(pick((5, 9, 13), s), rng.uniform(0.0, 180.0))
    return np.stack([ndimage.convolve(img[..., c], k, mode="reflect") for c in range(3)], axis=-1)


def zoom_blur(img, s, rng):
    h, w, _ = img.shape
    delta = lerp(0.01, 0.03, s)
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    acc = np.zeros_like(img)
    for k in range(5):
        z = 1.0 + k * delta
        coords = [cy + (yy - cy) / z, cx + (xx - cx) / z]
        for c in range(3):
            acc[..., c] += ndimage.map_coordinates(img[..., c], coords, order=1, mode="nearest")
    return acc / 5.0


def frosted_glass_blur(img, s, rng):
    h, w, _ = img.shape
    r = pick((2, 3, 4), s)
    yy, xx = np.mgrid[0:h, 0:w]
    sy = np.clip(yy + rng.integers(-r, r + 1, (h, w)), 0, h - 1)
    sx = np.clip(xx + rng.integers(-r, r + 1, (h, w)), 0, w - 1)
    return box_blur(img[sy, sx], 3)


# ---------------------------------------------------------------------------
# colour, compression, geometry, illumination
# ---------------------------------------------------------------------------


def color_jitter(img, s, rng):
    hue = signed(rng, lerp(0.05, 0.15, s))
    sat = 1.0 + signed(rng, lerp(0.2, 0.4, s))
    bright = signed(rng, lerp(0.05, 0.15, s))
    hsv = rgb_to_hsv(np.clip(img, 0.0, 1.0))
    hsv[..., 0] = np.mod(hsv[..., 0] + hue, 1.0)
    hsv[..., 1] = np.clip(hsv[..., 1] * sat, 0.0, 1.0)
    hsv[..., 2] = np.clip(hsv[..., 2] + bright, 0.0, 1.0)
    return hsv_to_rgb(hsv)


def jpeg_table(quality: int) -> np.ndarray:
    scale = 5000.0 / quality if quality < 50 else 200.0 - 2.0 * quality
    return np.clip(np.floor((JPEG_LUMA_TABLE * scale + 50.0) / 100.0), 1.0, 255.0)


def compression(img, s, rng):
    h, w, _ = img.shape
    q = jpeg_table(pick((30, 20, 10), s))
    ph, pw = -h % 8, -w % 8
    x = np.pad(img * 255.0 - 128.0, ((0, ph), (0, pw), (0, 0)), mode="edge")
    hh, ww = x.shape[:2]
    blocks = x.reshape(hh // 8, 8, ww // 8, 8, 3).transpose(0, 2, 4, 1, 3)
    coef = sfft.dctn(blocks, axes=(-2, -1), norm="ortho")
    coef = np.round(coef / q) * q
    rec = sfft.idctn(coef, axes=(-2, -1), norm="ortho")
    rec = rec.transpose(0, 3, 1, 4, 2).reshape(hh, ww, 3)[:h, :w]
    return (rec + 128.0) / 255.0


def elastic_field(shape, s, rng) -> tuple[np.ndarray, np.ndarray]:
    h, w = shape
    alpha = lerp(4.0, 12.0, s)
    out = []
    for _ in range(2):
        d = ndimage.gaussian_filter(rng.uniform(-1.0, 1.0, (h, w)), 8.0, mode="reflect")
        peak = np.abs(d).max()
        out.append(alpha * d / peak if peak > 0 else d * 0.0)
    return out[0], out[1]


def elastic_warp(img: np.ndarray, masks: list[np.ndarray], dy: np.ndarray, dx: np.ndarray):
    """Warps image bilinearly and masks by nearest neighbour with one field."""
    h, w = dy.shape
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    coords = [yy + dy, xx + dx]
    warped = np.stack([ndimage.map_coordinates(img[..., c], coords, order=1, mode="reflect")
                       for c in range(img.shape[2])], axis=-1)
    out_masks = [ndimage.map_coordinates(m.astype(np.uint8), coords, order=0, mode="constant")
                 .astype(bool) for m in masks]
    return warped, out_masks


def elastic_transform(img, s, rng):
    dy, dx = elastic_field(img.shape[:2], s, rng)
    return elastic_warp(img, [], dy, dx)[0]


def low_light(img, s, rng):
    gamma = lerp(1.8, 3.0, s)
    return np.power(img, gamma) + rng.normal(0.0, 0.03, img.shape)


def contrast(img, s, rng):
    c = lerp(0.6, 0.3, s)
    m = img.mean()
    return (img - m) * c + m


KERNELS = {
    K.SNOW: snow,
    K.FOG: fog,
    K.RAIN: rain,
    K.GAUSSIAN_NOISE: gaussian_noise,
    K.ISO_NOISE: iso_noise,
    K.IMPULSE_NOISE: impulse_noise,
    K.RESAMPLING_BLUR: resampling_blur,
    K.MOTION_BLUR: motion_blur,
    K.ZOOM_BLUR: zoom_blur,
    K.COLOR_JITTER: color_jitter,
    K.COMPRESSION: compression,
    K.ELASTIC_TRANSFORM: elastic_transform,
    K.FROSTED_GLASS_BLUR: frosted_glass_blur,
    K.LOW_LIGHT: low_light,
    K.CONTRAST: contrast,
}


def spec_generator(spec: DegradationSpec) -> np.random.Generator:
    key = derive_seed(int(spec.seed), spec.kind.value)
    return np.random.Generator(np.random.Philox(key=key))


def check_image(image: np.ndarray) -> np.ndarray:
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[2] != 3:
        raise DimensionError(f"expected an (H, W, 3) image, got shape {image.shape}")
    if image.shape[0] < 16 or image.shape[1] < 16:
        raise DimensionError(f"image extents {image.shape[:2]} are below 16")
    if not np.issubdtype(image.dtype, np.floating):
        raise DomainError(f"expected a float image, got dtype {image.dtype}")
    if not np.all(np.isfinite(image)) or image.min() < 0.0 or image.max() > 1.0:
        raise DomainError("image values must lie in [0, 1]")
    return image


def apply(image: np.ndarray, spec: DegradationSpec) -> np.ndarray:
    """Degrade an (H, W, 3) image; Identity returns the input object untouched."""
    image = check_image(image)
    if spec.kind is K.IDENTITY:
        return image
    rng = spec_generator(spec)
    out = KERNELS[spec.kind](image.astype(np.float64), spec.severity, rng)
    return np.clip(out, 0.0, 1.0).astype(np.float32)


def apply_with_mask(record, spec: DegradationSpec):
    """Degrade a record's image; masks are only moved by ElasticTransform."""
    image = check_image(record.image)
    if spec.kind is K.IDENTITY:
        return record.replace(degradation=spec)
    if spec.kind is K.ELASTIC_TRANSFORM:
        rng = spec_generator(spec)
        dy, dx = elastic_field(image.shape[:2], spec.severity, rng)
        warped, masks = elastic_warp(image.astype(np.float64), record.masks, dy, dx)
        return record.replace(image=np.clip(warped, 0.0, 1.0).astype(np.float32), masks=masks,
                              degradation=spec)
    return record.replace(image=apply(image, spec), degradation=spec)
