"""A miniature promptable segmenter.

Convolutional image encoder, sinusoidal prompt encoder and a two-way
attention mask decoder. Every forward accepts a batch; single examples are
handled by the caller adding a leading axis.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .. import tensor as T
from ..errors import DimensionError
from ..tensor import Parameter, Tensor
from ..tensor import functional as F
from ..tensor.module import Conv2d, ConvTranspose2x2, LayerNorm, Linear, Module

EMBED_DIM = 64
HEADS = 4
IMAGE_SIZE = 128
GRID = 16
EARLY = 64
N_FREQ = EMBED_DIM // 4


def frequencies() -> np.ndarray:
    return np.pi * 2.0 ** (4.0 * np.arange(N_FREQ) / (N_FREQ - 1))


def positional_encoding(xy: np.ndarray) -> np.ndarray:
    """(..., 2) normalized (x, y) in [0, 1] -> (..., 64) as
    [sin(w x), cos(w x), sin(w y), cos(w y)] over 16 frequencies."""
    xy = np.asarray(xy, dtype=np.float64)
    w = frequencies()
    ax = xy[..., 0:1] * w
    ay = xy[..., 1:2] * w
    return np.concatenate([np.sin(ax), np.cos(ax), np.sin(ay), np.cos(ay)], axis=-1)


@lru_cache(maxsize=4)
def grid_encoding(size: int = GRID) -> np.ndarray:
    """(64, size, size) encoding of cell centres."""
    c = (np.arange(size) + 0.5) / size
    xs, ys = np.meshgrid(c, c, indexing="xy")
    pe = positional_encoding(np.stack([xs, ys], axis=-1))
    return np.ascontiguousarray(pe.transpose(2, 0, 1)).astype(np.float32)


def pixel_to_unit(coords: np.ndarray, size: int = IMAGE_SIZE) -> np.ndarray:
    return (np.asarray(coords, dtype=np.float64) + 0.5) / size


@dataclass
class ImageEmbedding:
    early: Tensor   # (N, 32, 64, 64)
    final: Tensor   # (N, 64, 16, 16)


@dataclass
class DecoderOutput:
    precursor: Tensor          # (N, 64, 16, 16) updated image tokens
    complementary_raw: Tensor  # (N, 64, 16, 16)
    token: Tensor              # (N, 64) updated output token


class ImageEncoder(Module):
    def __init__(self, rng: np.random.Generator, widths=(32, 48, 64)):
        c1, c2, c3 = widths
        self.stage1 = Conv2d(3, c1, 3, rng, pad=1, stride=2)
        self.stage2 = Conv2d(c1, c2, 3, rng, pad=1, stride=2)
        self.stage3 = Conv2d(c2, c3, 3, rng, pad=1, stride=2)

    def __call__(self, images: Tensor) -> ImageEmbedding:
        if images.ndim != 4 or images.shape[1:] != (3, IMAGE_SIZE, IMAGE_SIZE):
            raise DimensionError(f"encoder expects (N, 3, 128, 128), got {images.shape}")
        early = F.gelu(self.stage1(images))
        mid = F.gelu(self.stage2(early))
        final = F.gelu(self.stage3(mid)) + grid_encoding()
        return ImageEmbedding(early, final)


class PromptEncoder(Module):
    def __init__(self, rng: np.random.Generator):
        self.point_embed = Parameter(rng.normal(0.0, 0.5, EMBED_DIM))
        self.corner_embed = Parameter(rng.normal(0.0, 0.5, (2, EMBED_DIM)))

    def __call__(self, coords: np.ndarray, kind: str) -> Tensor:
        """coords: (N, P, 2) pixel (x, y); box prompts pass their two corners."""
        pe = Tensor(positional_encoding(pixel_to_unit(coords)).astype(np.float32))
        if kind == "point":
            return pe + self.point_embed
        if coords.shape[1] != 2:
            raise DimensionError(f"box prompts take two corners, got {coords.shape[1]}")
        return pe + self.corner_embed


class Attention(Module):
    def __init__(self, rng: np.random.Generator, dim: int = EMBED_DIM, heads: int = HEADS):
        self.q = Linear(dim, dim, rng)
        self.k = Linear(dim, dim, rng)
        self.v = Linear(dim, dim, rng)
        self.out = Linear(dim, dim, rng)
        self.heads = heads

    def _split(self, x: Tensor) -> Tensor:
        n, l, d = x.shape
        return T.transpose(T.reshape(x, (n, l, self.heads, d // self.heads)), (0, 2, 1, 3))

    def __call__(self, q: Tensor, k: Tensor, v: Tensor) -> Tensor:
        n, lq, d = q.shape
        qh, kh, vh = self._split(self.q(q)), self._split(self.k(k)), self._split(self.v(v))
        scale = 1.0 / np.sqrt(d // self.heads)
        attn = F.softmax(T.matmul(qh, T.transpose(kh, (0, 1, 3, 2))) * scale, axis=-1)
        mixed = T.transpose(T.matmul(attn, vh), (0, 2, 1, 3))
        return self.out(T.reshape(mixed, (n, lq, d)))


class MLP(Module):
    def __init__(self, dims: tuple[int, ...], rng: np.random.Generator):
        self.layers = [Linear(a, b, rng) for a, b in zip(dims[:-1], dims[1:])]

    def __call__(self, x: Tensor) -> Tensor:
        for i, layer in enumerate(self.layers):
            x = layer(x)
            if i < len(self.layers) - 1:
                x = F.gelu(x)
        return x


class TwoWayBlock(Module):
    """Pre-norm: self-attn, token->image, token MLP, image->token."""

    def __init__(self, rng: np.random.Generator, dim: int = EMBED_DIM):
        self.norm_self = LayerNorm(dim)
        self.self_attn = Attention(rng)
        self.norm_t2i_q = LayerNorm(dim)
        self.norm_t2i_kv = LayerNorm(dim)
        self.t2i = Attention(rng)
        self.norm_mlp = LayerNorm(dim)
        self.mlp = MLP((dim, 2 * dim, dim), rng)
        self.norm_i2t_q = LayerNorm(dim)
        self.norm_i2t_kv = LayerNorm(dim)
        self.i2t = Attention(rng)

    def __call__(self, tokens: Tensor, image: Tensor) -> tuple[Tensor, Tensor]:
        q = self.norm_self(tokens)
        tokens = tokens + self.self_attn(q, q, q)
        kv = self.norm_t2i_kv(image)
        tokens = tokens + self.t2i(self.norm_t2i_q(tokens), kv, kv)
        tokens = tokens + self.mlp(self.norm_mlp(tokens))
        kv = self.norm_i2t_kv(tokens)
        image = image + self.i2t(self.norm_i2t_q(image), kv, kv)
        return tokens, image


class MaskDecoder(Module):
    def __init__(self, rng: np.random.Generator, depth: int = 2, early_channels: int = 32):
        self.output_token = Parameter(rng.normal(0.0, 0.5, EMBED_DIM))
        self.blocks = [TwoWayBlock(rng) for _ in range(depth)]
        self.comp_final = Conv2d(EMBED_DIM, EMBED_DIM, 1, rng)
        self.comp_early = Conv2d(early_channels, EMBED_DIM, 1, rng)

    def complementary(self, emb: ImageEmbedding) -> Tensor:
        pooled = F.adaptive_avg_pool(emb.early, (GRID, GRID))
        return self.comp_final(emb.final) + self.comp_early(pooled)

    def __call__(self, emb: ImageEmbedding, prompt_tokens: Tensor, output_token) -> DecoderOutput:
        n = emb.final.shape[0]
        if prompt_tokens.ndim != 3 or prompt_tokens.shape[0] != n or prompt_tokens.shape[2] != EMBED_DIM:
            raise DimensionError(f"prompt tokens {prompt_tokens.shape} do not match batch {n}")
        out_tok = T.as_tensor(output_token)
        if out_tok.shape[-1] != EMBED_DIM:
            raise DimensionError(f"output token has dimension {out_tok.shape[-1]}")
        if out_tok.ndim == 1:
            out_tok = T.reshape(out_tok, (1, 1, EMBED_DIM)) * np.ones((n, 1, 1), np.float32)
        else:
            out_tok = T.reshape(out_tok, (n, 1, EMBED_DIM))
        tokens = T.concat([out_tok, prompt_tokens], axis=1)
        c = emb.final.shape[1]
        image = T.transpose(T.reshape(emb.final, (n, c, GRID * GRID)), (0, 2, 1))
        for block in self.blocks:
            tokens, image = block(tokens, image)
        precursor = T.reshape(T.transpose(image, (0, 2, 1)), (n, c, GRID, GRID))
        return DecoderOutput(precursor, self.complementary(emb), tokens[:, 0, :])


class UpsampleHead(Module):
    """Two 2x2 stride-2 transposed convs with gelu between (64 -> 48 -> 32)."""

    def __init__(self, rng: np.random.Generator, c_in: int = EMBED_DIM, mid: int = 48, c_out: int = 32):
        self.up1 = ConvTranspose2x2(c_in, mid, rng)
        self.up2 = ConvTranspose2x2(mid, c_out, rng)

    def __call__(self, x: Tensor) -> Tensor:
        return self.up2(F.gelu(self.up1(x)))


class MaskMLP(MLP):
    """Output token -> 32-d dynamic classifier weights."""

    def __init__(self, rng: np.random.Generator):
        super().__init__((EMBED_DIM, EMBED_DIM, EMBED_DIM, 32), rng)


def predict_mask(classifier: Tensor, mask_feature: Tensor, out_size: int = IMAGE_SIZE) -> Tensor:
    """Dot the (N, C) classifier with every pixel of the (N, C, h, w) feature
    and resize the (N, h, w) logits bilinearly to ``out_size``."""
    n, c, h, w = mask_feature.shape
    if classifier.shape != (n, c):
        raise DimensionError(f"classifier {classifier.shape} does not match feature {mask_feature.shape}")
    low = T.matmul(T.reshape(classifier, (n, 1, c)), T.reshape(mask_feature, (n, c, h * w)))
    low = T.reshape(low, (n, h, w))
    if (h, w) == (out_size, out_size):
        return low
    return F.resize_bilinear(low, (out_size, out_size))


class SamMini(Module):
    def __init__(self, seed: int = 0, depth: int = 2):
        rng = np.random.default_rng(seed)
        self.encoder = ImageEncoder(rng)
        self.prompt_encoder = PromptEncoder(rng)
        self.decoder = MaskDecoder(rng, depth)
        self.mask_head = UpsampleHead(rng)
        self.comp_head = UpsampleHead(rng)
        self.mask_mlp = MaskMLP(rng)
        self.frozen = False

    def encode_image(self, images) -> ImageEmbedding:
        return self.encoder(T.as_tensor(images))

    def encode_prompt(self, coords: np.ndarray, kind: str) -> Tensor:
        return self.prompt_encoder(np.asarray(coords), kind)

    def decode(self, emb: ImageEmbedding, prompt_tokens: Tensor, output_token=None) -> DecoderOutput:
        tok = self.decoder.output_token if output_token is None else output_token
        return self.decoder(emb, prompt_tokens, tok)

    def teacher_heads(self, out: DecoderOutput) -> tuple[Tensor, Tensor]:
        return self.mask_head(out.precursor), self.comp_head(out.complementary_raw)

    def classifier(self, token: Tensor) -> Tensor:
        return self.mask_mlp(token)

    def forward(self, images, coords: np.ndarray, kind: str, aux: bool = False):
        """Logits (N, 128, 128); with ``aux`` also the logits read off F_CFC."""
        emb = self.encode_image(images)
        out = self.decode(emb, self.encode_prompt(coords, kind))
        f_mfc, f_cfc = self.teacher_heads(out) if aux else (self.mask_head(out.precursor), None)
        w = self.classifier(out.token)
        logits = predict_mask(w, f_mfc)
        if aux:
            return logits, predict_mask(w, f_cfc)
        return logits

    def freeze(self) -> "SamMini":
        self.requires_grad_(False)
        self.frozen = True
        return self.eval()


def to_nchw(images: np.ndarray) -> np.ndarray:
    """(N, H, W, 3) or (H, W, 3) images (float or uint8) -> float32 NCHW."""
    arr = np.asarray(images)
    if arr.ndim == 3:
        arr = arr[None]
    if arr.dtype == np.uint8:
        arr = arr.astype(np.float32) / 255.0
    return np.ascontiguousarray(arr.transpose(0, 3, 1, 2), dtype=np.float32)
