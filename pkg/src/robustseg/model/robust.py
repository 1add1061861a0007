"""Trainable anti-degradation components of the student path."""

from __future__ import annotations

import copy
from dataclasses import dataclass

import numpy as np

from .. import tensor as T
from ..errors import ContractError, DimensionError
from ..tensor import Parameter, Tensor
from ..tensor import functional as F
from ..tensor.module import (BatchNorm2d, Conv2d, ConvTranspose2x2, InstanceNorm2d, LayerNorm,
                             Linear, Module)
from .sam import EMBED_DIM, DecoderOutput, SamMini, predict_mask


def pooled(x: Tensor) -> Tensor:
    """(N, C, H, W) -> (N, C) global average."""
    n, c = x.shape[:2]
    return T.reshape(F.adaptive_avg_pool(x, (1, 1)), (n, c))


def fourier_suppress(x: Tensor, amp_conv: Conv2d, trace: dict | None = None) -> Tensor:
    """Re-weight the amplitude spectrum with a 1x1 conv; reuse the phase.

    relu keeps the new amplitude non-negative. When ``trace`` is given it
    receives the analysis and synthesis phase tensors (the same object).
    """
    amp, phase = T.to_frequency(x)
    new_amp = F.relu(amp_conv(amp))
    if trace is not None:
        trace["analysis_phase"] = phase
        trace["synthesis_phase"] = phase
    return T.from_frequency(new_amp, phase)


class AMFG(Module):
    """IN/BN dual branch, selector attention, SE gating, Fourier amplitude
    suppression and 4x upsampling to (32, 64, 64)."""

    def __init__(self, rng: np.random.Generator, c: int = EMBED_DIM, use_fourier: bool = True):
        self.inorm = InstanceNorm2d(c)
        self.bnorm = BatchNorm2d(c)
        self.conv_in = Conv2d(c, c, 3, rng, pad=1)
        self.conv_bn = Conv2d(c, c, 3, rng, pad=1)
        self.sel_fc = Linear(c, c // 4, rng)
        self.sel_in = Linear(c // 4, c, rng)
        self.sel_bn = Linear(c // 4, c, rng)
        self.se_fc1 = Linear(2 * c, c // 8, rng)
        self.se_fc2 = Linear(c // 8, 2 * c, rng)
        self.se_fc2.bias.data[:] = 2.0
        self.proj = Conv2d(2 * c, c, 1, rng)
        self.amp_conv = Conv2d(c, c, 1, rng)
        self.amp_conv.weight.data = np.eye(c, dtype=np.float32).reshape(c, c, 1, 1)
        self.amp_conv.bias.data[:] = 0.0
        self.up1 = ConvTranspose2x2(c, 48, rng)
        self.up2 = ConvTranspose2x2(48, 32, rng)
        self.use_fourier = use_fourier
        self.last = {}

    def selector(self, s: Tensor) -> tuple[Tensor, Tensor]:
        h = F.relu(self.sel_fc(pooled(s)))
        logits = T.stack([self.sel_in(h), self.sel_bn(h)], axis=-1)
        a = F.softmax(logits, axis=-1)
        n, c = a.shape[:2]
        return T.reshape(a[..., 0], (n, c, 1, 1)), T.reshape(a[..., 1], (n, c, 1, 1))

    def refine(self, x: Tensor) -> Tensor:
        """Everything before the Fourier stage: (N, C, h, w) -> (N, C, h, w)."""
        b_in = self.conv_in(F.relu(self.inorm(x)))
        b_bn = self.conv_bn(F.relu(self.bnorm(x)))
        a_in, a_bn = self.selector(b_in + b_bn)
        self.last = {"a_in": a_in.data, "a_bn": a_bn.data}
        mixed = T.concat([a_in * b_in + a_bn * b_bn, x], axis=1)
        n, c2 = mixed.shape[:2]
        gate = F.sigmoid(self.se_fc2(F.relu(self.se_fc1(pooled(mixed)))))
        return self.proj(mixed * T.reshape(gate, (n, c2, 1, 1)))

    def __call__(self, x: Tensor, trace: dict | None = None) -> Tensor:
        x = T.as_tensor(x)
        if x.ndim != 4 or x.shape[1:] != (EMBED_DIM, 16, 16):
            raise DimensionError(f"AMFG expects (N, 64, 16, 16), got {x.shape}")
        y = self.refine(x)
        if self.use_fourier:
            y = fourier_suppress(y, self.amp_conv, trace)
        return self.up2(F.gelu(self.up1(y)))


class AOTG(Module):
    """Two normalizations across the 64 token entries, then a 2-layer MLP."""

    def __init__(self, rng: np.random.Generator, dim: int = EMBED_DIM):
        self.norm1 = LayerNorm(dim)
        self.norm2 = LayerNorm(dim)
        self.fc1 = Linear(dim, dim, rng)
        self.fc2 = Linear(dim, dim, rng)

    def __call__(self, t: Tensor) -> Tensor:
        t = T.as_tensor(t)
        if t.shape[-1] != EMBED_DIM:
            raise DimensionError(f"AOTG expects {EMBED_DIM}-d tokens, got {t.shape}")
        return self.fc2(F.relu(self.fc1(self.norm2(self.norm1(t)))))


class Fusion(Module):
    def __init__(self, rng: np.random.Generator, c: int = 32):
        self.mix = Conv2d(2 * c, c, 1, rng)
        self.smooth = Conv2d(c, c, 3, rng, pad=1)

    def __call__(self, f_mfd_hat: Tensor, f_cfd_hat: Tensor) -> Tensor:
        if f_mfd_hat.shape != f_cfd_hat.shape:
            raise DimensionError(f"fusion inputs differ: {f_mfd_hat.shape} vs {f_cfd_hat.shape}")
        return self.smooth(F.gelu(self.mix(T.concat([f_mfd_hat, f_cfd_hat], axis=1))))


@dataclass(frozen=True)
class Variant:
    use_rot: bool = True
    use_amfg: bool = True
    use_fourier: bool = True
    use_aotg: bool = True

    @property
    def name(self) -> str:
        for key, v in VARIANTS.items():
            if v == self:
                return key
        return "custom"


VARIANTS = {
    "token_only": Variant(True, False, False, False),
    "amfg": Variant(False, True, False, False),
    "amfg_f": Variant(False, True, True, False),
    "amfg_f_aotg": Variant(False, True, True, True),
    "all": Variant(True, True, True, True),
}


@dataclass
class StudentOutput:
    logits: Tensor
    feature: Tensor        # robust mask feature (N, 32, 64, 64)
    f_mfd_hat: Tensor
    f_cfd_hat: Tensor
    t_ro: Tensor
    t_ro_hat: Tensor
    decoder: DecoderOutput


class RobustPath(Module):
    """Robust output token, AMFG x2, AOTG, fusion and a robust mask MLP."""

    def __init__(self, teacher: SamMini, seed: int = 0, variant: Variant = Variant()):
        if not teacher.frozen:
            raise ContractError("robust modules must be initialised from a frozen teacher")
        rng = np.random.default_rng(seed)
        self.variant = variant
        self.rot = Parameter(teacher.decoder.output_token.data.copy())
        self.amfg_mask = AMFG(rng, use_fourier=variant.use_fourier)
        self.amfg_comp = AMFG(rng, use_fourier=variant.use_fourier)
        self.aotg = AOTG(rng)
        self.fusion = Fusion(rng)
        self.mask_mlp = copy.deepcopy(teacher.mask_mlp)
        self.mask_mlp.requires_grad_(True)

    def trainable(self) -> list[Parameter]:
        v = self.variant
        out = [self.rot] if v.use_rot else []
        if v.use_amfg:
            out += self.amfg_mask.parameters() + self.amfg_comp.parameters()
            out += self.fusion.parameters() + self.mask_mlp.parameters()
            if not v.use_fourier:
                skip = {id(self.amfg_mask.amp_conv.weight), id(self.amfg_mask.amp_conv.bias),
                        id(self.amfg_comp.amp_conv.weight), id(self.amfg_comp.amp_conv.bias)}
                out = [p for p in out if id(p) not in skip]
        if v.use_aotg:
            out += self.aotg.parameters()
        return out

    def forward(self, teacher: SamMini, images, coords: np.ndarray, kind: str,
                trace: dict | None = None) -> StudentOutput:
        v = self.variant
        emb = teacher.encode_image(images)
        prompt = teacher.encode_prompt(coords, kind)
        token_in = self.rot if v.use_rot else teacher.decoder.output_token
        dec = teacher.decode(emb, prompt, token_in)
        t_ro = dec.token
        t_hat = self.aotg(t_ro) if v.use_aotg else t_ro
        if v.use_amfg:
            f_m = self.amfg_mask(dec.precursor, trace)
            f_c = self.amfg_comp(dec.complementary_raw)
            feature = self.fusion(f_m, f_c)
            classifier = self.mask_mlp(t_hat)
        else:
            f_m, f_c = teacher.teacher_heads(dec)
            feature = f_m
            classifier = teacher.mask_mlp(t_hat)
        logits = predict_mask(classifier, feature)
        return StudentOutput(logits, feature, f_m, f_c, t_ro, t_hat, dec)


def init_from_teacher(teacher: SamMini, seed: int = 0, variant: Variant = Variant()) -> RobustPath:
    return RobustPath(teacher, seed, variant)
