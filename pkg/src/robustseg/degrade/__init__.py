"""Seeded synthetic image corruptions (15 kinds plus identity)."""

from .kinds import IDENTITY, DegradationKind, DegradationSpec, degraded_kinds, kinds, sample_spec
from .ops import apply, apply_with_mask, elastic_warp, gaussian_noise_sigma
from .rng import DeterministicRng, derive_seed

__all__ = [
    "IDENTITY",
    "DegradationKind",
    "DegradationSpec",
    "DeterministicRng",
    "apply",
    "apply_with_mask",
    "degraded_kinds",
    "derive_seed",
    "elastic_warp",
    "gaussian_noise_sigma",
    "kinds",
    "sample_spec",
]
