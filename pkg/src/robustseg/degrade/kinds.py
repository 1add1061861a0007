from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

from ..errors import DomainError
from .rng import MASK64, DeterministicRng


class DegradationKind(str, Enum):
    SNOW = "snow"
    FOG = "fog"
    RAIN = "rain"
    GAUSSIAN_NOISE = "gaussian_noise"
    ISO_NOISE = "iso_noise"
    IMPULSE_NOISE = "impulse_noise"
    RESAMPLING_BLUR = "resampling_blur"
    MOTION_BLUR = "motion_blur"
    ZOOM_BLUR = "zoom_blur"
    COLOR_JITTER = "color_jitter"
    COMPRESSION = "compression"
    ELASTIC_TRANSFORM = "elastic_transform"
    FROSTED_GLASS_BLUR = "frosted_glass_blur"
    LOW_LIGHT = "low_light"
    CONTRAST = "contrast"
    IDENTITY = "identity"

    def __str__(self) -> str:
        return self.value


def kinds() -> list[DegradationKind]:
    """All 16 kinds in declaration order; Identity is last."""
    return list(DegradationKind)


def degraded_kinds() -> list[DegradationKind]:
    return [k for k in DegradationKind if k is not DegradationKind.IDENTITY]


@dataclass(frozen=True)
class DegradationSpec:
    kind: DegradationKind
    severity: int = 2
    seed: int = 0

    def __post_init__(self):
        if not isinstance(self.kind, DegradationKind):
            object.__setattr__(self, "kind", DegradationKind(self.kind))
        if self.severity not in (1, 2, 3):
            raise DomainError(f"severity must be 1, 2 or 3, got {self.severity}")
        if not 0 <= int(self.seed) <= MASK64:
            raise DomainError(f"seed {self.seed} is not a 64-bit unsigned integer")

    def token(self) -> str:
        return f"{self.kind.value}:{self.severity}:{int(self.seed)}"

    @classmethod
    def parse(cls, token: str) -> "DegradationSpec":
        parts = token.strip().split(":")
        if len(parts) != 3:
            raise DomainError(f"degradation token {token!r} is not 'kind:severity:seed'")
        try:
            kind = DegradationKind(parts[0])
            severity, seed = int(parts[1]), int(parts[2])
        except ValueError as exc:
            raise DomainError(f"bad degradation token {token!r}: {exc}") from None
        return cls(kind, severity, seed)

    def __str__(self) -> str:
        return self.token()


IDENTITY = DegradationSpec(DegradationKind.IDENTITY, 1, 0)


def sample_spec(rng: DeterministicRng, policy: str = "uniform") -> DegradationSpec:
    """Kind uniform over all 16 (Identity included), severity uniform over
    {1, 2, 3}, fresh 64-bit seed from ``rng``."""
    if policy != "uniform":
        raise DomainError(f"unknown sampling policy {policy!r}")
    all_kinds = kinds()
    kind = all_kinds[int(rng.integers(0, len(all_kinds)))]
    severity = int(rng.integers(1, 4))
    seed = rng.next_seed()
    return DegradationSpec(kind, severity, seed)
