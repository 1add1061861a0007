"""Flat ``key = value`` configuration files mapped onto dataclasses."""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

from ..errors import ContractError, RecordIOError
from ..model.robust import VARIANTS, Variant
from ..objectives.losses import LossWeights


@dataclass(frozen=True)
class TrainConfig:
    seed: int = 0
    epochs: int = 40
    lr: float = 0.0005
    batch_size: int = 8
    tc_weight: float = 1.0
    seg_weight: float = 1.0
    focal_weight: float = 20.0
    prompt_points: int = 1
    use_rot: bool = True
    use_amfg: bool = True
    use_fourier: bool = True
    use_aotg: bool = True
    consistency: bool = True
    identity_only: bool = False
    train_records: int = 0
    log_every: int = 50
    data: str = "data"
    teacher: str = "teacher.rstn"

    @property
    def variant(self) -> Variant:
        return Variant(self.use_rot, self.use_amfg, self.use_fourier, self.use_aotg)

    @property
    def weights(self) -> LossWeights:
        return LossWeights(self.tc_weight, self.seg_weight, self.focal_weight)

    def with_variant(self, name: str) -> "TrainConfig":
        if name not in VARIANTS:
            raise ContractError(f"unknown variant {name!r}; choose from {sorted(VARIANTS)}")
        v = VARIANTS[name]
        return dataclasses.replace(self, use_rot=v.use_rot, use_amfg=v.use_amfg,
                                   use_fourier=v.use_fourier, use_aotg=v.use_aotg)

    def replace(self, **changes) -> "TrainConfig":
        return dataclasses.replace(self, **changes)

    def as_dict(self) -> dict:
        return dataclasses.asdict(self)

    def digest(self, skip: tuple[str, ...] = ("data", "teacher", "epochs", "log_every")) -> str:
        """Hash of the fields that change the training trajectory."""
        body = {k: v for k, v in self.as_dict().items() if k not in skip}
        return hashlib.sha256(json.dumps(body, sort_keys=True).encode()).hexdigest()[:16]


def _coerce(raw: str, default, key: str):
    if isinstance(default, bool):
        low = raw.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ContractError(f"config key {key!r}: {raw!r} is not a boolean")
    try:
        return type(default)(raw)
    except ValueError:
        raise ContractError(f"config key {key!r}: cannot parse {raw!r} as {type(default).__name__}") from None


def parse_config(text: str, cls=TrainConfig, base=None):
    base = base if base is not None else cls()
    defaults = base.as_dict() if hasattr(base, "as_dict") else dataclasses.asdict(base)
    values = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ContractError(f"config line {n}: expected key = value, got {line!r}")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in defaults:
            raise ContractError(f"config line {n}: unknown key {key!r}")
        values[key] = _coerce(raw, defaults[key], key)
    return dataclasses.replace(base, **values)


def load_config(path: str | Path | None, cls=TrainConfig, base=None):
    if path is None:
        return base if base is not None else cls()
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise RecordIOError(str(path), f"cannot read config: {exc}") from exc
    return parse_config(text, cls, base)


def format_config(cfg) -> str:
    return "".join(f"{k} = {v}\n" for k, v in dataclasses.asdict(cfg).items())
