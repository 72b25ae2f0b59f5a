"""Model/training configuration and the plain key=value config file.

A config file holds one `key = value` pair per line (# comments allowed);
keys are the field names below plus free-form path keys (data, index,
out).  Command-line flags override file values.
"""

from __future__ import annotations

from dataclasses import dataclass, fields, replace
from pathlib import Path


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int = 8192
    dim: int = 64
    heads: int = 4
    layers: int = 2
    ff_dim: int = 256
    window: int = 64
    dropout: float = 0.1
    pair_budget: int = 128
    context_budget: int = 64
    desc_limit: int = 128
    text_limit: int = 64
    k: int = 3
    max_k: int = 8   # aux position table is sized for max_k so k-sweeps share shapes
    n_max: int = 30
    levenshtein_mode: str = "max"
    selection_chars: int = 512
    chunk_rows: int = 256

    def __post_init__(self):
        if self.k < 0:
            raise ValueError(f"k must be >= 0, got {self.k}")
        if self.k > self.max_k:
            raise ValueError(f"k={self.k} exceeds max_k={self.max_k}")
        if self.n_max < 1:
            raise ValueError(f"n_max must be >= 1, got {self.n_max}")

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in known})


@dataclass(frozen=True)
class TrainConfig:
    seed: int = 0
    lr: float = 1e-3
    epochs: int = 10
    batch_texts: int = 2
    warmup_frac: float = 0.1
    weight_decay: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    mask: str = "full"
    # Adaptive steps move the fusion weights at ~lr per step regardless of
    # gradient size, so a weak-at-init feature can be zeroed out before its
    # encoder has learned anything.  Freezing fusion for the first fraction
    # of epochs (and optionally dropping whole features) counters that.
    fusion_freeze_frac: float = 0.0
    feature_dropout: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.fusion_freeze_frac <= 1.0:
            raise ValueError(
                f"fusion_freeze_frac must be in [0, 1], got {self.fusion_freeze_frac}"
            )
        if not 0.0 <= self.feature_dropout < 1.0:
            raise ValueError(
                f"feature_dropout must be in [0, 1), got {self.feature_dropout}"
            )

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


def parse_config_file(path: str | Path) -> dict[str, str]:
    values: dict[str, str] = {}
    for line_no, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}: line {line_no}: expected key = value")
        key, value = line.split("=", 1)
        values[key.strip()] = value.strip()
    return values


def _coerce(value: str, target_type: type):
    if target_type is bool:
        low = value.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {value!r}")
    return target_type(value)


def apply_overrides(cfg, overrides: dict[str, str]):
    """Replace dataclass fields from a string map, coercing to field types;
    unknown keys are left for the caller."""
    known = {f.name: f.type for f in fields(cfg)}
    updates = {}
    leftover = {}
    for key, value in overrides.items():
        if key in known:
            tp = type(getattr(cfg, key))
            updates[key] = _coerce(value, tp) if isinstance(value, str) else value
        else:
            leftover[key] = value
    return replace(cfg, **updates), leftover
