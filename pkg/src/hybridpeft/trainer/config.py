"""Training hyper-parameters."""
from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Optional

from ..adapters import DEFAULT_ALPHA, DEFAULT_LAMBDA_CAP, DEFAULT_RANK
from ..errors import ConfigError
from ..fusion import DEFAULT_ETA_BOFT, DEFAULT_ETA_LORA
from ..numerics import is_power_of_two

MODES = ("full", "lora", "lora_ga", "boft", "urnn", "hybrid")


@dataclass(frozen=True)
class TrainConfig:
    mode: str = "hybrid"
    dim: int = 64
    layers: int = 2
    num_classes: int = 4
    rank: int = DEFAULT_RANK
    alpha: float = DEFAULT_ALPHA
    lambda_cap: float = DEFAULT_LAMBDA_CAP
    eta_lora: float = DEFAULT_ETA_LORA
    eta_boft: float = DEFAULT_ETA_BOFT
    eta_head: float = 0.3
    eta_full: float = 0.05
    eta_unitary: float = 0.05
    epochs: int = 20
    batch_size: int = 16
    boft_depth: int = 3
    unitary_layers: Optional[tuple] = None   # None means every layer
    ga_scale: float = 1e-3
    seed: int = 0
    # base-weight warm-up (full fine-tuning on a held-out language-ID task)
    warmup_epochs: int = 4
    warmup_eta: float = 0.5
    # runtime knob only: excluded from as_dict, so it never reaches hashes or checkpoints
    workers: int = 1

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"unknown adapter mode {self.mode!r}; expected one of {MODES}")
        if not is_power_of_two(self.dim) or self.dim < 2:
            raise ConfigError(f"dim must be a power of two >= 2, got {self.dim}")
        if self.layers < 1:
            raise ConfigError("layers must be >= 1")
        if self.num_classes < 2:
            raise ConfigError("num_classes must be >= 2")
        if not 1 <= self.rank <= self.dim:
            raise ConfigError(f"rank must lie in [1, {self.dim}], got {self.rank}")
        if not 1 <= self.boft_depth <= self.dim.bit_length() - 1:
            raise ConfigError(f"boft_depth must lie in [1, log2(dim)], got {self.boft_depth}")
        for name in ("alpha", "lambda_cap", "eta_lora", "eta_boft", "eta_head", "eta_full",
                     "eta_unitary", "ga_scale", "warmup_eta"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")
        if self.epochs < 0 or self.warmup_epochs < 0:
            raise ConfigError("epochs must be >= 0")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        if self.unitary_layers is not None:
            bad = [i for i in self.unitary_layers if not 0 <= i < self.layers]
            if bad:
                raise ConfigError(f"unitary layer indices out of range: {bad}")

    def unitary_placement(self) -> tuple:
        if self.unitary_layers is None:
            return tuple(range(self.layers))
        return tuple(sorted(set(self.unitary_layers)))

    def as_dict(self) -> dict:
        out = asdict(self)
        del out["workers"]
        out["unitary_layers"] = None if self.unitary_layers is None else list(self.unitary_layers)
        return out
