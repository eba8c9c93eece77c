"""Model hyper-parameters and the architecture-variant selector."""

from __future__ import annotations

from dataclasses import dataclass, field, asdict

ARCHS = ("baseline", "baseline_cnn", "can")


class ConfigError(Exception):
    """Invalid hyper-parameter or flag combination."""


@dataclass
class ModelConfig:
    arch: str = "can"
    d_ch: int = 300
    d_seg: int = 4
    k: int = 5
    d_h: int = 300
    lr: float = 0.005
    rho: float = 0.95
    eps: float = 1e-6
    epochs: int = 100
    batch_size: int = 16
    seed: int = 0
    mask_window_pads: bool = False
    constrained_decode: bool = False
    freeze_embeddings: bool = False
    label_set: list[str] | None = field(default=None)

    def validate(self) -> "ModelConfig":
        if self.arch not in ARCHS:
            raise ConfigError(f"unknown arch {self.arch!r}, expected one of {ARCHS}")
        if self.d_seg != 4:
            raise ConfigError("d_seg is fixed at 4 (one-hot over B/M/E/S)")
        for name in ("d_ch", "k", "d_h", "epochs", "batch_size"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.k % 2 == 0:
            raise ConfigError(f"window size k must be odd, got {self.k}")
        if self.d_h % 2 != 0:
            raise ConfigError(f"d_h must be even (bidirectional split), got {self.d_h}")
        if not self.lr > 0:
            raise ConfigError(f"lr must be positive, got {self.lr}")
        if not 0 < self.rho < 1:
            raise ConfigError(f"rho must be in (0, 1), got {self.rho}")
        if not self.eps > 0:
            raise ConfigError(f"eps must be positive, got {self.eps}")
        return self

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d).validate()
