"""Run configuration with strict JSON loading."""
from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass

import numpy as np

from .autograd import ConfigError

VARIANTS = ("full", "woFT", "woCA", "woSEa", "woSEb", "woISMa", "woISMb")

# fields that change parameter shapes or wiring; a checkpoint can only be
# resumed under a config that agrees on all of them
ARCH_FIELDS = ("d", "h", "L", "N", "max_len", "w_max", "variant", "w_param", "precision")


@dataclass
class RunConfig:
    d: int = 32
    h: int = 2
    L: int = 2
    N: int = 2
    alpha: float = 0.1
    dropout: float = 0.1
    batch: int = 128
    epochs: int = 100
    finetune_epochs: int = 100
    warmup: int = 400
    lr_scale: float = 1.0
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    precision: str = "float32"
    negatives_train: int = 1
    eval_negatives: int = 99
    tau: float = 1.0
    membership: str = "soft"
    variant: str = "full"
    max_len: int = 100
    w_max: int = 16
    w_param: str = "sigmoid"
    alternation: str = "batch"
    early_stop: bool = False
    patience: int = 10
    tie_break: str = "stable"
    log_every: int = 50

    def __post_init__(self):
        self.validate()

    @property
    def d_ff(self) -> int:
        return 2 * self.d

    @property
    def dtype(self):
        return np.float64 if self.precision == "float64" else np.float32

    def validate(self):
        if self.d % self.h:
            raise ConfigError(f"d={self.d} is not divisible by h={self.h}")
        if self.L < 1 or self.N < 1:
            raise ConfigError("L and N must be >= 1")
        if self.alpha < 0:
            raise ConfigError(f"alpha must be >= 0, got {self.alpha}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must be in [0, 1), got {self.dropout}")
        if self.precision not in ("float32", "float64"):
            raise ConfigError(f"precision must be float32 or float64, got {self.precision!r}")
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")
        if self.membership not in ("soft", "hard"):
            raise ConfigError(f"membership must be soft or hard, got {self.membership!r}")
        if self.w_param not in ("sigmoid", "free"):
            raise ConfigError(f"w_param must be sigmoid or free, got {self.w_param!r}")
        if self.alternation not in ("batch", "epoch"):
            raise ConfigError(f"alternation must be batch or epoch, got {self.alternation!r}")
        if self.tie_break not in ("stable", "random"):
            raise ConfigError(f"tie_break must be stable or random, got {self.tie_break!r}")
        if self.tau <= 0:
            raise ConfigError("tau must be positive")
        if self.negatives_train < 1 or self.batch < 1 or self.warmup < 1:
            raise ConfigError("negatives_train, batch and warmup must be >= 1")
        if self.lr_scale <= 0:
            raise ConfigError("lr_scale must be positive")

    def to_dict(self):
        return dataclasses.asdict(self)

    def replace(self, **kw) -> "RunConfig":
        return dataclasses.replace(self, **kw)

    def hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def arch_hash(self) -> str:
        blob = json.dumps({k: getattr(self, k) for k in ARCH_FIELDS}, sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown config key(s): {', '.join(unknown)}")
        return cls(**data)

    @classmethod
    def from_json(cls, path) -> "RunConfig":
        with open(path) as fh:
            data = json.load(fh)
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: config must be a JSON object")
        return cls.from_dict(data)

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
