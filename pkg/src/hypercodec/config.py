"""Run configuration: training/model hyperparameters and the synthetic data generator.

Defaults follow the shared hyperparameter table of the method (d=256, h=128,
M=4, K=4, tau=0.1, lambda=1.0, beta=0.1, gamma=0.05, AdamW(0.9, 0.999, 1e-8),
weight decay 0.01, lr 1e-4, clip 1.0, 20 epochs, batch 32).

Config files are JSON::

    {"version": 1, "train": {...}, "synth": {...}}

Unknown keys anywhere are rejected.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError

CONFIG_VERSION = 1
VARIANTS = ("full", "euclidean", "m1", "meanpool")


@dataclass
class TrainConfig:
    epochs: int = 20
    batch_size: int = 32
    lr: float = 1e-4
    weight_decay: float = 0.01
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    grad_clip: float = 1.0
    seed: int = 42
    # dimensions
    input_dim: int = 64
    model_dim: int = 256
    ball_dim: int = 128
    n_evidence: int = 4
    n_prototypes: int = 4
    n_layers: int = 2
    # geometry and loss weights
    curvature: float = 1.0
    temperature: float = 0.1
    cluster_weight: float = 1.0
    sep_weight: float = 0.1
    entropy_weight: float = 0.05
    entropy_sign: float = 1.0
    variant: str = "full"

    def __post_init__(self):
        self.betas = tuple(float(b) for b in self.betas)
        self.validate()

    def validate(self) -> None:
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}; choose from {', '.join(VARIANTS)}")
        for name in ("batch_size", "input_dim", "model_dim", "ball_dim", "n_evidence",
                     "n_prototypes", "n_layers"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        if self.curvature <= 0 or self.temperature <= 0:
            raise ConfigError("curvature and temperature must be positive")
        for name in ("cluster_weight", "sep_weight", "entropy_weight", "weight_decay", "lr"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")
        if self.entropy_sign not in (1.0, -1.0):
            raise ConfigError("entropy_sign must be +1 or -1")
        if len(self.betas) != 2:
            raise ConfigError("betas must hold two values")

    @property
    def effective_evidence(self) -> int:
        return 1 if self.variant == "m1" else self.n_evidence

    def replace(self, **changes) -> "TrainConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["betas"] = list(self.betas)
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        return cls(**_checked(cls, data, "train"))


@dataclass
class SynthConfig:
    input_dim: int = 64
    min_frames: int = 40
    max_frames: int = 120
    n_modes: int = 4
    artifact_fraction: float = 0.2
    artifact_strength: float = 2.0
    noise_std: float = 1.0
    smoothing_window: int = 3
    counts: dict = field(default_factory=lambda: {"train": 400, "dev": 100, "test": 100})
    fake_ratio: float = 0.5
    seed: int = 42

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.n_modes < 1:
            raise ConfigError("n_modes must be >= 1")
        if not 0.0 <= self.artifact_fraction <= 1.0:
            raise ConfigError("artifact_fraction must lie in [0, 1]")
        if self.n_modes > self.input_dim:
            raise ConfigError("n_modes cannot exceed input_dim (directions are orthonormal)")
        if not 1 <= self.min_frames <= self.max_frames:
            raise ConfigError("need 1 <= min_frames <= max_frames")
        if self.smoothing_window < 1:
            raise ConfigError("smoothing_window must be >= 1")
        unknown = set(self.counts) - {"train", "dev", "test"}
        if unknown:
            raise ConfigError(f"unknown split(s) in counts: {sorted(unknown)}")
        if not 0.0 <= self.fake_ratio <= 1.0:
            raise ConfigError("fake_ratio must lie in [0, 1]")

    def replace(self, **changes) -> "SynthConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "SynthConfig":
        return cls(**_checked(cls, data, "synth"))


def _checked(cls, data: dict, section: str) -> dict:
    known = {f.name for f in dataclasses.fields(cls)}
    for key in data:
        if key not in known:
            raise ConfigError(f"unknown config key {section}.{key}")
    return dict(data)


def load_config_file(path) -> tuple[TrainConfig, SynthConfig]:
    try:
        raw = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError("config file must hold a JSON object")
    for key in raw:
        if key not in ("version", "train", "synth"):
            raise ConfigError(f"unknown config key {key}")
    if raw.get("version") != CONFIG_VERSION:
        raise ConfigError(f"unsupported config version {raw.get('version')!r} (expected {CONFIG_VERSION})")
    return TrainConfig.from_dict(raw.get("train", {})), SynthConfig.from_dict(raw.get("synth", {}))


def dump_config(train: TrainConfig, synth: SynthConfig | None = None) -> str:
    body = {"version": CONFIG_VERSION, "train": train.to_dict()}
    if synth is not None:
        body["synth"] = synth.to_dict()
    return json.dumps(body, indent=2, sort_keys=True)
