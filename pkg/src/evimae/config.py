"""Training/model/run configuration with paper-scale and desk-scale presets."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

from .encoders import EncoderConfig
from .errors import ConfigError
from .imu_graph import GinConfig
from .imu_pipeline import DESK_STFT, StftParams
from .objectives import LossWeights

MODALITIES = ("imu", "video", "both")
MASK_STYLES = ("random", "time", "freq", "time_freq")


@dataclass
class TrainConfig:
    phase: str = "pretrain"
    batch_size: int = 8
    epochs: int = 30
    base_lr: float = 1e-3
    lr_decay_factor: float = 0.5
    lr_decay_every_epochs: int = 10
    head_lr_multiplier: float = 100.0
    weights: LossWeights = field(default_factory=LossWeights)
    mask_ratio_imu: float = 0.75
    mask_ratio_video: float = 0.9
    mask_ratio_graph: float = 0.5
    mask_style: str = "random"
    modality: str = "both"
    use_graph: bool = True
    missing_devices: list = field(default_factory=list)
    masked_only_mse: bool = True
    seed: int = 0

    def validate(self):
        if self.phase not in ("pretrain", "finetune"):
            raise ConfigError(f"unknown phase '{self.phase}'")
        if self.modality not in MODALITIES:
            raise ConfigError(f"modality must be one of {MODALITIES}, got '{self.modality}'")
        if self.mask_style not in MASK_STYLES:
            raise ConfigError(f"mask_style must be one of {MASK_STYLES}, got '{self.mask_style}'")
        if self.batch_size < 1 or self.epochs < 0 or self.lr_decay_every_epochs < 1:
            raise ConfigError("batch_size, epochs and lr_decay_every_epochs must be positive")
        for name in ("mask_ratio_imu", "mask_ratio_video", "mask_ratio_graph"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ConfigError(f"{name} must lie in [0, 1]")
        return self


def paper_pretrain() -> TrainConfig:
    return TrainConfig("pretrain", 24, 300, 5e-5, 0.5, 100)


def paper_finetune() -> TrainConfig:
    return TrainConfig("finetune", 16, 200, 5e-5, 0.5, 60, head_lr_multiplier=100.0)


def desk_pretrain() -> TrainConfig:
    return TrainConfig("pretrain", 8, 30, 1e-3, 0.5, 10)


def desk_finetune() -> TrainConfig:
    return TrainConfig("finetune", 8, 40, 3e-4, 0.5, 10, head_lr_multiplier=10.0)


@dataclass
class VideoConfig:
    t_v: int = 8
    height: int = 64
    width: int = 64
    tubelet: int = 2
    patch: int = 16


@dataclass
class ModelConfig:
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    decoder_dim: Optional[int] = None  # defaults to embed_dim // 2
    decoder_depth: int = 2
    decoder_heads: int = 4
    gin: GinConfig = field(default_factory=GinConfig)
    imu_patch: int = 16

    @property
    def dec_dim(self) -> int:
        return self.decoder_dim or self.encoder.embed_dim // 2


@dataclass
class ProtocolConfig:
    light_levels: list = field(default_factory=lambda: [1.0, 0.5, 0.25, 0.1])
    shot_strength: float = 0.0
    read_sigma: float = 0.0
    missing_devices: list = field(default_factory=lambda: ["left_wrist", "left_ankle"])
    labeled_fraction: float = 1.0


@dataclass
class RunConfig:
    data_dir: str = ""
    finetune_data_dir: str = ""  # empty -> same as data_dir
    pretrain: TrainConfig = field(default_factory=desk_pretrain)
    finetune: TrainConfig = field(default_factory=desk_finetune)
    model: ModelConfig = field(default_factory=ModelConfig)
    stft: StftParams = field(default_factory=lambda: DESK_STFT)
    video: VideoConfig = field(default_factory=VideoConfig)
    protocol: ProtocolConfig = field(default_factory=ProtocolConfig)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        return _build(cls, d, "")

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "RunConfig":
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config file not found: {p}")
        try:
            d = json.loads(p.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{p}: invalid JSON ({exc})") from exc
        return cls.from_dict(d)


def desk_run() -> RunConfig:
    return RunConfig()


def paper_run() -> RunConfig:
    return RunConfig(
        pretrain=paper_pretrain(),
        finetune=paper_finetune(),
        model=ModelConfig(
            encoder=EncoderConfig(embed_dim=768, depth_video=12, depth_imu=12, heads=12, unified_depth=1),
            decoder_heads=8,
            gin=GinConfig(hidden_dim=768),
        ),
        stft=StftParams(),
        video=VideoConfig(t_v=16, height=224, width=224),
    )


def _build(cls, d, where: str):
    """Strict dataclass construction from nested dicts; unknown keys raise ConfigError."""
    if not isinstance(d, dict):
        raise ConfigError(f"{where or 'config'}: expected an object, got {type(d).__name__}")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(d) - set(fields))
    if unknown:
        raise ConfigError(f"unknown config key(s) {unknown} in {where or 'top level'}")
    kwargs = {}
    for name, value in d.items():
        sub = _NESTED.get((cls.__name__, name))
        path = f"{where}.{name}" if where else name
        kwargs[name] = _build(sub, value, path) if sub is not None else value
    try:
        obj = cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where or 'config'}: {exc}") from exc
    return obj


_NESTED = {
    ("RunConfig", "pretrain"): TrainConfig,
    ("RunConfig", "finetune"): TrainConfig,
    ("RunConfig", "model"): ModelConfig,
    ("RunConfig", "stft"): StftParams,
    ("RunConfig", "video"): VideoConfig,
    ("RunConfig", "protocol"): ProtocolConfig,
    ("TrainConfig", "weights"): LossWeights,
    ("ModelConfig", "encoder"): EncoderConfig,
    ("ModelConfig", "gin"): GinConfig,
}
