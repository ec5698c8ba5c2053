"""Run configuration stored as an INI file with one section per concern."""

from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigurationError


@dataclass
class DataConfig:
    mode: str = "lf"
    num_sources: int = 2
    patch_size: int = 64
    batch_size: int = 2
    scene_dir: str = ""


@dataclass
class ModelConfig:
    neighborhood_size: int = 32
    psv_layers: int = 32
    ctt_channels: int = 16
    fc_width: int = 32
    fc_blocks: int = 3
    fw_width: int = 64
    fw_layers: int = 4
    fb_width: int = 64
    fb_layers: int = 3
    fv_width: int = 64
    psv_features: int = 64
    fg_width: int = 16
    fg_channels: int = 32
    fr_width: int = 64
    fr_blocks: int = 4


@dataclass
class TrainConfig:
    steps: int = 2000
    learning_rate: float = 1e-3
    lr_drop_step: int = 8000
    lr_dropped: float = 1e-4
    checkpoint_every: int = 500
    seed: int = 0


@dataclass
class LossConfig:
    weight_lambda: float = 0.01
    ssim: bool = True


@dataclass
class AblationConfig:
    content_embedding: bool = True
    global_embedding: bool = True
    psv_fusion: bool = True
    feature_warp: bool = True
    weight_smoothness: bool = True


@dataclass
class RunConfig:
    data: DataConfig = field(default_factory=DataConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    ablation: AblationConfig = field(default_factory=AblationConfig)

    SECTIONS = ("data", "model", "train", "loss", "ablation")

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.data.mode not in ("lf", "multiview"):
            raise ConfigurationError(f"mode must be 'lf' or 'multiview', got {self.data.mode!r}")
        checks = {
            "data.num_sources": self.data.num_sources >= 1,
            "data.patch_size": self.data.patch_size >= 1,
            "data.batch_size": self.data.batch_size >= 1,
            "model.neighborhood_size": self.model.neighborhood_size >= 2,
            "model.psv_layers": self.model.psv_layers >= 2,
            "model.fw_layers": self.model.fw_layers >= 2,
            "model.fb_layers": self.model.fb_layers >= 2,
            "train.steps": self.train.steps >= 0,
            "train.learning_rate": self.train.learning_rate > 0,
            "train.lr_dropped": self.train.lr_dropped > 0,
            "loss.weight_lambda": self.loss.weight_lambda >= 0,
        }
        bad = [k for k, ok in checks.items() if not ok]
        if bad:
            raise ConfigurationError(f"invalid configuration values: {', '.join(bad)}")

    @property
    def effective_lambda(self) -> float:
        return self.loss.weight_lambda if self.ablation.weight_smoothness else 0.0

    def learning_rate_at(self, step: int) -> float:
        return self.train.learning_rate if step < self.train.lr_drop_step else self.train.lr_dropped

    def replace(self, **sections) -> "RunConfig":
        """Copy with per-section overrides, e.g. ``replace(train={"steps": 10})``."""
        parts = {}
        for name in self.SECTIONS:
            current = getattr(self, name)
            parts[name] = dataclasses.replace(current, **sections.get(name, {}))
        return RunConfig(**parts)

    # -- serialization --------------------------------------------------------------

    def to_parser(self) -> configparser.ConfigParser:
        parser = configparser.ConfigParser()
        for name in self.SECTIONS:
            parser[name] = {k: str(v) for k, v in dataclasses.asdict(getattr(self, name)).items()}
        return parser

    def save(self, path) -> None:
        with open(path, "w") as fh:
            self.to_parser().write(fh)

    @classmethod
    def from_parser(cls, parser: configparser.ConfigParser) -> "RunConfig":
        unknown = [s for s in parser.sections() if s not in cls.SECTIONS]
        if unknown:
            raise ConfigurationError(f"unknown config sections: {unknown}")
        parts = {}
        for name in cls.SECTIONS:
            section_cls = type(getattr(cls(), name))
            values = {}
            fields = {f.name: f for f in dataclasses.fields(section_cls)}
            if parser.has_section(name):
                for key, raw in parser[name].items():
                    if key not in fields:
                        raise ConfigurationError(f"unknown key {name}.{key}")
                    values[key] = _convert(type(getattr(section_cls(), key)), raw, f"{name}.{key}")
            parts[name] = section_cls(**values)
        return cls(**parts)

    @classmethod
    def load(cls, path) -> "RunConfig":
        parser = configparser.ConfigParser()
        if not Path(path).is_file():
            raise ConfigurationError(f"config file not found: {path}")
        try:
            parser.read(path)
        except configparser.Error as exc:
            raise ConfigurationError(f"cannot parse config {path}: {exc}") from None
        return cls.from_parser(parser)


def _convert(kind: type, raw: str, name: str):
    try:
        if kind is bool:
            low = raw.strip().lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        return kind(raw.strip())
    except ValueError:
        raise ConfigurationError(f"{name}: cannot interpret {raw!r} as {kind.__name__}") from None


def full_config() -> RunConfig:
    """Full-scale training schedule: batch 4, lr 1e-4 dropped to 1e-5 after 8000 steps."""
    return RunConfig(
        data=DataConfig(batch_size=4),
        train=TrainConfig(learning_rate=1e-4, lr_drop_step=8000, lr_dropped=1e-5, steps=10000),
    )


def desk_config() -> RunConfig:
    """Reduced sizes for CPU runs on 32x32 synthetic scenes."""
    return RunConfig(
        data=DataConfig(patch_size=24, batch_size=2),
        model=ModelConfig(
            neighborhood_size=8,
            psv_layers=4,
            ctt_channels=8,
            fc_width=16,
            fc_blocks=2,
            fw_width=32,
            fb_width=32,
            fv_width=16,
            psv_features=16,
            fg_width=8,
            fg_channels=8,
            fr_width=24,
            fr_blocks=2,
        ),
        train=TrainConfig(steps=2000, learning_rate=1e-3, lr_drop_step=1500, lr_dropped=1e-4),
    )
