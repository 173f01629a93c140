"""Run configuration: encoder, model and optimiser settings loaded from TOML."""

import logging
import os
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from dataclasses import asdict, dataclass, field, fields
from typing import Dict, List, Optional

from config import CONFIG
from app.core.validators import validate_activation, validate_heads, validate_side
from app.exceptions.custom_exceptions import ConfigError

logger = logging.getLogger(__name__)


@dataclass
class EncoderConfig:
    seed: int = CONFIG["encoder"]["seed"]
    text_dim: int = CONFIG["encoder"]["text_dim"]
    visual_dim: int = CONFIG["encoder"]["visual_dim"]
    backbone_channels: List[int] = field(default_factory=lambda: list(CONFIG["encoder"]["backbone_channels"]))
    prompt_side: int = CONFIG["encoder"]["prompt_side"]
    detector_side: int = CONFIG["encoder"]["detector_side"]

    def validate(self) -> None:
        if self.text_dim < 1 or self.visual_dim < 1:
            raise ConfigError(f"encoder dims must be positive, got D_t={self.text_dim} D_v={self.visual_dim}")
        if len(self.backbone_channels) != 4 or any(c < 1 for c in self.backbone_channels):
            raise ConfigError(f"backbone_channels must be four positive widths, got {self.backbone_channels}")
        if self.visual_dim % 2 != 0:
            raise ConfigError(f"visual_dim must be even, got {self.visual_dim}")
        validate_side(self.prompt_side, "prompt_side")
        validate_side(self.detector_side, "detector_side")


@dataclass
class ModelConfig:
    heads: int = CONFIG["model"]["heads"]
    activation: str = CONFIG["model"]["activation"]
    scm_groups: int = CONFIG["model"]["scm_groups"]
    zero_init_heads: bool = CONFIG["model"]["zero_init_heads"]
    head_upsample: str = CONFIG["model"]["head_upsample"]
    logit_scale: float = CONFIG["model"]["logit_scale"]

    def validate(self, encoder: EncoderConfig) -> None:
        if not validate_activation(self.activation):
            raise ConfigError(f"unsupported activation: {self.activation}")
        if self.scm_groups != 4:
            raise ConfigError(f"the channel refinement uses exactly 4 groups, got {self.scm_groups}")
        validate_heads(encoder.visual_dim, self.heads, "visual_dim")
        validate_heads(encoder.backbone_channels[3], self.heads, "backbone_channels[3]")
        for c in encoder.backbone_channels[:3]:
            if c % self.scm_groups != 0:
                raise ConfigError(f"SCM width {c} not divisible by {self.scm_groups} groups")
        if self.head_upsample not in ("subpixel", "bilinear"):
            raise ConfigError(f"head_upsample must be subpixel or bilinear, got {self.head_upsample!r}")
        if not self.logit_scale > 0:
            raise ConfigError(f"logit_scale must be positive, got {self.logit_scale}")


@dataclass
class OptimConfig:
    lr: float = CONFIG["optim"]["lr"]
    beta1: float = CONFIG["optim"]["beta1"]
    beta2: float = CONFIG["optim"]["beta2"]
    eps: float = CONFIG["optim"]["eps"]
    batch_size: int = CONFIG["optim"]["batch_size"]
    steps: int = CONFIG["optim"]["steps"]
    epochs: Optional[int] = CONFIG["optim"]["epochs"]
    hflip: bool = CONFIG["optim"]["hflip"]
    random_crop: bool = CONFIG["optim"]["random_crop"]
    color_jitter: bool = CONFIG["optim"]["color_jitter"]

    def validate(self) -> None:
        if not self.lr > 0:
            raise ConfigError(f"learning rate must be > 0, got {self.lr}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.steps < 0 or (self.epochs is not None and self.epochs < 1):
            raise ConfigError(f"invalid budget: steps={self.steps} epochs={self.epochs}")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1 and self.eps > 0):
            raise ConfigError(f"invalid Adam constants: {self.beta1}, {self.beta2}, {self.eps}")


@dataclass
class RunConfig:
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    optim: OptimConfig = field(default_factory=OptimConfig)
    seed: int = CONFIG["seed"]
    paths: Dict[str, str] = field(default_factory=dict)

    def validate(self, check_paths: bool = True) -> None:
        self.encoder.validate()
        self.model.validate(self.encoder)
        self.optim.validate()
        if check_paths:
            for key, path in self.paths.items():
                if key != "out_dir" and not os.path.exists(path):
                    raise ConfigError(f"path '{key}' does not exist: {path}")
        logger.debug(f"[RunConfig.validate] - config ok: {self.to_dict()}")

    def to_dict(self) -> Dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Dict) -> "RunConfig":
        known = {"encoder", "model", "optim", "seed", "paths"}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config sections: {sorted(unknown)}")
        try:
            return cls(
                encoder=_build(EncoderConfig, data.get("encoder", {})),
                model=_build(ModelConfig, data.get("model", {})),
                optim=_build(OptimConfig, data.get("optim", {})),
                seed=int(data.get("seed", CONFIG["seed"])),
                paths={k: str(v) for k, v in data.get("paths", {}).items()},
            )
        except (TypeError, ValueError) as e:
            raise ConfigError(f"invalid config value: {e}") from e

    @classmethod
    def from_file(cls, path: str) -> "RunConfig":
        logger.info(f"[RunConfig.from_file] - Loading config: {path}")
        try:
            with open(path, "rb") as f:
                data = tomllib.load(f)
        except OSError as e:
            raise ConfigError(f"cannot read config file {path}: {e}") from e
        except tomllib.TOMLDecodeError as e:
            raise ConfigError(f"config file {path} is not valid TOML: {e}") from e

        base = os.path.dirname(os.path.abspath(path))
        config = cls.from_dict(data)
        config.paths = {
            k: v if os.path.isabs(v) else os.path.join(base, v) for k, v in config.paths.items()
        }
        return config


def _build(kind, values: Dict):
    names = {f.name for f in fields(kind)}
    unknown = set(values) - names
    if unknown:
        raise ConfigError(f"unknown {kind.__name__} keys: {sorted(unknown)}")
    return kind(**values)
