"""Dataclass configs and the plain-text config file parser.

Config files use `[section]` headers with `key = value` lines, sections
[data], [net], [train], [weights]. Unknown sections or keys are errors.
"""

import configparser
import dataclasses
from dataclasses import dataclass, field

from .errors import ConfigError


@dataclass
class SynthConfig:
    image_size: int = 64
    num_scenes: int = 16
    regions_min: int = 3
    regions_max: int = 8
    shading_low_freq: int = 4
    shading_range: tuple = (0.2, 1.0)
    seed: int = 0

    def validate(self):
        if self.image_size % 4 != 0 or self.image_size < 8:
            raise ConfigError(f"image_size must be >= 8 and divisible by 4, got {self.image_size}")
        if self.num_scenes < 2:
            raise ConfigError(f"num_scenes must be >= 2, got {self.num_scenes}")
        lo, hi = self.shading_range
        if not (0.0 < lo <= hi <= 1.0):
            raise ConfigError(f"shading_range must satisfy 0 < lo <= hi <= 1, got {self.shading_range}")
        if self.regions_min < 1 or self.regions_max < self.regions_min:
            raise ConfigError("invalid regions_min/regions_max")
        if self.shading_low_freq < 2:
            raise ConfigError("shading_low_freq must be >= 2")


@dataclass
class NetConfig:
    base_channels: int = 16
    content_channels: int = 64
    prior_dim: int = 8
    n_res_blocks: int = 2
    n_down_content: int = 2
    n_down_prior: int = 3
    mlp_width: int = 32
    disc_scales: int = 3
    disc_layers_per_scale: int = 3

    def validate(self):
        for f in dataclasses.fields(self):
            if getattr(self, f.name) < 1:
                raise ConfigError(f"net.{f.name} must be >= 1")
        # content codes are contractually input-dims / 4
        if self.n_down_content != 2:
            raise ConfigError("n_down_content is fixed at 2")


@dataclass
class LossWeights:
    content: float = 10.0
    kl: float = 0.1
    image_recon: float = 10.0
    prior_recon: float = 0.1
    physical: float = 5.0
    smoothness: float = 0.0
    # diagonal feature covariance for the reflectance smoothness weights,
    # over (pos_x, pos_y, intensity, chroma_1, chroma_2)
    smoothness_sigma: tuple = (0.1**2, 0.1**2, 0.03**2, 0.01**2, 0.01**2)

    def validate(self):
        for name in ("content", "kl", "image_recon", "prior_recon", "physical", "smoothness"):
            if getattr(self, name) < 0:
                raise ConfigError(f"weights.{name} must be >= 0")
        if len(self.smoothness_sigma) != 5 or any(s <= 0 for s in self.smoothness_sigma):
            raise ConfigError("smoothness_sigma must be 5 positive variances")


@dataclass
class TrainConfig:
    steps: int = 2000
    batch_size: int = 4
    lr: float = 1e-4
    beta1: float = 0.5
    beta2: float = 0.999
    seed: int = 0
    checkpoint_every: int = 500
    mode: str = "standard"  # or "iiw_smoothness"

    def validate(self):
        if self.steps < 1:
            raise ConfigError("train.steps must be >= 1")
        if self.batch_size < 1:
            raise ConfigError("train.batch_size must be >= 1")
        if self.lr <= 0:
            raise ConfigError("train.lr must be > 0")
        if self.mode not in ("standard", "iiw_smoothness"):
            raise ConfigError(f"unknown train.mode {self.mode!r}")


@dataclass
class DataConfig:
    max_samples: int = 0  # 0 = unlimited

    def validate(self):
        if self.max_samples < 0:
            raise ConfigError("data.max_samples must be >= 0")


@dataclass
class FullConfig:
    data: DataConfig = field(default_factory=DataConfig)
    net: NetConfig = field(default_factory=NetConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    weights: LossWeights = field(default_factory=LossWeights)

    def validate(self):
        self.data.validate()
        self.net.validate()
        self.train.validate()
        self.weights.validate()

    def to_dict(self):
        return dataclasses.asdict(self)


_SECTIONS = {"data": DataConfig, "net": NetConfig, "train": TrainConfig, "weights": LossWeights}


def _coerce(raw: str, target):
    if isinstance(target, bool):
        return raw.lower() in ("1", "true", "yes")
    if isinstance(target, int):
        return int(raw)
    if isinstance(target, float):
        return float(raw)
    if isinstance(target, tuple):
        parts = [p.strip() for p in raw.split(",") if p.strip()]
        return tuple(float(p) for p in parts)
    return raw


def load_config(path) -> FullConfig:
    parser = configparser.ConfigParser()
    read = parser.read(path)
    if not read:
        raise ConfigError(f"cannot read config file {path}")
    cfg = FullConfig()
    for section in parser.sections():
        if section not in _SECTIONS:
            raise ConfigError(f"unknown config section [{section}]")
        target = getattr(cfg, section)
        valid = {f.name for f in dataclasses.fields(target)}
        for key, raw in parser.items(section):
            if key not in valid:
                raise ConfigError(f"unknown key {key!r} in section [{section}]")
            setattr(target, key, _coerce(raw, getattr(target, key)))
    cfg.validate()
    return cfg


def save_config(cfg: FullConfig, path):
    parser = configparser.ConfigParser()
    for section, _ in _SECTIONS.items():
        target = getattr(cfg, section)
        parser[section] = {}
        for f in dataclasses.fields(target):
            val = getattr(target, f.name)
            if isinstance(val, tuple):
                val = ", ".join(repr(v) for v in val)
            parser[section][f.name] = str(val)
    with open(path, "w") as fh:
        parser.write(fh)
