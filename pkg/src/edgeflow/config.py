"""Run configuration, loaded from TOML files with one table per concern."""

from __future__ import annotations

import dataclasses
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .errors import ConfigError
from .latent_graph import DEFAULT_ENUMERATION_CAP, GraphConfig

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib


@dataclass
class GraphSection:
    n: int = 4
    rho: float = 2.0 / 3.0
    s_override: Optional[int] = None
    m: int = 4


@dataclass
class PolicySection:
    h_g: int = 64
    h_c: int = 64
    hidden: int = 64
    eps_explore_start: float = 0.05
    eps_explore_end: float = 0.0


@dataclass
class DecoderSection:
    d_dim: int = 32
    s_c: int = 16
    gamma: float = 0.5
    pooling: str = "mean"
    embed_scale: float = 0.02


@dataclass
class DiffusionSection:
    t_steps: int = 100
    data_dim: int = 2
    a_start: float = 0.999
    a_end: float = 0.9
    hidden: int = 64
    freeze_denoiser: bool = False
    pretrain_steps: int = 0
    pretrain_lr: float = 2e-3
    num_modes: int = 4
    radius: float = 2.0
    spread: float = 0.2


@dataclass
class TrainSection:
    alpha: float = 1.0
    beta: float = 1.0
    lr: float = 1e-3
    max_steps: int = 1000
    seed: int = 0
    condition_scale: float = 0.5
    log_every: int = 100
    checkpoint_every: int = 1000
    ma_window: int = 50


@dataclass
class RewardSection:
    mode: str = "denoiser"  # denoiser | analytic
    order: str = "set"  # set | sequence
    center_sets: list = field(default_factory=list)
    centers: list = field(default_factory=list)
    widths: list = field(default_factory=lambda: [1.0])
    weights: list = field(default_factory=lambda: [1.0])


@dataclass
class EvalSection:
    enumeration_cap: int = DEFAULT_ENUMERATION_CAP
    tv_threshold: float = 0.05
    residual_threshold: float = 1e-2
    samples: int = 5000
    coverage_radius: float = 0.75
    diversity_calls: int = 32


SECTIONS = {
    "graph": GraphSection,
    "policy": PolicySection,
    "decoder": DecoderSection,
    "diffusion": DiffusionSection,
    "train": TrainSection,
    "reward": RewardSection,
    "eval": EvalSection,
}


@dataclass
class TrainConfig:
    graph: GraphSection = field(default_factory=GraphSection)
    policy: PolicySection = field(default_factory=PolicySection)
    decoder: DecoderSection = field(default_factory=DecoderSection)
    diffusion: DiffusionSection = field(default_factory=DiffusionSection)
    train: TrainSection = field(default_factory=TrainSection)
    reward: RewardSection = field(default_factory=RewardSection)
    eval: EvalSection = field(default_factory=EvalSection)

    def __post_init__(self):
        self.validate()

    @property
    def graph_config(self) -> GraphConfig:
        g = self.graph
        return GraphConfig(g.n, g.rho, g.m, g.s_override)

    @property
    def set_mode(self) -> bool:
        return self.reward.order == "set"

    def validate(self) -> None:
        self.graph_config  # raises on bad sizes
        if self.train.alpha < 0 or self.train.beta < 0:
            raise ConfigError("loss weights alpha and beta must be nonnegative")
        if not 0.0 <= self.decoder.gamma <= 1.0:
            raise ConfigError("gamma must lie in [0, 1]")
        if self.reward.mode not in ("denoiser", "analytic"):
            raise ConfigError(f"unknown reward mode {self.reward.mode!r}")
        if self.reward.order not in ("set", "sequence"):
            raise ConfigError(f"unknown reward order {self.reward.order!r}")
        if self.reward.mode == "analytic" and not (self.reward.centers or self.reward.center_sets):
            raise ConfigError("analytic reward needs centers or center_sets")
        if self.decoder.pooling not in ("mean", "last"):
            raise ConfigError(f"unknown pooling {self.decoder.pooling!r}")
        for name in ("eps_explore_start", "eps_explore_end"):
            if not 0.0 <= getattr(self.policy, name) <= 1.0:
                raise ConfigError(f"{name} must lie in [0, 1]")
        if self.train.max_steps < 0:
            raise ConfigError("max_steps must be nonnegative")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        sections = {}
        for key, value in data.items():
            if key not in SECTIONS:
                raise ConfigError(f"unknown config section [{key}]")
            section = SECTIONS[key]
            known = {f.name for f in dataclasses.fields(section)}
            extra = set(value) - known
            if extra:
                raise ConfigError(f"unknown keys in [{key}]: {sorted(extra)}")
            sections[key] = section(**value)
        return cls(**sections)

    def replace(self, **sections) -> "TrainConfig":
        """Copy with per-section overrides, e.g. ``replace(train={"seed": 3})``."""
        data = self.to_dict()
        for key, updates in sections.items():
            data[key].update(updates)
        return TrainConfig.from_dict(data)


def load_config(path) -> TrainConfig:
    try:
        with open(Path(path), "rb") as fh:
            data = tomllib.load(fh)
    except (OSError, tomllib.TOMLDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        return TrainConfig.from_dict(data)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc
