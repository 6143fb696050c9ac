"""Experiment configuration, named presets and the config digest."""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

VARIANTS = ("marginal_recombination", "joint_loss", "multi_mlp", "anchor_transformer", "cvae")


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    variant: str = "marginal_recombination"
    dim: int = 32
    heads: int = 4
    n_layers: int = 4  # backbone SFT layers
    k: int = 6
    anchor_layers: int | None = None  # anchor_transformer only
    latent_dim: int = 32
    cvae_layers: int = 2  # SFT layers in each CVAE sub-network
    beta: float | None = None  # cvae only
    lambda_reg: float = 1.0
    lambda_cls: float = 0.1
    bezier_degree: int = 5
    t_past: int = 20
    t_future: int = 30
    epochs: int = 50
    batch_size: int = 16
    lr_initial: float = 1e-3
    lr_final: float = 1e-4
    lr_decay_epochs: int = 40
    seed: int = 0
    train_data: str | None = None
    eval_data: str | None = None
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.variant == "anchor_transformer" and self.anchor_layers is None:
            self.anchor_layers = 2
        if self.variant == "cvae" and self.beta is None:
            self.beta = 0.05
        self.validate()

    def validate(self) -> None:
        if self.variant not in VARIANTS:
            raise ConfigError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.beta is not None and self.variant != "cvae":
            raise ConfigError("beta is only valid for the cvae variant")
        if self.anchor_layers is not None and self.variant != "anchor_transformer":
            raise ConfigError("anchor_layers is only valid for the anchor_transformer variant")
        if self.dim < 1 or self.heads < 1 or self.dim % self.heads:
            raise ConfigError(f"dim={self.dim} must be a positive multiple of heads={self.heads}")
        for name in ("k", "t_past", "t_future", "batch_size", "bezier_degree", "latent_dim"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        for name in ("n_layers", "cvae_layers", "epochs", "lr_decay_epochs"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")
        if self.anchor_layers is not None and self.anchor_layers < 0:
            raise ConfigError("anchor_layers must be >= 0")
        if self.beta is not None and self.beta < 0:
            raise ConfigError("beta must be >= 0")
        if self.lr_initial <= 0 or self.lr_final <= 0:
            raise ConfigError("learning rates must be positive")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def canonical_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    @property
    def digest(self) -> str:
        return hashlib.sha256(self.canonical_json().encode()).hexdigest()[:16]

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ConfigError(f"unknown config fields: {sorted(unknown)}")
        try:
            return cls(**d)
        except TypeError as e:
            raise ConfigError(str(e)) from None

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            doc = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigError(f"{path}: {e}") from None
        if not isinstance(doc, dict):
            raise ConfigError(f"{path}: config must be a JSON object")
        return cls.from_dict(doc)


PRESETS = {
    "desk": {"dim": 32, "heads": 4, "n_layers": 4, "t_past": 20, "t_future": 30, "k": 6},
    "paper": {"dim": 128, "heads": 4, "n_layers": 4, "t_past": 50, "t_future": 60, "k": 6},
    "cvae_small_beta": {"variant": "cvae", "beta": 0.05, "latent_dim": 32},
    "cvae_large_beta": {"variant": "cvae", "beta": 0.5, "latent_dim": 32},
}


def preset(name: str, **overrides) -> ExperimentConfig:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; have {sorted(PRESETS)}")
    base = dict(PRESETS["desk"]) if name.startswith("cvae") else {}
    return ExperimentConfig(**{**base, **PRESETS[name], **overrides})
