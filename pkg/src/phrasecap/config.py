"""Experiment configuration: one canonical JSON document drives every command.

All artifacts embed the producing config hash so mismatched pairs are refused
at load time.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field

from .errors import ConfigError


@dataclass
class DatasetSettings:
    rows: int = 3
    cols: int = 3
    n_objects: int = 12
    n_attributes: int = 8
    n_actions: int = 6
    noise_dims: int = 4
    noise_sigma: float = 0.05
    distractors: int = 0
    captions_per_scene: int = 2
    n_train: int = 500
    n_heldout: int = 100


@dataclass
class ModelSettings:
    hidden: int = 64
    embed: int = 32
    label_embed: int = 8
    att_hidden: int = 32
    deep_dim: int = 64
    mlp_hidden: int = 64
    max_phrases: int = 8
    max_words: int = 8
    lambda_att: float = 0.01


@dataclass
class PretrainSettings:
    lr: float = 1e-3
    batch: int = 16
    epochs: int = 30
    snapshot_epoch: int = 4


@dataclass
class FBNSettings:
    hidden: int = 64
    embed: int = 32
    mlp_hidden: int = 64
    dropout: float = 0.5
    lr: float = 1e-3
    batch: int = 256
    epochs: int = 8


@dataclass
class RewardSettings:
    lambdas: tuple = (0.5, 0.5, 1.0, 1.0, 0.3)
    beta_gt: float = 1.0
    beta_perfect: float = 1.0
    beta_acceptable: float = 0.8
    beta_grammar_only: float = 0.6
    lambda_f: float = 0.3


@dataclass
class RLSettings:
    lr: float = 1e-6
    batch: int = 50
    mle_epochs: int = 0   # K: pure cross-entropy epochs before annealing starts
    epochs: int = 15      # T: annealed epochs
    phrase_period: int = 5  # m: one more phrase moves to policy gradient every m epochs
    mode: str = "GT:1"
    n_images: int = 0     # 0 = all train scenes


@dataclass
class ExperimentConfig:
    seed: int = 0
    dataset: DatasetSettings = field(default_factory=DatasetSettings)
    model: ModelSettings = field(default_factory=ModelSettings)
    pretrain: PretrainSettings = field(default_factory=PretrainSettings)
    fbn: FBNSettings = field(default_factory=FBNSettings)
    reward: RewardSettings = field(default_factory=RewardSettings)
    rl: RLSettings = field(default_factory=RLSettings)


def _from_dict(cls, data: dict):
    names = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - set(names))
    if unknown:
        raise ConfigError(f"unknown {cls.__name__} keys {unknown}")
    kwargs = {}
    for key, value in data.items():
        if key in _SECTIONS and cls is ExperimentConfig:
            kwargs[key] = _from_dict(_SECTIONS[key], value)
        elif key == "lambdas":
            kwargs[key] = tuple(float(v) for v in value)
        else:
            kwargs[key] = value
    return cls(**kwargs)


_SECTIONS = {
    "dataset": DatasetSettings,
    "model": ModelSettings,
    "pretrain": PretrainSettings,
    "fbn": FBNSettings,
    "reward": RewardSettings,
    "rl": RLSettings,
}


def config_from_dict(data: dict) -> ExperimentConfig:
    return _from_dict(ExperimentConfig, data)


def config_to_dict(cfg: ExperimentConfig) -> dict:
    d = dataclasses.asdict(cfg)
    d["reward"]["lambdas"] = list(cfg.reward.lambdas)
    return d


def canonical_json(cfg: ExperimentConfig) -> str:
    return json.dumps(config_to_dict(cfg), sort_keys=True, separators=(",", ":"))


def config_hash(cfg: ExperimentConfig) -> str:
    return hashlib.sha256(canonical_json(cfg).encode()).hexdigest()[:16]


def load_config(path) -> ExperimentConfig:
    with open(path, encoding="utf-8") as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    return config_from_dict(data)


def save_config(cfg: ExperimentConfig, path):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(config_to_dict(cfg), fh, indent=2, sort_keys=True)
        fh.write("\n")


def apply_overrides(cfg: ExperimentConfig, overrides: dict) -> ExperimentConfig:
    """Dotted-key overrides (flags win over the config file)."""
    data = config_to_dict(cfg)
    for dotted, value in overrides.items():
        parts = dotted.split(".")
        target = data
        for p in parts[:-1]:
            if p not in target:
                raise ConfigError(f"unknown config section {p!r} in override {dotted!r}")
            target = target[p]
        if parts[-1] not in target:
            raise ConfigError(f"unknown config key {dotted!r}")
        target[parts[-1]] = value
    return config_from_dict(data)
