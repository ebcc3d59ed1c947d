"""Layered run configuration: defaults <- YAML file <- command-line overrides.

Every knob is addressed by a dotted key (see DEFAULTS). The fully resolved
flat mapping is what gets echoed into run manifests and hashed into the
checkpoint digest, so a run is replayable from its manifest alone.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import yaml

DEFAULTS: dict = {
    # optimization schedule
    "train.input_size": 256,
    "train.batch_size": 10,
    "train.lr": 2e-4,
    "train.epochs": 25,
    "train.lr_halve_every": 5,
    "train.seed": 0,
    "train.weight_decay": 0.0,
    "train.grad_clip": 0.0,  # 0 disables clipping
    "train.beta1": 0.9,
    "train.beta2": 0.999,
    "train.val_every": 1,  # epochs between validation F1 probes (0 disables)
    # encoder backbone (both branches share the architecture, not the weights)
    "encoder.dims": [32, 64, 160, 256],
    "encoder.depths": [2, 2, 2, 2],
    "encoder.heads": [1, 2, 5, 8],
    "encoder.sr_ratios": [8, 4, 2, 1],
    "encoder.mixer": "attention",  # attention | conv
    "encoder.mlp_ratio": 4.0,
    # noise residual front-end
    "noise.mode": "srm_fixed",  # srm_fixed | learned_highpass
    # cross-scale / cross-domain fusion
    "fusion.condconv_experts": 4,
    "fusion.reduce_channels": "native",  # native | list of 4 ints
    # edge prediction head
    "edge.combine": "multiply",  # multiply | concat
    "edge.width": 32,
    # localization head
    "head.se_reduction": 4,
    "head.threshold": 0.5,
}

# Reduced preset that trains in minutes on a small CPU.
DESK_SCALE_OVERRIDES: dict = {
    "train.input_size": 128,
    "train.batch_size": 4,
    "train.lr": 1e-3,
    "encoder.dims": [16, 32, 64, 128],
    "encoder.depths": [1, 1, 1, 1],
    "encoder.heads": [1, 2, 4, 8],
    "encoder.mlp_ratio": 2.0,
    "fusion.condconv_experts": 2,
    "edge.width": 16,
}


@dataclass(frozen=True)
class ModelConfig:
    dims: tuple[int, ...] = (32, 64, 160, 256)
    depths: tuple[int, ...] = (2, 2, 2, 2)
    heads: tuple[int, ...] = (1, 2, 5, 8)
    sr_ratios: tuple[int, ...] = (8, 4, 2, 1)
    mixer: str = "attention"
    mlp_ratio: float = 4.0
    noise_mode: str = "srm_fixed"
    condconv_experts: int = 4
    reduce_channels: str | tuple[int, ...] = "native"
    edge_combine: str = "multiply"
    edge_width: int = 32
    se_reduction: int = 4

    @property
    def fused_dims(self) -> tuple[int, ...]:
        if self.reduce_channels == "native":
            return self.dims
        return tuple(self.reduce_channels)

    def validate(self) -> "ModelConfig":
        for name in ("dims", "depths", "heads", "sr_ratios"):
            if len(getattr(self, name)) != 4:
                raise ValueError(f"{name} must have exactly 4 entries")
        for d, h in zip(self.dims, self.heads):
            if d % h != 0:
                raise ValueError(f"dim {d} not divisible by head count {h}")
        if self.mixer not in ("attention", "conv"):
            raise ValueError(f"unknown mixer {self.mixer!r}")
        if self.noise_mode not in ("srm_fixed", "learned_highpass"):
            raise ValueError(f"unknown noise mode {self.noise_mode!r}")
        if self.condconv_experts < 1:
            raise ValueError("condconv_experts must be >= 1")
        if self.edge_combine not in ("multiply", "concat"):
            raise ValueError(f"unknown edge combine {self.edge_combine!r}")
        if self.reduce_channels != "native" and len(self.fused_dims) != 4:
            raise ValueError("reduce_channels must be 'native' or 4 ints")
        if min(self.fused_dims) < max(self.se_reduction, 2):
            raise ValueError("fused channel counts too small for SE reduction")
        return self


@dataclass(frozen=True)
class TrainConfig:
    input_size: int = 256
    batch_size: int = 10
    lr: float = 2e-4
    epochs: int = 25
    lr_halve_every: int = 5
    seed: int = 0
    weight_decay: float = 0.0
    grad_clip: float = 0.0
    beta1: float = 0.9
    beta2: float = 0.999
    val_every: int = 1
    threshold: float = 0.5
    model: ModelConfig = field(default_factory=ModelConfig)

    def validate(self) -> "TrainConfig":
        if self.input_size % 16 != 0 or self.input_size < 48:
            raise ValueError(
                f"input_size must be a multiple of 16 and >= 48, got {self.input_size}"
            )
        for name in ("batch_size", "lr", "lr_halve_every"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if not 0.0 < self.threshold < 1.0:
            raise ValueError("threshold must be in (0, 1)")
        self.model.validate()
        return self


def _coerce(key: str, value):
    """Parse a raw override value (string from the CLI, or YAML scalar)."""
    if isinstance(value, str):
        value = yaml.safe_load(value)
    default = DEFAULTS[key]
    if isinstance(default, bool):
        return bool(value)
    if isinstance(default, int) and not isinstance(value, bool) and isinstance(value, (int, float)):
        return int(value)
    if isinstance(default, float) and isinstance(value, (int, float)):
        return float(value)
    if isinstance(default, list):
        if not isinstance(value, list):
            raise ValueError(f"config key {key!r} expects a list, got {value!r}")
        return [int(v) for v in value]
    return value


def _flatten(tree: dict, prefix: str = "") -> dict:
    flat = {}
    for k, v in tree.items():
        dotted = f"{prefix}{k}"
        if isinstance(v, dict):
            flat.update(_flatten(v, f"{dotted}."))
        else:
            flat[dotted] = v
    return flat


def resolve_config(
    config_file: str | Path | None = None,
    overrides: dict | None = None,
    desk_scale: bool = False,
) -> dict:
    """Merge defaults, optional YAML file, and overrides into one flat dict.

    Unknown keys are rejected by name. File mappings may be nested or dotted.
    """
    cfg = dict(DEFAULTS)
    if desk_scale:
        cfg.update(DESK_SCALE_OVERRIDES)
    layers = []
    if config_file is not None:
        with open(config_file) as fh:
            tree = yaml.safe_load(fh) or {}
        if not isinstance(tree, dict):
            raise ValueError(f"config file {config_file} must contain a mapping")
        layers.append(_flatten(tree))
    if overrides:
        layers.append(dict(overrides))
    for layer in layers:
        for key, value in layer.items():
            if key not in DEFAULTS:
                raise ValueError(f"unknown config key {key!r}")
            cfg[key] = _coerce(key, value)
    return cfg


def parse_set_args(pairs: list[str]) -> dict:
    """Parse repeated --set key=value arguments."""
    out = {}
    for pair in pairs:
        if "=" not in pair:
            raise ValueError(f"--set expects key=value, got {pair!r}")
        key, value = pair.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def config_digest(cfg: dict) -> str:
    """Stable sha256 over the canonical JSON form of a flat config."""
    canonical = json.dumps(cfg, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode()).hexdigest()


def to_model_config(cfg: dict) -> ModelConfig:
    reduce = cfg["fusion.reduce_channels"]
    if reduce != "native":
        reduce = tuple(int(v) for v in reduce)
    return ModelConfig(
        dims=tuple(cfg["encoder.dims"]),
        depths=tuple(cfg["encoder.depths"]),
        heads=tuple(cfg["encoder.heads"]),
        sr_ratios=tuple(cfg["encoder.sr_ratios"]),
        mixer=cfg["encoder.mixer"],
        mlp_ratio=cfg["encoder.mlp_ratio"],
        noise_mode=cfg["noise.mode"],
        condconv_experts=cfg["fusion.condconv_experts"],
        reduce_channels=reduce,
        edge_combine=cfg["edge.combine"],
        edge_width=cfg["edge.width"],
        se_reduction=cfg["head.se_reduction"],
    ).validate()


def to_train_config(cfg: dict) -> TrainConfig:
    return TrainConfig(
        input_size=cfg["train.input_size"],
        batch_size=cfg["train.batch_size"],
        lr=cfg["train.lr"],
        epochs=cfg["train.epochs"],
        lr_halve_every=cfg["train.lr_halve_every"],
        seed=cfg["train.seed"],
        weight_decay=cfg["train.weight_decay"],
        grad_clip=cfg["train.grad_clip"],
        beta1=cfg["train.beta1"],
        beta2=cfg["train.beta2"],
        val_every=cfg["train.val_every"],
        threshold=cfg["head.threshold"],
        model=to_model_config(cfg),
    ).validate()
