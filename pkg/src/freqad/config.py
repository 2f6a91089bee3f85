"""Experiment configuration: a flat, validated key-value surface.

Configs load from YAML (flat keys only), reject unknown keys, and accept
``key=value`` command-line overrides. Every trained or evaluated run echoes
its fully resolved config next to its outputs.
"""

import dataclasses
from dataclasses import dataclass, field
from typing import List, Optional

import yaml

__all__ = ["ConfigError", "RunConfig"]


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    # experiment identity / reproducibility
    seed: int = 0
    out_dir: str = "runs/default"

    # data
    data_root: str = ""
    category: str = ""
    image_size: int = 256
    channels: int = 3
    val_fraction: float = 0.0

    # model
    n_branches: int = 2
    band_subset: Optional[List[int]] = None
    use_cs: bool = True
    base_channels: int = 64
    disc_channels: int = 64
    cs_reduce_ratio: int = 16
    latent_stage: int = -1

    # losses / scoring
    lambda_con: float = 50.0
    lambda_adv: float = 1.0
    lambda_lat: float = 1.0
    score_lambda: float = 0.9

    # optimizer
    lr: float = 0.002
    beta1: float = 0.5
    beta2: float = 0.999
    weight_decay: float = 1e-4

    # schedule
    batch_size: int = 32
    epochs: int = 200
    max_steps: int = 0  # 0 = no cap
    checkpoint_every: int = 0  # 0 = final checkpoint only

    # forgery augmentation
    use_cutout: bool = True
    use_cutpaste: bool = True
    forge_both: bool = False
    patch_area_min: float = 0.02
    patch_area_max: float = 0.15
    patch_aspect_min: float = 0.3
    patch_aspect_max: float = 3.3

    def __post_init__(self):
        self.validate()

    def validate(self):
        c = self
        checks = [
            (c.n_branches >= 1, "n_branches must be >= 1"),
            (c.image_size > 0 and c.image_size % 32 == 0,
             "image_size must be a positive multiple of 32"),
            (c.channels in (1, 3), "channels must be 1 or 3"),
            (c.base_channels >= 1, "base_channels must be >= 1"),
            (c.disc_channels >= 1, "disc_channels must be >= 1"),
            (c.cs_reduce_ratio >= 1, "cs_reduce_ratio must be >= 1"),
            (c.lambda_con >= 0 and c.lambda_adv >= 0 and c.lambda_lat >= 0,
             "loss weights must be >= 0"),
            (c.lambda_con + c.lambda_adv + c.lambda_lat > 0,
             "at least one loss weight must be positive"),
            (0.0 <= c.score_lambda <= 1.0, "score_lambda must be in [0, 1]"),
            (c.lr > 0, "lr must be positive"),
            (0.0 <= c.beta1 < 1.0 and 0.0 <= c.beta2 < 1.0,
             "adam betas must be in [0, 1)"),
            (c.weight_decay >= 0, "weight_decay must be >= 0"),
            (c.batch_size >= 1, "batch_size must be >= 1"),
            (c.epochs >= 0, "epochs must be >= 0"),
            (c.max_steps >= 0, "max_steps must be >= 0"),
            (c.checkpoint_every >= 0, "checkpoint_every must be >= 0"),
            (0.0 <= c.val_fraction < 1.0, "val_fraction must be in [0, 1)"),
            (0 < c.patch_area_min <= c.patch_area_max < 1,
             "patch area range must satisfy 0 < min <= max < 1"),
            (0 < c.patch_aspect_min <= c.patch_aspect_max,
             "patch aspect range must satisfy 0 < min <= max"),
        ]
        if c.band_subset is not None:
            ok = (
                c.n_branches >= 2
                and len(c.band_subset) >= 1
                and len(set(c.band_subset)) == len(c.band_subset)
                and all(0 <= b < c.n_branches for b in c.band_subset)
            )
            checks.append((ok, f"band_subset must index bands 0..{c.n_branches - 1}"))
        if c.use_cs and c.effective_branches < 2:
            checks.append((False, "use_cs requires >= 2 effective branches"))
        for ok, msg in checks:
            if not ok:
                raise ConfigError(msg)

    @property
    def effective_branches(self) -> int:
        """Generator branch count after an optional band_subset restriction."""
        return len(self.band_subset) if self.band_subset else self.n_branches

    @classmethod
    def field_names(cls):
        return {f.name for f in dataclasses.fields(cls)}

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        unknown = set(data) - cls.field_names()
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        try:
            return cls(**data)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def from_yaml(cls, path) -> "RunConfig":
        with open(path) as f:
            data = yaml.safe_load(f) or {}
        if not isinstance(data, dict):
            raise ConfigError(f"config file {path} must hold a flat mapping")
        return cls.from_dict(data)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def to_yaml(self, path):
        with open(path, "w") as f:
            yaml.safe_dump(self.to_dict(), f, sort_keys=True)

    def with_overrides(self, overrides) -> "RunConfig":
        """Apply ``key=value`` strings; values parse as YAML literals."""
        data = self.to_dict()
        for entry in overrides:
            key, sep, raw = entry.partition("=")
            if not sep:
                raise ConfigError(f"override {entry!r} is not of the form key=value")
            key = key.strip()
            if key not in self.field_names():
                raise ConfigError(f"unknown config key in override: {key!r}")
            data[key] = yaml.safe_load(raw)
        return RunConfig.from_dict(data)
