"""Run configuration, read from JSON. Unknown keys are rejected.

Top-level keys::

    dataset     path to the camera manifest (relative to the config file)
    sr_factor   integer super-resolution factor
    seed        RNG seed
    hr_principal_point  "multiply" (cx -> s*cx) or "center" (cx -> s*cx + (s-1)/2)
    field       FieldConfig    (n_levels, log2_table_size, feature_dim, base_resolution,
                                max_resolution, hidden_dim, out_dim, sh_degree, init_scale)
    decoder     DecoderConfig  (in_channels, width, bottleneck_width, in_kernel, mid_kernel)
    loss        LossConfig     (lambda_reg, lambda_ssim, ssim_window, ssim_sigma)
    gss         GssConfig      (tau_p, tau_s, n_split, interval, prune_opacity, scale_norm,
                                fine_split_factor, clone_nudge); n_split defaults to
                                5 for x2 and 7 for x4
    lr          LearningRates
    stage1      Stage1Config   (iterations, densify, densify_interval, densify_until)
    stage2      Stage2Config   (iterations, coarse_finetune_lr_scale)
    init        InitConfig     (n_random_points, random_radius, init_opacity)
    fixture     FixtureConfig  (n_gaussians, lr_resolution, n_views, cone_deg)
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass
from dataclasses import field as _field
from pathlib import Path

from .decoder import DecoderConfig
from .densify import GssConfig
from .errors import ConfigError
from .field import FieldConfig
from .losses import LossConfig


@dataclass
class LearningRates:
    position: float = 1.6e-4
    position_final: float = 1.6e-6
    opacity: float = 0.05
    scale: float = 5e-3
    rotation: float = 1e-3
    tables: float = 2e-3
    mlp: float = 1e-3
    decoder: float = 1e-3


@dataclass
class Stage1Config:
    iterations: int = 2000
    densify: bool = True
    densify_interval: int = 100
    densify_until: float = 0.6


@dataclass
class Stage2Config:
    iterations: int = 2000
    coarse_finetune_lr_scale: float = 0.1


@dataclass
class InitConfig:
    n_random_points: int = 100
    random_radius: float = 1.0
    init_opacity: float = 0.1


@dataclass
class FixtureConfig:
    n_gaussians: int = 20
    lr_resolution: int = 32
    n_views: int = 10
    cone_deg: float = 20.0


@dataclass
class Config:
    dataset: str = ""
    sr_factor: int = 2
    seed: int = 0
    hr_principal_point: str = "multiply"
    field: FieldConfig = _field(default_factory=FieldConfig)
    decoder: DecoderConfig = _field(default_factory=DecoderConfig)
    loss: LossConfig = _field(default_factory=LossConfig)
    gss: GssConfig = _field(default_factory=GssConfig)
    lr: LearningRates = _field(default_factory=LearningRates)
    stage1: Stage1Config = _field(default_factory=Stage1Config)
    stage2: Stage2Config = _field(default_factory=Stage2Config)
    init: InitConfig = _field(default_factory=InitConfig)
    fixture: FixtureConfig = _field(default_factory=FixtureConfig)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def _build(cls, data, where: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected an object")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - set(fields))
    if unknown:
        raise ConfigError(f"{where}: unknown key(s) {', '.join(unknown)}")
    kwargs = {}
    for name, value in data.items():
        default = getattr(cls(), name) if dataclasses.is_dataclass(cls) else None
        if dataclasses.is_dataclass(default):
            kwargs[name] = _build(type(default), value, f"{where}.{name}")
        else:
            kwargs[name] = value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def config_from_dict(data: dict) -> Config:
    data = dict(data)
    gss = dict(data.get("gss", {}))
    if "n_split" not in gss:
        gss["n_split"] = GssConfig.splits_for_factor(int(data.get("sr_factor", 2)))
    data["gss"] = gss
    cfg = _build(Config, data, "config")
    if cfg.hr_principal_point not in ("multiply", "center"):
        raise ConfigError(f"config.hr_principal_point: expected 'multiply' or 'center', got {cfg.hr_principal_point!r}")
    return cfg


def load_config(path) -> Config:
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    cfg = config_from_dict(data)
    if cfg.dataset and not Path(cfg.dataset).is_absolute():
        cfg.dataset = str((path.parent / cfg.dataset).resolve())
    return cfg
