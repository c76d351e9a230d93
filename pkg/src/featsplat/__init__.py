"""Gaussian splatting with a shared hash-grid feature field, a CNN decoder and
coarse-to-fine super-resolution by gradient-guided selective splitting."""

from .checkpoint import load_checkpoint, save_checkpoint
from .config import Config, config_from_dict, load_config
from .data import Dataset, load_dataset, pseudo_hr
from .decoder import Decoder, DecoderConfig
from .densify import GssConfig, GssState, run_gss
from .field import FeatureField, FieldConfig, contract
from .fixture import make_synthetic_scene
from .losses import LossConfig, total_loss
from .metrics import psnr, ssim
from .model import Model, render_view
from .scene import Camera, GaussianSet, Tier
from .splat import rasterize, rasterize_bruteforce

__all__ = [
    "Camera",
    "Config",
    "Dataset",
    "Decoder",
    "DecoderConfig",
    "FeatureField",
    "FieldConfig",
    "GaussianSet",
    "GssConfig",
    "GssState",
    "LossConfig",
    "Model",
    "Tier",
    "config_from_dict",
    "contract",
    "load_checkpoint",
    "load_config",
    "load_dataset",
    "make_synthetic_scene",
    "pseudo_hr",
    "psnr",
    "rasterize",
    "rasterize_bruteforce",
    "render_view",
    "run_gss",
    "save_checkpoint",
    "ssim",
    "total_loss",
]
