"""Tensor-factored radiance fields with a Fourier low-pass training curriculum."""

from .checkpoint import load_checkpoint, save_checkpoint
from .data import (SceneDataset, SpecError, SyntheticSceneSpec, load_transforms,
                   make_fewshot, oracle_density, oracle_render, two_sphere_scene)
from .estimator import FourierClip, FourieRF
from .field import CPField, FeatureSample, GridDims, VMField, cp_eval, materialize_dense, vm_eval
from .grad import LossConfig, NonFiniteError, fd_check, loss_and_grad
from .metrics import floater_score, psnr, ssim
from .render import Camera, Decoder, RadianceModel, RenderConfig, composite, render_image
from .spectra import (ClipSchedule, clip_1d, clip_2d, clip_field, mask_1d, mask_2d,
                      schedule_value)
from .train import TrainConfig, adamw_step, train

__version__ = "0.1.0"

__all__ = [
    "CPField", "VMField", "GridDims", "FeatureSample", "cp_eval", "vm_eval",
    "materialize_dense", "ClipSchedule", "schedule_value", "mask_1d", "mask_2d", "clip_1d",
    "clip_2d", "clip_field", "Camera", "Decoder", "RenderConfig", "RadianceModel",
    "composite", "render_image", "LossConfig", "NonFiniteError", "loss_and_grad", "fd_check",
    "TrainConfig", "adamw_step", "train", "SceneDataset", "SyntheticSceneSpec", "SpecError",
    "load_transforms", "make_fewshot", "oracle_density", "oracle_render", "two_sphere_scene",
    "psnr", "ssim", "floater_score", "save_checkpoint", "load_checkpoint", "FourieRF",
    "FourierClip",
]
