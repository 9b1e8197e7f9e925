from .checkpoint import load_checkpoint, load_samples, save_checkpoint, save_samples
from .data import generate, points2d, sprites16
from .sampler import ddim_sample
from .schedule import (
    NoiseSchedule,
    ddim_sigma,
    ddim_step,
    ddim_timesteps,
    dm_loss,
    make_schedule,
    q_sample,
    schedule_from_betas,
)
from .unet import UNet, UNetSpec

__all__ = [
    "NoiseSchedule",
    "UNet",
    "UNetSpec",
    "ddim_sample",
    "ddim_sigma",
    "ddim_step",
    "ddim_timesteps",
    "dm_loss",
    "generate",
    "load_checkpoint",
    "load_samples",
    "make_schedule",
    "points2d",
    "q_sample",
    "save_checkpoint",
    "save_samples",
    "schedule_from_betas",
    "sprites16",
]
