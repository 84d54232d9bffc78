from .diffusion import DiffusionSchedule, ddim_sample, ddim_timesteps, forward_diffuse, make_schedule
from .model import ATSConfig, Denoiser, ats_loss, band_mask

__all__ = [
    "ATSConfig", "Denoiser", "DiffusionSchedule", "ats_loss", "band_mask", "ddim_sample",
    "ddim_timesteps", "forward_diffuse", "make_schedule",
]
