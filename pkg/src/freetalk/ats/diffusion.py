"""Linear-beta diffusion schedule, closed-form noising and the deterministic DDIM sampler."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
import torch

from ..errors import ConfigError, DataError, NumericalError


@dataclass(frozen=True)
class DiffusionSchedule:
    """``betas[l-1]`` is beta_l for l = 1..T_d; ``alpha_bars[l]`` is the cumulative product
    with ``alpha_bars[0] = 1``."""

    betas: np.ndarray
    alphas: np.ndarray
    alpha_bars: np.ndarray

    @property
    def n_steps(self) -> int:
        return self.betas.size

    def to_json(self) -> dict:
        return {"n_steps": self.n_steps, "beta_start": float(self.betas[0]),
                "beta_end": float(self.betas[-1])}


def make_schedule(n_steps: int = 1000, beta_start: float = 1e-4, beta_end: float = 0.02) -> DiffusionSchedule:
    if n_steps < 1:
        raise ConfigError("need at least one diffusion step")
    if n_steps == 1:
        if not 0 < beta_start < 1:
            raise ConfigError("beta must lie in (0, 1)")
        betas = np.array([beta_start], dtype=np.float64)
    else:
        if not 0 < beta_start < beta_end < 1:
            raise ConfigError(f"invalid beta endpoints ({beta_start}, {beta_end})")
        betas = np.linspace(beta_start, beta_end, n_steps, dtype=np.float64)
    alphas = 1.0 - betas
    alpha_bars = np.concatenate([[1.0], np.cumprod(alphas)])
    return DiffusionSchedule(betas, alphas, alpha_bars)


def forward_diffuse(x0, step, noise, schedule: DiffusionSchedule):
    """``sqrt(abar_l) x0 + sqrt(1 - abar_l) eps``; ``step`` may be an int or one step per batch item."""
    if tuple(x0.shape) != tuple(noise.shape):
        raise DataError(f"shape mismatch {tuple(x0.shape)} vs {tuple(noise.shape)}")
    if isinstance(x0, torch.Tensor):
        abar = torch.as_tensor(schedule.alpha_bars, dtype=x0.dtype, device=x0.device)[
            torch.as_tensor(step, device=x0.device)]
        abar = abar.reshape(abar.shape + (1,) * (x0.ndim - abar.ndim))
        return abar.sqrt() * x0 + (1.0 - abar).sqrt() * noise
    abar = np.asarray(schedule.alpha_bars[np.asarray(step)], dtype=np.float64)
    abar = abar.reshape(abar.shape + (1,) * (np.ndim(x0) - abar.ndim))
    return np.sqrt(abar) * x0 + np.sqrt(1.0 - abar) * noise


def ddim_timesteps(n_steps: int, ddim_steps: int) -> np.ndarray:
    """Decreasing, evenly spaced timesteps from ``n_steps`` down to 1 (the sampler then lands on 0)."""
    if not 1 <= ddim_steps <= n_steps:
        raise ConfigError(f"ddim_steps must lie in [1, {n_steps}]")
    grid = np.round(np.linspace(n_steps, 0, ddim_steps + 1)).astype(np.int64)
    return grid[:-1]


Denoiser = Callable[[torch.Tensor, torch.Tensor], torch.Tensor]


@torch.no_grad()
def ddim_sample(denoiser: Denoiser, shape, schedule: DiffusionSchedule, ddim_steps: int = 100,
                generator: torch.Generator | None = None, dtype=torch.float32,
                noise: torch.Tensor | None = None) -> torch.Tensor:
    """Deterministic (eta = 0) DDIM sampling for an x0-predicting denoiser.

    ``denoiser(x_l, l)`` receives the current latent and a per-item step tensor and returns
    the clean-sequence estimate. The conditioning is closed over by the caller.
    """
    steps = ddim_timesteps(schedule.n_steps, ddim_steps)
    x = noise if noise is not None else torch.randn(shape, generator=generator, dtype=dtype)
    batch = x.shape[0]
    abars = schedule.alpha_bars
    x0_hat = x
    for k, step in enumerate(steps):
        nxt = steps[k + 1] if k + 1 < len(steps) else 0
        x0_hat = denoiser(x, torch.full((batch,), int(step), dtype=torch.long))
        if not torch.all(torch.isfinite(x0_hat)):
            raise NumericalError(f"denoiser produced non-finite values at step {step}")
        a, a_next = float(abars[step]), float(abars[nxt])
        eps_hat = (x - a ** 0.5 * x0_hat) / (1.0 - a) ** 0.5
        x = a_next ** 0.5 * x0_hat + (1.0 - a_next) ** 0.5 * eps_hat
    # the last update lands on abar_0 = 1, i.e. x equals the final estimate
    return x0_hat
