"""Transformer denoiser mapping noisy landmark trajectories to clean ones."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import torch
from torch import nn

from ..errors import DataError
from ..metrics import ATS_WEIGHTS, LossWeights, motion_loss
from ..nn import MultiHeadAttention, sinusoidal_embedding
from .diffusion import DiffusionSchedule, forward_diffuse

MASK_VALUE = -1e9


@dataclass
class ATSConfig:
    n_landmarks: int = 68
    audio_channels: int = 80
    d_model: int = 512
    n_layers: int = 6
    n_heads: int = 8
    ffn_dim: int = 2048
    dropout: float = 0.1
    max_frames: int = 600
    band_radius: int = 2
    emotions: list[str] = field(default_factory=lambda: ["neutral"])
    max_intensity: int = 3

    @property
    def motion_dim(self) -> int:
        return 3 * self.n_landmarks

    def to_json(self) -> dict:
        return asdict(self)


def band_mask(n_rows: int, n_cols: int, radius: int) -> torch.Tensor:
    """Additive attention bias: 0 where ``|j - i| <= radius``, ``-1e9`` elsewhere."""
    if radius < 0:
        raise ValueError("band radius must be nonnegative")
    i = torch.arange(n_rows)[:, None]
    j = torch.arange(n_cols)[None, :]
    bias = torch.zeros(n_rows, n_cols)
    bias[(j - i).abs() > radius] = MASK_VALUE
    return bias


class TimestepEmbedding(nn.Module):
    def __init__(self, d_model: int):
        super().__init__()
        self.d_model = d_model
        self.mlp = nn.Sequential(nn.Linear(d_model, d_model), nn.SiLU(), nn.Linear(d_model, d_model))

    def forward(self, steps):
        emb = sinusoidal_embedding(steps, self.d_model)
        return self.mlp(emb.to(self.mlp[0].weight.dtype))


class AffectEmbedding(nn.Module):
    """Emotion row plus intensity row, projected to the model width."""

    def __init__(self, n_emotions: int, max_intensity: int, d_model: int):
        super().__init__()
        self.emotion = nn.Embedding(n_emotions, d_model)
        self.intensity = nn.Embedding(max_intensity, d_model)
        self.proj = nn.Linear(d_model, d_model)

    def forward(self, emotion, intensity):
        if emotion.min() < 0 or emotion.max() >= self.emotion.num_embeddings:
            raise DataError(f"unknown emotion id in {emotion.tolist()}")
        if intensity.min() < 1 or intensity.max() > self.intensity.num_embeddings:
            raise DataError(f"intensity outside 1..{self.intensity.num_embeddings}")
        return self.proj(self.emotion(emotion) + self.intensity(intensity - 1))


class DecoderLayer(nn.Module):
    """Pre-norm block: self-attention, band-masked cross-attention, feed-forward."""

    def __init__(self, d_model, n_heads, ffn_dim, dropout):
        super().__init__()
        self.norm1 = nn.LayerNorm(d_model)
        self.self_attn = MultiHeadAttention(d_model, d_model, d_model, n_heads, dropout)
        self.norm2 = nn.LayerNorm(d_model)
        self.cross_attn = MultiHeadAttention(d_model, d_model, d_model, n_heads, dropout)
        self.norm3 = nn.LayerNorm(d_model)
        self.ffn = nn.Sequential(nn.Linear(d_model, ffn_dim), nn.GELU(), nn.Dropout(dropout),
                                 nn.Linear(ffn_dim, d_model))
        self.drop = nn.Dropout(dropout)

    def forward(self, z, memory, cross_bias):
        h = self.norm1(z)
        z = z + self.drop(self.self_attn(h, h)[0])
        z = z + self.drop(self.cross_attn(self.norm2(z), memory, cross_bias)[0])
        return z + self.drop(self.ffn(self.norm3(z)))


class Denoiser(nn.Module):
    """Predicts the clean displacement sequence from ``(x_l, l, audio, emotion, intensity)``."""

    def __init__(self, config: ATSConfig):
        super().__init__()
        self.config = config
        d = config.d_model
        self.w_x = nn.Linear(config.motion_dim, d)
        self.w_h = nn.Linear(config.audio_channels, d)
        self.pos_tgt = nn.Parameter(torch.randn(config.max_frames, d) * 0.02)
        self.pos_mem = nn.Parameter(torch.randn(config.max_frames, d) * 0.02)
        self.timestep = TimestepEmbedding(d)
        self.affect = AffectEmbedding(len(config.emotions), config.max_intensity, d)
        self.layers = nn.ModuleList(
            DecoderLayer(d, config.n_heads, config.ffn_dim, config.dropout) for _ in range(config.n_layers)
        )
        self.norm_out = nn.LayerNorm(d)
        self.head = nn.Linear(d, config.motion_dim)

    def embed_affect(self, emotion, intensity):
        return self.affect(torch.as_tensor(emotion).reshape(-1), torch.as_tensor(intensity).reshape(-1))

    def forward(self, x, steps, audio, emotion, intensity):
        B, T, D = x.shape
        if D != self.config.motion_dim:
            raise DataError(f"expected {self.config.motion_dim} motion channels, got {D}")
        if T > self.config.max_frames:
            raise DataError(f"{T} frames exceed the positional table ({self.config.max_frames})")
        if audio.shape[:2] != (B, T):
            raise DataError(f"audio has shape {tuple(audio.shape)}, expected ({B}, {T}, C)")
        z = self.w_x(x) + self.pos_tgt[:T]
        memory = self.w_h(audio) + self.pos_mem[:T]
        cond = self.timestep(steps) + self.affect(emotion, intensity)
        z = z + cond[:, None, :]
        bias = band_mask(T, T, self.config.band_radius).to(x.dtype)
        for layer in self.layers:
            z = layer(z, memory, bias)
        return self.head(self.norm_out(z))


def ats_loss(model: Denoiser, x0, audio, emotion, intensity, schedule: DiffusionSchedule,
             weights: LossWeights = ATS_WEIGHTS, generator: torch.Generator | None = None,
             steps=None, noise=None, reduce: bool = True, return_prediction: bool = False):
    """Diffusion training loss with ``l ~ U{1..T_d}`` and ``eps ~ N(0, I)`` drawn per item.

    ``steps``/``noise`` may be given explicitly to make the loss a deterministic
    function of the parameters. With ``return_prediction`` the ``x0`` estimate is
    returned alongside the loss.
    """
    if x0.shape[0] == 0:
        raise DataError("empty batch")
    B = x0.shape[0]
    if steps is None:
        steps = torch.randint(1, schedule.n_steps + 1, (B,), generator=generator)
    if noise is None:
        noise = torch.randn(x0.shape, generator=generator, dtype=x0.dtype)
    x_l = forward_diffuse(x0, steps, noise, schedule)
    x0_hat = model(x_l, steps, audio, emotion, intensity)
    B, T, D = x0.shape
    loss = motion_loss(x0.reshape(B, T, D // 3, 3), x0_hat.reshape(B, T, D // 3, 3), weights, reduce=reduce)
    return (loss, x0_hat) if return_prediction else loss
