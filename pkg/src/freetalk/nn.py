"""Small torch building blocks shared by the two networks."""
from __future__ import annotations

import math

import torch
from torch import nn


class MultiHeadAttention(nn.Module):
    """Scaled dot-product attention with an optional additive bias on the logits.

    Each head uses ``d_model // n_heads`` channels and the ``1/sqrt(head_dim)`` scale.
    ``forward`` returns the projected output and the attention weights averaged over heads.
    """

    def __init__(self, d_query: int, d_kv: int, d_model: int, n_heads: int, dropout: float = 0.0,
                 d_out: int | None = None):
        super().__init__()
        if d_model % n_heads:
            raise ValueError(f"d_model={d_model} not divisible by n_heads={n_heads}")
        self.n_heads = n_heads
        self.head_dim = d_model // n_heads
        self.w_q = nn.Linear(d_query, d_model)
        self.w_k = nn.Linear(d_kv, d_model)
        self.w_v = nn.Linear(d_kv, d_model)
        self.w_o = nn.Linear(d_model, d_out or d_model)
        self.dropout = nn.Dropout(dropout)

    def _split(self, x):
        b, t, _ = x.shape
        return x.view(b, t, self.n_heads, self.head_dim).transpose(1, 2)

    def forward(self, query, key_value, bias=None):
        q = self._split(self.w_q(query))
        k = self._split(self.w_k(key_value))
        v = self._split(self.w_v(key_value))
        logits = q @ k.transpose(-1, -2) / math.sqrt(self.head_dim)
        if bias is not None:
            logits = logits + bias
        weights = torch.softmax(logits, dim=-1)
        ctx = self.dropout(weights) @ v
        b, h, t, d = ctx.shape
        out = self.w_o(ctx.transpose(1, 2).reshape(b, t, h * d))
        return out, weights.mean(dim=1)


def sinusoidal_embedding(steps: torch.Tensor, dim: int, max_period: float = 10000.0) -> torch.Tensor:
    half = dim // 2
    freqs = torch.exp(-math.log(max_period) * torch.arange(half, dtype=torch.float32) / half)
    args = steps.float()[:, None] * freqs[None, :].to(steps.device)
    emb = torch.cat([torch.cos(args), torch.sin(args)], dim=-1)
    if dim % 2:
        emb = torch.cat([emb, torch.zeros_like(emb[:, :1])], dim=-1)
    return emb
