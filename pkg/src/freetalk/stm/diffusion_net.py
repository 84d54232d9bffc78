"""Intrinsic surface network built from learned heat diffusion (DiffusionNet-style).

Diffusion is applied in a truncated Laplace-Beltrami eigenbasis with the filter
``1 / (1 + t * lambda)``, one learned time ``t`` per channel.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from ..mesh import Mesh, SurfaceOperators


def _sparse(m, dtype):
    m = m.tocoo()
    idx = torch.from_numpy(np.vstack([m.row, m.col]).astype(np.int64))
    return torch.sparse_coo_tensor(idx, torch.from_numpy(m.data).to(dtype), m.shape,
                                   check_invariants=True).coalesce()


@dataclass
class MeshTensors:
    """Per-mesh tensors consumed by the network; build once per mesh and reuse."""

    vertices: torch.Tensor   # n x 3, centred and area-normalized
    normals: torch.Tensor    # n x 3
    mass: torch.Tensor       # n
    evals: torch.Tensor      # k
    evecs: torch.Tensor      # n x k
    grad_x: torch.Tensor | None = None
    grad_y: torch.Tensor | None = None
    scale: float = 1.0       # mesh units per normalized unit

    @property
    def n_vertices(self) -> int:
        return self.vertices.shape[0]

    @classmethod
    def from_mesh(cls, mesh: Mesh, ops: SurfaceOperators, dtype=torch.float32) -> "MeshTensors":
        if ops.evecs is None:
            raise ValueError("operators need a spectral basis (build_operators(..., spectral_k=k))")
        area = ops.mass.sum()
        scale = float(np.sqrt(area))
        centre = (ops.mass[:, None] * mesh.vertices).sum(0) / area
        verts = (mesh.vertices - centre) / scale
        # rescale the operators to the normalized geometry: mass ~ length^2, evals ~ length^-2
        mass = ops.mass / scale ** 2
        evals = ops.evals * scale ** 2
        evecs = ops.evecs * scale
        t = lambda a: torch.as_tensor(np.ascontiguousarray(a), dtype=dtype)
        gx = gy = None
        if ops.grad_x is not None:
            gx = _sparse(ops.grad_x * scale, dtype)
            gy = _sparse(ops.grad_y * scale, dtype)
        return cls(t(verts), t(ops.normals), t(mass), t(evals), t(evecs), gx, gy, scale)


class LearnedTimeDiffusion(nn.Module):
    def __init__(self, channels: int, init_time: float):
        super().__init__()
        self.time = nn.Parameter(torch.full((channels,), float(init_time)))

    def forward(self, x, mt: MeshTensors):
        t = self.time.clamp(min=1e-8)
        coef = torch.einsum("nk,bnc->bkc", mt.evecs * mt.mass[:, None], x)
        filt = 1.0 / (1.0 + mt.evals[:, None] * t[None, :])
        return torch.einsum("nk,bkc->bnc", mt.evecs, coef * filt)


class SpatialGradientFeatures(nn.Module):
    """``tanh(Re(conj(g) * A g))`` for tangent gradients ``g`` and a learned complex ``A``."""

    def __init__(self, channels: int):
        super().__init__()
        self.a_re = nn.Linear(channels, channels, bias=False)
        self.a_im = nn.Linear(channels, channels, bias=False)

    def forward(self, gx, gy):
        bx = self.a_re(gx) - self.a_im(gy)
        by = self.a_re(gy) + self.a_im(gx)
        return torch.tanh(gx * bx + gy * by)


def _apply_sparse(mat, x):
    B, n, C = x.shape
    flat = x.permute(1, 0, 2).reshape(n, B * C)
    return torch.sparse.mm(mat, flat).reshape(n, B, C).permute(1, 0, 2)


class DiffusionNetBlock(nn.Module):
    def __init__(self, width: int, init_time: float, gradient_features: bool = False, dropout: float = 0.0):
        super().__init__()
        self.diffusion = LearnedTimeDiffusion(width, init_time)
        self.gradient = SpatialGradientFeatures(width) if gradient_features else None
        n_in = 3 * width if gradient_features else 2 * width
        self.mlp = nn.Sequential(
            nn.Linear(n_in, width), nn.ReLU(), nn.Dropout(dropout), nn.Linear(width, width),
        )

    def forward(self, x, mt: MeshTensors):
        xd = self.diffusion(x, mt)
        feats = [x, xd]
        if self.gradient is not None:
            if mt.grad_x is None:
                raise ValueError("gradient features need operators built with gradients=True")
            feats.append(self.gradient(_apply_sparse(mt.grad_x, xd), _apply_sparse(mt.grad_y, xd)))
        return x + self.mlp(torch.cat(feats, dim=-1))


class DiffusionNet(nn.Module):
    def __init__(self, in_channels: int, out_channels: int, width: int = 128, n_blocks: int = 4,
                 init_time: float = 1e-3, gradient_features: bool = False, dropout: float = 0.0):
        super().__init__()
        self.first = nn.Linear(in_channels, width)
        self.blocks = nn.ModuleList(
            DiffusionNetBlock(width, init_time, gradient_features, dropout) for _ in range(n_blocks)
        )
        self.last = nn.Linear(width, out_channels)

    def forward(self, x, mt: MeshTensors):
        squeeze = x.ndim == 2
        if squeeze:
            x = x[None]
        h = self.first(x)
        for block in self.blocks:
            h = block(h, mt)
        out = self.last(h)
        return out[0] if squeeze else out


class PointwiseMLP(nn.Module):
    """Per-vertex decoder that ignores the surface (the noisy baseline)."""

    def __init__(self, in_channels: int, out_channels: int, width: int = 128, n_blocks: int = 4, **_):
        super().__init__()
        layers = [nn.Linear(in_channels, width), nn.ReLU()]
        for _ in range(n_blocks - 1):
            layers += [nn.Linear(width, width), nn.ReLU()]
        layers.append(nn.Linear(width, out_channels))
        self.net = nn.Sequential(*layers)

    def forward(self, x, mt: MeshTensors = None):
        return self.net(x)
