"""Sparse-to-mesh transfer: landmark displacements to dense per-vertex deformations."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
import torch
from torch import nn

from ..errors import ConfigError, DataError
from ..mesh import LandmarkGraph, Mesh, SurfaceOperators, landmark_graph_for
from ..metrics import STM_WEIGHTS, LossWeights, motion_loss
from ..nn import MultiHeadAttention
from .diffusion_net import DiffusionNet, MeshTensors, PointwiseMLP

FUSIONS = ("gcn_ca_concat", "ca_concat", "ca", "concat")
DECODERS = ("diffusion", "mlp")


@dataclass
class STMConfig:
    n_landmarks: int = 68
    feature_width: int = 128       # d_f, width of the static mesh features
    encoder_width: int = 128
    encoder_blocks: int = 4
    gcn_layers: int = 3
    gcn_hidden: int = 128
    gcn_bias: bool = True
    pos_dim: int = 32
    landmark_dim: int = 128        # width of the projected landmark features
    attn_dim: int = 128            # d_c
    attn_heads: int = 4
    decoder: str = "diffusion"
    decoder_width: int = 128
    decoder_blocks: int = 4
    fusion: str = "gcn_ca_concat"
    gradient_features: bool = False
    spectral_k: int = 128
    diffusion_time_init: float = 1e-3  # in area-normalized units
    displacement_scale: float = 1.0    # mesh units per network unit
    dropout: float = 0.0

    def __post_init__(self):
        if self.fusion not in FUSIONS:
            raise ConfigError(f"fusion must be one of {FUSIONS}")
        if self.decoder not in DECODERS:
            raise ConfigError(f"decoder must be one of {DECODERS}")

    @property
    def motion_dim(self) -> int:
        return 3 * self.n_landmarks

    @property
    def uses_attention(self) -> bool:
        return self.fusion != "concat"

    @property
    def uses_global(self) -> bool:
        return self.fusion in ("gcn_ca_concat", "ca_concat", "concat")

    @property
    def fused_width(self) -> int:
        return (self.feature_width + (self.motion_dim if self.uses_global else 0)
                + (self.attn_dim if self.uses_attention else 0))

    def to_json(self) -> dict:
        return asdict(self)


class GCN(nn.Module):
    """Stack of ``relu(A_hat H W + b)`` layers over a fixed normalized adjacency."""

    def __init__(self, norm_adj, in_dim, hidden, n_layers, bias=True):
        super().__init__()
        self.register_buffer("norm_adj", torch.as_tensor(np.asarray(norm_adj), dtype=torch.float32))
        dims = [in_dim] + [hidden] * n_layers
        self.layers = nn.ModuleList(nn.Linear(a, b, bias=bias) for a, b in zip(dims[:-1], dims[1:]))

    def forward(self, x):
        for layer in self.layers:
            x = torch.relu(layer(self.norm_adj.to(x.dtype) @ x))
        return x


class LandmarkEncoder(nn.Module):
    """Per-landmark features ``phi([gcn(dL)_j || p_j])``; with GCN off, ``dL_j`` stands in."""

    def __init__(self, config: STMConfig, norm_adj):
        super().__init__()
        self.gcn = (GCN(norm_adj, 3, config.gcn_hidden, config.gcn_layers, config.gcn_bias)
                    if config.fusion == "gcn_ca_concat" else None)
        width = config.gcn_hidden if self.gcn is not None else 3
        self.pos = nn.Parameter(torch.randn(config.n_landmarks, config.pos_dim))
        self.phi = nn.Linear(width + config.pos_dim, config.landmark_dim)

    def forward(self, dl):
        if dl.shape[-2] != self.pos.shape[0]:
            raise DataError(f"expected {self.pos.shape[0]} landmarks, got {dl.shape[-2]}")
        l = self.gcn(dl) if self.gcn is not None else dl
        p = self.pos.to(dl.dtype).expand(l.shape[:-1] + (self.pos.shape[1],))
        return self.phi(torch.cat([l, p], dim=-1)), l


class STM(nn.Module):
    def __init__(self, config: STMConfig, graph: LandmarkGraph | None = None, norm_adj=None):
        super().__init__()
        self.config = config
        if norm_adj is None:
            graph = graph or landmark_graph_for(config.n_landmarks)
            if graph.n_nodes != config.n_landmarks:
                raise ConfigError("landmark graph size does not match n_landmarks")
            norm_adj = graph.normalized_adjacency()
        self.encoder = DiffusionNet(6, config.feature_width, config.encoder_width, config.encoder_blocks,
                                    config.diffusion_time_init, config.gradient_features, config.dropout)
        self.landmarks = LandmarkEncoder(config, norm_adj) if config.uses_attention else None
        self.attention = (MultiHeadAttention(config.feature_width, config.landmark_dim, config.attn_dim,
                                             config.attn_heads, 0.0, d_out=config.attn_dim)
                          if config.uses_attention else None)
        net = PointwiseMLP if config.decoder == "mlp" else DiffusionNet
        self.decoder = net(config.fused_width, 3, width=config.decoder_width, n_blocks=config.decoder_blocks,
                           init_time=config.diffusion_time_init, gradient_features=config.gradient_features,
                           dropout=config.dropout)

    # -- stages -----------------------------------------------------------
    def encode_mesh(self, mt: MeshTensors):
        """Static per-vertex features (n x d_f) from normalized coordinates and normals."""
        return self.encoder(torch.cat([mt.vertices, mt.normals], dim=-1), mt)

    def encode_landmarks(self, dl):
        """``(B, N, 3)`` displacements (network units) to ``(B, N, d_l)`` features."""
        return self.landmarks(dl)[0]

    def attend(self, f, lt):
        """Cross-attention from vertex features (n x d_f) to landmark features (B x N x d_l)."""
        q = f.expand(lt.shape[0], -1, -1)
        return self.attention(q, lt)

    def fuse(self, f, g, c):
        """Rows ``[f_i || g || c_i]`` (terms dropped per the fusion variant)."""
        B = g.shape[0] if g is not None else c.shape[0]
        n = f.shape[0]
        parts = [f.expand(B, n, -1)]
        if self.config.uses_global:
            parts.append(g[:, None, :].expand(B, n, g.shape[-1]))
        if self.config.uses_attention:
            parts.append(c)
        return torch.cat(parts, dim=-1)

    def decode(self, fused, mt: MeshTensors):
        return self.decoder(fused, mt)

    # -- full pass --------------------------------------------------------
    def forward(self, mt: MeshTensors, dl, features=None, return_attention=False):
        """Dense displacements ``(B, n, 3)`` in mesh units for landmark displacements ``(B, N, 3)``.

        ``features`` may carry precomputed :meth:`encode_mesh` output for this mesh.
        """
        scale = self.config.displacement_scale
        x = dl / scale
        f = self.encode_mesh(mt) if features is None else features
        B = x.shape[0]
        g = x.reshape(B, -1)
        c = alpha = None
        if self.config.uses_attention:
            c, alpha = self.attend(f, self.encode_landmarks(x))
        out = self.decode(self.fuse(f, g, c), mt) * scale
        return (out, alpha) if return_attention else out


def stm_forward(model: STM, mesh: Mesh, mt: MeshTensors, dl_seq, batch_frames: int = 32,
                return_attention: bool = False):
    """Animate ``mesh`` with a ``(T, N, 3)`` landmark-displacement sequence.

    Returns ``(vertices (T, n, 3), displacements (T, n, 3))`` as numpy arrays, plus the
    per-frame attention maps when requested. Frames are independent.
    """
    dl = torch.as_tensor(np.asarray(dl_seq), dtype=mt.vertices.dtype)
    if dl.ndim != 3 or dl.shape[-1] != 3:
        raise DataError(f"expected (T, N, 3) displacements, got {tuple(dl.shape)}")
    outs, alphas = [], []
    with torch.no_grad():
        f = model.encode_mesh(mt)  # static: computed once, reused for every frame
        for s in range(0, dl.shape[0], batch_frames):
            res = model(mt, dl[s:s + batch_frames], features=f, return_attention=True)
            outs.append(res[0])
            if res[1] is not None:
                alphas.append(res[1])
    dv = torch.cat(outs).double().numpy() if outs else np.zeros((0, mesh.n_vertices, 3))
    verts = mesh.vertices[None] + dv
    if return_attention:
        return verts, dv, (torch.cat(alphas).numpy() if alphas else None)
    return verts, dv


def stm_loss(model: STM, mt: MeshTensors, dl, dv_true, weights: LossWeights = STM_WEIGHTS):
    """Motion loss (mesh units squared) on a window: ``dl`` (T, N, 3) in, ``dv_true`` (T, n, 3) target."""
    if dv_true.shape[-2] != mt.n_vertices:
        raise DataError("ground-truth frames do not match the mesh connectivity")
    return motion_loss(dv_true, model(mt, dl), weights)
