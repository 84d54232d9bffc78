import numpy as np
import pytest
import torch

from freetalk.errors import ConfigError, DataError
from freetalk.mesh import Mesh, build_operators, landmark_graph_for
from freetalk.metrics import LossWeights
from freetalk.stm import STM, MeshTensors, STMConfig, stm_forward, stm_loss
from freetalk.stm.diffusion_net import LearnedTimeDiffusion
from conftest import grid_mesh
from gradcheck import directional_errors

N = 5


def bumpy(nx=8, ny=7, seed=0):
    m = grid_mesh(nx, ny, jitter=0.3, seed=seed)
    v = m.vertices.copy()
    v[:, 2] = 0.15 * np.sin(3 * v[:, 0]) * np.cos(2 * v[:, 1])
    return Mesh(v, m.faces)


def tensors(mesh, k=20, dtype=torch.float32):
    return MeshTensors.from_mesh(mesh, build_operators(mesh, spectral_k=k), dtype=dtype)


def small(fusion="gcn_ca_concat", **kw):
    cfg = dict(n_landmarks=N, feature_width=8, encoder_width=8, encoder_blocks=1, gcn_layers=2, gcn_hidden=8,
               pos_dim=4, landmark_dim=8, attn_dim=8, attn_heads=2, decoder_width=8, decoder_blocks=1,
               fusion=fusion, spectral_k=20, diffusion_time_init=1e-2)
    cfg.update(kw)
    torch.manual_seed(0)
    return STM(STMConfig(**cfg)).eval()


def displacements(B=3, seed=0):
    return torch.randn(B, N, 3, generator=torch.Generator().manual_seed(seed)) * 0.05


@pytest.fixture(scope="module")
def mesh():
    return bumpy()


@pytest.fixture(scope="module")
def mt(mesh):
    return tensors(mesh)


def test_config_validation():
    with pytest.raises(ConfigError):
        STMConfig(fusion="sum")
    with pytest.raises(ConfigError):
        STMConfig(decoder="conv")
    c = STMConfig(n_landmarks=4, feature_width=10, attn_dim=7)
    assert c.fused_width == 10 + 12 + 7
    assert STMConfig(n_landmarks=4, feature_width=10, attn_dim=7, fusion="ca").fused_width == 17
    assert STMConfig(n_landmarks=4, feature_width=10, attn_dim=7, fusion="concat").fused_width == 22


@pytest.mark.parametrize("fusion", ["gcn_ca_concat", "ca_concat", "ca", "concat"])
def test_shapes_per_fusion(fusion, mesh, mt):
    model = small(fusion)
    with torch.no_grad():
        out, alpha = model(mt, displacements(), return_attention=True)
    assert out.shape == (3, mesh.n_vertices, 3)
    if fusion == "concat":
        assert alpha is None and model.landmarks is None
    else:
        assert alpha.shape[-2:] == (mesh.n_vertices, N)
        torch.testing.assert_close(alpha.sum(-1), torch.ones(alpha.shape[:-1]), rtol=0, atol=1e-5)
    assert (model.landmarks is not None and model.landmarks.gcn is not None) == (fusion == "gcn_ca_concat")


def test_mlp_decoder(mesh, mt):
    model = small(decoder="mlp")
    with torch.no_grad():
        assert model(mt, displacements()).shape == (3, mesh.n_vertices, 3)


def test_wrong_landmark_count(mt):
    with pytest.raises(DataError):
        small()(mt, torch.zeros(1, N + 1, 3))


def test_cached_features_bitwise(mt):
    model = small()
    dl = displacements()
    with torch.no_grad():
        plain = model(mt, dl)
        cached = model(mt, dl, features=model.encode_mesh(mt))
    assert torch.equal(plain, cached)


def test_frames_are_independent(mesh, mt):
    model = small()
    dl = displacements(B=5).numpy()
    verts, dv = stm_forward(model, mesh, mt, dl, batch_frames=2)
    _, dv1 = stm_forward(model, mesh, mt, dl[3:4], batch_frames=1)
    np.testing.assert_allclose(dv[3], dv1[0], rtol=0, atol=1e-6)
    np.testing.assert_allclose(verts, mesh.vertices[None] + dv, atol=0)
    with pytest.raises(DataError):
        stm_forward(model, mesh, mt, dl[0])


def test_vertex_permutation_equivariance(mesh, mt):
    model = small()
    perm = np.random.default_rng(1).permutation(mesh.n_vertices)
    pm = mesh.permuted(perm)
    dl = displacements()
    with torch.no_grad():
        out = model(mt, dl)
        outp = model(tensors(pm), dl)
    torch.testing.assert_close(outp, out[:, perm], rtol=0, atol=1e-5)


def test_mesh_scale_invariance(mesh, mt):
    # geometry is normalized by the square root of the surface area
    model = small()
    dl = displacements()
    with torch.no_grad():
        out = model(mt, dl)
        scaled = model(tensors(Mesh(3.0 * mesh.vertices + 1.0, mesh.faces)), dl)
    torch.testing.assert_close(scaled, out, rtol=0, atol=1e-5)


def test_displacement_scale_homogeneity(mt):
    dl = displacements()
    a = small(displacement_scale=1.0)
    b = small(displacement_scale=4.0)
    with torch.no_grad():
        assert torch.equal(b(mt, 4.0 * dl), 4.0 * a(mt, dl))


def test_diffusion_preserves_constants(mt):
    layer = LearnedTimeDiffusion(2, 0.5)
    x = torch.full((1, mt.n_vertices, 2), 3.0)
    torch.testing.assert_close(layer(x, mt), x, rtol=0, atol=1e-4)


def test_diffusion_zero_time_projects_onto_basis(mesh):
    full = tensors(mesh, k=mesh.n_vertices, dtype=torch.float64)
    layer = LearnedTimeDiffusion(1, 0.0).double()
    x = torch.randn(1, mesh.n_vertices, 1, dtype=torch.float64)
    # a complete mass-orthonormal basis reproduces the input; the time is clamped at
    # 1e-8, which damps the top modes by about lambda_max * 1e-8
    bound = float(full.evals.max()) * 1e-8 * float(x.abs().max()) * 10
    torch.testing.assert_close(layer(x, full), x, rtol=0, atol=max(bound, 1e-10))


def test_position_only_loss_matches_direct(mesh):
    model = small().double()
    mt64 = tensors(mesh, dtype=torch.float64)
    dl = displacements(B=4).double()
    target = torch.randn(4, mesh.n_vertices, 3, generator=torch.Generator().manual_seed(9), dtype=torch.float64) * 0.01
    with torch.no_grad():
        loss = stm_loss(model, mt64, dl, target, LossWeights(0, 0))
        pred = model(mt64, dl).tolist()
    y = target.tolist()
    n = mesh.n_vertices
    direct = sum((pred[b][i][c] - y[b][i][c]) ** 2 for b in range(4) for i in range(n) for c in range(3)) / (4 * n)
    assert abs(float(loss) - direct) < 1e-10
    with pytest.raises(DataError):
        stm_loss(model, mt64, dl, target[:, :-1])


def test_landmark_relabeling_equivariance():
    # relabel the graph nodes and permute the positional table the same way
    torch.manual_seed(0)
    cfg = STMConfig(n_landmarks=N, gcn_hidden=8, pos_dim=4, landmark_dim=8, attn_dim=8, attn_heads=2,
                    feature_width=8)
    graph = landmark_graph_for(N)
    perm = np.array([3, 0, 4, 1, 2])
    a = STM(cfg, graph).double().eval()
    b = STM(cfg, graph.relabeled(perm)).double().eval()
    b.load_state_dict({k: v for k, v in a.state_dict().items() if k != "landmarks.gcn.norm_adj"}, strict=False)
    with torch.no_grad():
        b.landmarks.pos.copy_(a.landmarks.pos[perm])
        dl = displacements().double()
        fa, fb = a.encode_landmarks(dl), b.encode_landmarks(dl[:, perm])
        torch.testing.assert_close(fb, fa[:, perm], rtol=0, atol=1e-12)
        f = torch.randn(7, 8, dtype=torch.float64)
        # the attended vertex features do not depend on the landmark labelling
        torch.testing.assert_close(b.attend(f, fb)[0], a.attend(f, fa)[0], rtol=0, atol=1e-12)


def test_gradient_check():
    mesh = bumpy(6, 5)  # 30 vertices
    model = small(encoder_blocks=1, decoder_blocks=1)
    mt32, mt64 = tensors(mesh), tensors(mesh, dtype=torch.float64)
    dl = displacements(B=3)
    target = torch.randn(3, mesh.n_vertices, 3, generator=torch.Generator().manual_seed(4)) * 0.05

    def loss_fn(m):
        dt = next(m.parameters()).dtype
        return stm_loss(m, mt64 if dt == torch.float64 else mt32, dl.to(dt), target.to(dt))

    errs = directional_errors(model, loss_fn, n_directions=8)
    assert np.median(errs) < 1e-3, errs
