import numpy as np
import pytest
import torch
from torch import nn

from freetalk.ats import ATSConfig, Denoiser, ats_loss, make_schedule
from freetalk.errors import DataError
from freetalk.metrics import LossWeights, motion_loss
from gradcheck import directional_errors


def tiny(**kw):
    cfg = dict(n_landmarks=4, audio_channels=5, d_model=16, n_layers=1, n_heads=2, ffn_dim=32,
               dropout=0.0, max_frames=32, band_radius=1, emotions=["neutral", "happy", "sad"], max_intensity=3)
    cfg.update(kw)
    torch.manual_seed(0)
    return Denoiser(ATSConfig(**cfg)).eval()


def inputs(B=2, T=6, N=4, C=5, seed=0, dtype=torch.float32):
    g = torch.Generator().manual_seed(seed)
    return (torch.randn(B, T, 3 * N, generator=g, dtype=dtype), torch.randint(1, 100, (B,), generator=g),
            torch.randn(B, T, C, generator=g, dtype=dtype), torch.tensor([0, 1] * (B // 2) + [2] * (B % 2)),
            torch.tensor([1, 3] * (B // 2) + [2] * (B % 2)))


def test_output_shape_and_determinism():
    m = tiny()
    x, l, a, e, i = inputs(B=3, T=7)
    out = m(x, l, a, e, i)
    assert out.shape == (3, 7, 12)
    assert torch.equal(out, m(x, l, a, e, i))


def test_input_errors():
    m = tiny()
    x, l, a, e, i = inputs(T=6)
    with pytest.raises(DataError):
        m(torch.zeros(2, 33, 12), l, torch.zeros(2, 33, 5), e, i)
    with pytest.raises(DataError):
        m(x, l, a, torch.tensor([0, 3]), i)
    with pytest.raises(DataError):
        m(x, l, a, e, torch.tensor([0, 1]))
    with pytest.raises(DataError):
        m(x[..., :9], l, a, e, i)
    with pytest.raises(DataError):
        m(x, l, a[:, :5], e, i)


def test_single_layer_cross_attention_locality():
    # with one layer, audio reaches frame t only through the band-masked cross-attention
    m = tiny(n_layers=1, band_radius=1)
    x, l, a, e, i = inputs(B=1, T=10)
    base = m(x, l, a, e, i)
    t = 5
    a2 = a.clone()
    far = [j for j in range(10) if abs(j - t) > 1]
    a2[:, far] += 10.0 * torch.randn(1, len(far), 5)
    out = m(x, l, a2, e, i)
    assert torch.max(torch.abs(out[0, t] - base[0, t])) <= 1e-6
    # and the perturbation does reach frames that see it
    assert torch.max(torch.abs(out[0, 0] - base[0, 0])) > 1e-3


def test_affect_embedding():
    m = tiny()
    with torch.no_grad():
        a = m.embed_affect(1, 2)
        assert torch.equal(a, m.embed_affect(1, 2))
        assert not torch.equal(a, m.embed_affect(2, 2))
        assert not torch.equal(a, m.embed_affect(1, 3))
        m.embed_affect(0, 1)  # neutral at intensity 1 is valid
    with pytest.raises(DataError):
        m.embed_affect(0, 4)


def test_batch_equivariance():
    m = tiny()
    x, l, a, e, i = inputs(B=4, T=5)
    perm = torch.tensor([2, 0, 3, 1])
    out = m(x, l, a, e, i)
    outp = m(x[perm], l[perm], a[perm], e[perm], i[perm])
    torch.testing.assert_close(outp, out[perm], rtol=0, atol=1e-6)


class Cheat(nn.Module):
    def __init__(self, x0):
        super().__init__()
        self.x0 = x0

    def forward(self, *_):
        return self.x0


def test_loss_zero_for_oracle_denoiser():
    x0, _, a, e, i = inputs()
    s = make_schedule(100)
    assert float(ats_loss(Cheat(x0), x0, a, e, i, s)) == 0.0


def test_loss_position_only_matches_direct():
    m = tiny().double()
    x0, _, a, e, i = inputs(B=2, T=5, dtype=torch.float64)
    s = make_schedule(100)
    steps = torch.tensor([7, 70])
    noise = torch.randn(x0.shape, generator=torch.Generator().manual_seed(1), dtype=torch.float64)
    with torch.no_grad():
        loss, pred = ats_loss(m, x0, a, e, i, s, LossWeights(0, 0), steps=steps, noise=noise, return_prediction=True)
        ab = [s.alpha_bars[int(l)] for l in steps]
        x_l = torch.stack([ab[b] ** 0.5 * x0[b] + (1 - ab[b]) ** 0.5 * noise[b] for b in range(2)])
        expected_pred = m(x_l, steps, a, e, i)
    torch.testing.assert_close(pred, expected_pred, rtol=0, atol=1e-12)
    p, y = pred.tolist(), x0.tolist()
    direct = sum((y[b][t][3 * k + c] - p[b][t][3 * k + c]) ** 2
                 for b in range(2) for t in range(5) for k in range(4) for c in range(3)) / (2 * 5 * 4)
    assert abs(float(loss) - direct) < 1e-10
    assert float(loss) >= 0


def test_loss_batch_permutation():
    m = tiny()
    x0, _, a, e, i = inputs(B=4, T=5)
    s = make_schedule(100)
    steps = torch.tensor([1, 30, 60, 100])
    noise = torch.randn(x0.shape, generator=torch.Generator().manual_seed(2))
    perm = torch.tensor([3, 1, 0, 2])
    with torch.no_grad():
        per = ats_loss(m, x0, a, e, i, s, steps=steps, noise=noise, reduce=False)
        perp = ats_loss(m, x0[perm], a[perm], e[perm], i[perm], s, steps=steps[perm], noise=noise[perm], reduce=False)
    torch.testing.assert_close(perp, per[perm], rtol=1e-6, atol=0)


def test_sampled_loss_uses_generator():
    m = tiny()
    x0, _, a, e, i = inputs()
    s = make_schedule(100)
    with torch.no_grad():
        a1 = ats_loss(m, x0, a, e, i, s, generator=torch.Generator().manual_seed(5))
        a2 = ats_loss(m, x0, a, e, i, s, generator=torch.Generator().manual_seed(5))
    assert float(a1) == float(a2)


def test_gradient_check_small():
    m = tiny(n_landmarks=4, d_model=16, n_layers=1)
    x0, _, a, e, i = inputs(B=2, T=4)
    s = make_schedule(100)
    steps = torch.tensor([10, 80])
    noise = torch.randn(x0.shape, generator=torch.Generator().manual_seed(3))

    def loss_fn(model):
        dt = next(model.parameters()).dtype
        return ats_loss(model, x0.to(dt), a.to(dt), e, i, s, steps=steps, noise=noise.to(dt))

    errs = directional_errors(m, loss_fn, n_directions=8)
    assert np.median(errs) < 1e-3, errs


def test_motion_loss_reshape_consistency():
    # the loss treats the 3N channels as N points of 3 coordinates
    x0, _, _, _, _ = inputs(B=1, T=4)
    y = x0.reshape(1, 4, 4, 3)
    assert float(motion_loss(y, torch.zeros_like(y), LossWeights(0, 0))) == pytest.approx(
        float((x0 ** 2).sum() / 16), rel=1e-6)
