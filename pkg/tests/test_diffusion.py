import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from freetalk.ats import band_mask, ddim_sample, ddim_timesteps, forward_diffuse, make_schedule
from freetalk.errors import ConfigError, DataError, NumericalError


def test_single_step_schedule():
    s = make_schedule(1, 0.5)
    assert s.alpha_bars[1] == 0.5 and s.alpha_bars[0] == 1.0


def test_default_schedule():
    s = make_schedule()
    assert s.n_steps == 1000
    assert s.betas[0] == pytest.approx(1e-4) and s.betas[-1] == pytest.approx(0.02)
    assert np.all(np.diff(s.betas) > 0)
    assert np.all(np.diff(s.alpha_bars) < 0)
    direct = 1.0
    for k in range(1000):
        direct *= 1.0 - (1e-4 + k * (0.02 - 1e-4) / 999)
    assert s.alpha_bars[1000] == pytest.approx(direct, rel=1e-10)
    assert 0 < s.alpha_bars[1000] < 1e-4
    np.testing.assert_allclose(np.sqrt(s.alpha_bars) ** 2 + np.sqrt(1 - s.alpha_bars) ** 2, 1.0, atol=1e-12)


@pytest.mark.parametrize("args", [(0,), (10, 0.0, 0.02), (10, 0.02, 0.01), (10, 1e-4, 1.0), (1, 1.5)])
def test_schedule_errors(args):
    with pytest.raises(ConfigError):
        make_schedule(*args)


def test_forward_diffuse_cases():
    s = make_schedule(100)
    x0 = np.random.default_rng(0).normal(size=(4, 6))
    np.testing.assert_allclose(forward_diffuse(x0, 37, np.zeros_like(x0), s), math.sqrt(s.alpha_bars[37]) * x0)
    # the abar_0 = 1 boundary is the identity
    np.testing.assert_array_equal(forward_diffuse(x0, 0, np.ones_like(x0), s), x0)
    with pytest.raises(DataError):
        forward_diffuse(x0, 3, np.zeros((4, 5)), s)


def test_forward_diffuse_torch_per_item_steps():
    s = make_schedule(50)
    x0 = torch.randn(3, 5, 6, dtype=torch.float64)
    eps = torch.randn(3, 5, 6, dtype=torch.float64)
    steps = torch.tensor([1, 20, 50])
    out = forward_diffuse(x0, steps, eps, s)
    for b, l in enumerate(steps.tolist()):
        a = s.alpha_bars[l]
        torch.testing.assert_close(out[b], math.sqrt(a) * x0[b] + math.sqrt(1 - a) * eps[b])


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 100), st.sampled_from([0.25, 0.5, 2.0, 4.0, -8.0]), st.integers(0, 2 ** 31))
def test_forward_diffuse_linearity(step, a, seed):
    s = make_schedule(100)
    rng = np.random.default_rng(seed)
    x0, eps = rng.normal(size=(3, 4)), rng.normal(size=(3, 4))
    # powers of two scale exactly in binary floating point
    np.testing.assert_array_equal(forward_diffuse(a * x0, step, a * eps, s), a * forward_diffuse(x0, step, eps, s))


def test_forward_diffuse_monte_carlo_small():
    # full-size version lives in the acceptance suite
    s = make_schedule(1, 0.75)  # abar = 0.25
    x0 = np.array([1.0, -2.0, 0.5])
    eps = np.random.default_rng(0).normal(size=(20000, 3))
    xs = forward_diffuse(np.broadcast_to(x0, eps.shape), 1, eps, s)
    sigma = math.sqrt(0.75 / len(xs))
    assert np.all(np.abs(xs.mean(0) - 0.5 * x0) < 3 * sigma)
    assert np.all(np.abs(xs.var(0) / 0.75 - 1) < 0.05)


# ------------------------------------------------------------------ DDIM

def test_ddim_timesteps():
    t = ddim_timesteps(1000, 100)
    assert len(t) == 100 and t[0] == 1000 and t[-1] == 10
    assert np.all(np.diff(t) < 0)
    np.testing.assert_array_equal(ddim_timesteps(5, 5), [5, 4, 3, 2, 1])
    with pytest.raises(ConfigError):
        ddim_timesteps(10, 0)
    with pytest.raises(ConfigError):
        ddim_timesteps(10, 11)


@pytest.mark.parametrize("steps", [1, 7, 100])
def test_ddim_constant_denoiser_exact(steps):
    s = make_schedule(100)
    c = torch.full((2, 5, 3), 0.123456789)
    out = ddim_sample(lambda x, l: c, (2, 5, 3), s, steps, generator=torch.Generator().manual_seed(0))
    assert torch.equal(out, c)


def test_ddim_deterministic_and_noise_argument():
    s = make_schedule(100)
    den = lambda x, l: 0.5 * x  # noqa: E731
    a = ddim_sample(den, (1, 4, 3), s, 10, generator=torch.Generator().manual_seed(3))
    b = ddim_sample(den, (1, 4, 3), s, 10, generator=torch.Generator().manual_seed(3))
    assert torch.equal(a, b)
    noise = torch.randn((1, 4, 3), generator=torch.Generator().manual_seed(3))
    assert torch.equal(ddim_sample(den, None, s, 10, noise=noise), a)


def test_ddim_update_formula():
    # two steps by hand: T_d = 2, ddim_steps = 2 -> steps [2, 1], then lands on 0
    s = make_schedule(2, 0.1, 0.2)
    x = torch.tensor([[1.0]], dtype=torch.float64)
    den = lambda x, l: 0.5 * x  # noqa: E731
    out = ddim_sample(den, None, s, 2, noise=x.clone(), dtype=torch.float64)
    a2, a1 = s.alpha_bars[2], s.alpha_bars[1]
    xv = 1.0
    x0 = 0.5 * xv
    eps = (xv - math.sqrt(a2) * x0) / math.sqrt(1 - a2)
    xv = math.sqrt(a1) * x0 + math.sqrt(1 - a1) * eps
    assert float(out) == pytest.approx(0.5 * xv, rel=1e-12)


def test_ddim_nan_raises():
    s = make_schedule(10)
    with pytest.raises(NumericalError):
        ddim_sample(lambda x, l: x * float("nan"), (1, 2), s, 5)


# ------------------------------------------------------------------ band mask

def test_band_mask_pattern():
    allowed = band_mask(3, 3, 1) == 0
    assert allowed.tolist() == [[True, True, False], [True, True, True], [False, True, True]]
    assert torch.all(band_mask(4, 6, 6) == 0)
    assert band_mask(2, 2, 0)[0, 1] == -1e9
    with pytest.raises(ValueError):
        band_mask(2, 2, -1)


def test_band_mask_softmax_identity():
    logits = torch.randn(8, 8) * 10
    w = torch.softmax(logits + band_mask(8, 8, 0), dim=-1)
    assert torch.max(torch.abs(w - torch.eye(8))) < 1e-7


@settings(max_examples=20, deadline=None)
@given(st.integers(1, 12), st.integers(1, 12), st.integers(0, 4), st.integers(0, 2 ** 31))
def test_band_mask_leakage(T, S, r, seed):
    g = torch.Generator().manual_seed(seed)
    logits = torch.randn(T, S, generator=g) * 20
    w = torch.softmax(logits + band_mask(T, S, r), dim=-1)
    i = torch.arange(T)[:, None]
    j = torch.arange(S)[None, :]
    outside = (j - i).abs() > r
    rows_with_band = (~outside).any(dim=1)
    leak = (w * outside).sum(dim=1)[rows_with_band]
    assert torch.all(leak < 1e-7)
