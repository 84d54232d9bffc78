import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from freetalk.errors import DataError
from freetalk.metrics import (ATS_WEIGHTS, STM_WEIGHTS, LossWeights, delta_cd, delta_m, dfd, dtw,
                              evaluate_pair, fdd, frame_distances, lve, motion_loss, mve)
from oracles import (delta_cd_direct, delta_m_direct, dfd_bruteforce, dtw_bruteforce, fdd_direct,
                     lve_direct, monotone_paths, motion_loss_direct)


def pair(seed, T=None, K=None, T2=None):
    rng = np.random.default_rng(seed)
    T = T or int(rng.integers(1, 9))
    K = K or int(rng.integers(1, 7))
    return rng.normal(size=(T, K, 3)), rng.normal(size=(T2 or T, K, 3))


def test_weights():
    assert (ATS_WEIGHTS.vel, ATS_WEIGHTS.acc) == (0.3, 0.1)
    assert (STM_WEIGHTS.vel, STM_WEIGHTS.acc) == (0.5, 0.2)
    with pytest.raises(ValueError):
        LossWeights(-1, 0)


# ------------------------------------------------------------------ motion loss

def test_motion_loss_identity_and_offset():
    y, _ = pair(0, T=5, K=4)
    assert motion_loss(y, y, ATS_WEIGHTS) == 0.0
    delta = np.array([0.3, -0.2, 0.5])
    # per-point constant offset: velocity and acceleration terms vanish
    assert motion_loss(y, y + delta, LossWeights(0.7, 0.9)) == pytest.approx((delta ** 2).sum(), rel=1e-12)


def test_motion_loss_hand_case():
    y = np.array([[[0.0, 0, 0]], [[1.0, 0, 0]], [[0.0, 2, 0]]])
    y_hat = np.zeros_like(y)
    # pos: (0 + 1 + 4)/3; vel: (1 + 5)/2; acc: |(0,2,0) - 2(1,0,0)|^2 = 8
    expected = 5 / 3 + 0.3 * 3 + 0.1 * 8
    assert motion_loss(y, y_hat, ATS_WEIGHTS) == pytest.approx(expected, abs=1e-12)
    assert motion_loss_direct(y.tolist(), y_hat.tolist(), 0.3, 0.1) == pytest.approx(expected, abs=1e-12)


@pytest.mark.parametrize("seed", range(20))
def test_motion_loss_matches_direct(seed):
    y, y_hat = pair(seed)
    for w in (LossWeights(), ATS_WEIGHTS, STM_WEIGHTS):
        assert motion_loss(y, y_hat, w) == pytest.approx(
            motion_loss_direct(y.tolist(), y_hat.tolist(), w.vel, w.acc), abs=1e-10)


def test_motion_loss_short_sequences():
    y, y_hat = pair(3, T=1, K=2)
    assert motion_loss(y, y_hat, LossWeights(5, 5)) == pytest.approx(((y - y_hat) ** 2).sum() / 2)


def test_motion_loss_batched_and_torch():
    rng = np.random.default_rng(4)
    y, y_hat = rng.normal(size=(3, 6, 4, 3)), rng.normal(size=(3, 6, 4, 3))
    per = motion_loss(y, y_hat, ATS_WEIGHTS, reduce=False)
    assert per.shape == (3,)
    np.testing.assert_allclose(per, [motion_loss(y[b], y_hat[b], ATS_WEIGHTS) for b in range(3)])
    t = motion_loss(torch.as_tensor(y), torch.as_tensor(y_hat), ATS_WEIGHTS)
    assert float(t) == pytest.approx(per.mean(), rel=1e-12)
    # batch permutation permutes the per-item values exactly
    perm = [2, 0, 1]
    np.testing.assert_array_equal(motion_loss(y[perm], y_hat[perm], ATS_WEIGHTS, reduce=False), per[perm])
    with pytest.raises(DataError):
        motion_loss(y, y_hat[:, :5])


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10 ** 6), st.floats(0.01, 100.0))
def test_homogeneity(seed, s):
    y, y_hat = pair(seed, T=5, K=3)
    mask = [0, 2]
    assert motion_loss(s * y, s * y_hat, ATS_WEIGHTS) == pytest.approx(s ** 2 * motion_loss(y, y_hat, ATS_WEIGHTS), rel=1e-9)
    assert lve(s * y, s * y_hat, mask) == pytest.approx(s * lve(y, y_hat, mask), rel=1e-9)
    assert mve(s * y, s * y_hat) == pytest.approx(s * mve(y, y_hat), rel=1e-9)
    assert delta_m(s * y, s * y_hat) == pytest.approx(s ** 2 * delta_m(y, y_hat), rel=1e-9)
    assert delta_cd(s * y, s * y_hat) == pytest.approx(delta_cd(y, y_hat), abs=1e-9)


# ------------------------------------------------------------------ LVE / MVE / FDD

def test_lve_hand_case():
    y = np.zeros((2, 3, 3))
    y_hat = y.copy()
    y_hat[0, 1, 0] = 2.0
    assert lve(y, y_hat, [1, 2]) == 1.0
    assert lve(2.5 * y, 2.5 * y_hat, [1, 2]) == 2.5


def test_mve_cases():
    y = np.zeros((4, 5, 3))
    y_hat = y.copy()
    y_hat[:, 3, 2] = 3.0
    assert mve(y, y_hat) == 3.0
    y, y_hat = pair(5, T=6, K=5)
    per_frame_mean = np.linalg.norm(y - y_hat, axis=-1).mean()
    assert mve(y, y_hat) >= per_frame_mean


@pytest.mark.parametrize("seed", range(10))
def test_lve_fdd_match_direct(seed):
    y, y_hat = pair(seed, T=int(np.random.default_rng(seed).integers(2, 9)))
    K = y.shape[1]
    mask = list(range(0, K, 2))
    tpl = np.random.default_rng(seed + 100).normal(size=(K, 3))
    assert lve(y, y_hat, mask) == pytest.approx(lve_direct(y, y_hat, mask), abs=1e-10)
    assert fdd(y, y_hat, mask, tpl) == pytest.approx(fdd_direct(y, y_hat, mask, tpl), abs=1e-10)


def test_fdd_cases():
    tpl = np.zeros((1, 3))
    static_a = np.ones((4, 1, 3))
    static_b = 2 * np.ones((4, 1, 3))
    assert fdd(static_a, static_b, [0], tpl) == 0.0
    # 2 frames, 1 vertex: magnitudes {0, 2} vs {1, 1}: std 1 vs 0
    y = np.array([[[0.0, 0, 0]], [[2.0, 0, 0]]])
    y_hat = np.array([[[1.0, 0, 0]], [[0.0, 1, 0]]])
    assert fdd(y, y_hat, [0], tpl) == 1.0


def test_mask_errors():
    y, y_hat = pair(1, T=3, K=4)
    with pytest.raises(DataError):
        lve(y, y_hat, [])
    with pytest.raises(DataError):
        fdd(y, y_hat, np.zeros(4, bool), np.zeros((4, 3)))
    with pytest.raises(DataError):
        fdd(y[:1], y_hat[:1], [0], np.zeros((4, 3)))
    with pytest.raises(DataError):
        dtw(y, y_hat, [])


# ------------------------------------------------------------------ DTW / DFD

def test_monotone_path_count():
    # Delannoy numbers
    assert len(monotone_paths(3, 3)) == 13
    assert len(monotone_paths(1, 5)) == 1


@pytest.mark.parametrize("seed", range(25))
def test_dtw_dfd_match_bruteforce(seed):
    rng = np.random.default_rng(seed)
    T1, T2, K = int(rng.integers(1, 8)), int(rng.integers(1, 8)), int(rng.integers(1, 5))
    y, y_hat = rng.normal(size=(T1, K, 3)), rng.normal(size=(T2, K, 3))
    mask = list(range(K))
    assert dtw(y, y_hat, mask) == pytest.approx(dtw_bruteforce(y, y_hat, mask), abs=1e-9)
    assert dfd(y, y_hat, mask) == pytest.approx(dfd_bruteforce(y, y_hat, mask), abs=1e-9)


def test_dtw_tie_breaking_prefers_short_path():
    # all frames identical: every path has cost 0 -> 0 regardless; make a tie with positive cost
    y = np.zeros((2, 1, 3))
    y_hat = np.zeros((2, 1, 3))
    y[:, 0, 0] = 1.0
    # cost 1 everywhere: diagonal path (length 2) costs 2, the others (length 3) cost 3
    assert dtw(y, y_hat, [0]) == pytest.approx(1.0)


def test_single_frame_pointwise():
    y, y_hat = pair(2, T=1, K=2)
    d = np.linalg.norm((y - y_hat).ravel())
    assert dtw(y, y_hat, [0, 1]) == pytest.approx(d)
    assert dfd(y, y_hat, [0, 1]) == pytest.approx(d)


def test_dfd_is_max_along_optimal_coupling():
    y, y_hat = pair(8, T=5, K=2, T2=6)
    c = frame_distances(y, y_hat, [0, 1])
    best = min(monotone_paths(5, 6), key=lambda p: max(c[i, j] for i, j in p))
    assert dfd(y, y_hat, [0, 1]) == max(c[i, j] for i, j in best)


# ------------------------------------------------------------------ delta metrics

@pytest.mark.parametrize("seed", range(10))
def test_delta_metrics_match_direct(seed):
    y, y_hat = pair(seed, T=int(np.random.default_rng(seed).integers(2, 9)))
    assert delta_m(y, y_hat) == pytest.approx(delta_m_direct(y, y_hat), abs=1e-10)
    assert delta_cd(y, y_hat) == pytest.approx(delta_cd_direct(y, y_hat), abs=1e-10)


def test_delta_cases():
    y, _ = pair(3, T=4, K=3)
    assert delta_m(y, y + 5.0) == pytest.approx(0.0, abs=1e-24)
    # exact opposite motion
    opp = y[0] - (y - y[0])
    assert delta_cd(y, opp) == pytest.approx(2.0)
    static = np.repeat(y[:1], 4, axis=0)
    assert delta_cd(y, static) == 1.0
    assert delta_cd(static, static) == 0.0
    # hand case: T=3, K=1
    y = np.array([[[0.0, 0, 0]], [[1.0, 0, 0]], [[1.0, 1, 0]]])
    p = np.array([[[0.0, 0, 0]], [[0.0, 1, 0]], [[0.0, 1, 0]]])
    assert delta_m(y, p) == pytest.approx((2 + 1) / 2)
    assert delta_cd(y, p) == pytest.approx((1.0 + 1.0) / 2)


def test_evaluate_pair_identity_is_zero():
    y, _ = pair(9, T=5, K=6)
    rep = evaluate_pair(y, y, y[0], [0, 1], [2, 3], [4, 5])
    assert all(v == 0.0 for v in rep.to_dict().values())
