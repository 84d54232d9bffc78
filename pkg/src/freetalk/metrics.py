"""Motion loss and the evaluation metric suite.

Trajectories are ``(T, K, 3)`` arrays. ``motion_loss`` only uses slicing and
elementwise arithmetic, so it accepts numpy arrays and torch tensors alike.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .errors import DataError

ZERO_NORM = 1e-9


@dataclass(frozen=True)
class LossWeights:
    vel: float = 0.0
    acc: float = 0.0

    def __post_init__(self):
        if self.vel < 0 or self.acc < 0:
            raise ValueError("loss weights must be nonnegative")


ATS_WEIGHTS = LossWeights(0.3, 0.1)
STM_WEIGHTS = LossWeights(0.5, 0.2)


@dataclass
class MetricReport:
    lve: float
    mve: float
    fdd: float
    dtw: float
    dfd: float
    delta_m: float
    delta_cd: float

    def to_dict(self) -> dict:
        return {k: float(v) for k, v in asdict(self).items()}


def _sq_frame_norm(x):
    return (x ** 2).sum(-1).sum(-1)


def motion_loss(y, y_hat, weights: LossWeights = LossWeights(), reduce: bool = True):
    """Position + weighted velocity + weighted acceleration error.

    Each term sums squared per-frame norms over the ``3K`` coordinates and
    divides by (frames used) x K. Terms whose stencil does not fit in T
    frames contribute 0. Leading batch dimensions are averaged unless
    ``reduce`` is false.
    """
    if tuple(y.shape) != tuple(y_hat.shape):
        raise DataError(f"shape mismatch {tuple(y.shape)} vs {tuple(y_hat.shape)}")
    T, K = y.shape[-3], y.shape[-2]
    d = y - y_hat
    loss = _sq_frame_norm(d).sum(-1) / (T * K)
    if T >= 2 and weights.vel:
        v = d[..., 1:, :, :] - d[..., :-1, :, :]
        loss = loss + weights.vel * _sq_frame_norm(v).sum(-1) / ((T - 1) * K)
    if T >= 3 and weights.acc:
        a = d[..., 2:, :, :] - 2 * d[..., 1:-1, :, :] + d[..., :-2, :, :]
        loss = loss + weights.acc * _sq_frame_norm(a).sum(-1) / ((T - 2) * K)
    return loss.mean() if reduce and getattr(loss, "ndim", 0) else loss


def _pair(y, y_hat):
    y = np.asarray(y, dtype=np.float64)
    y_hat = np.asarray(y_hat, dtype=np.float64)
    if y.shape != y_hat.shape or y.ndim != 3 or y.shape[-1] != 3:
        raise DataError(f"expected matching (T, K, 3) trajectories, got {y.shape} and {y_hat.shape}")
    if y.shape[0] < 1:
        raise DataError("empty sequence")
    return y, y_hat


def _mask(mask, K):
    if mask is None:
        return np.arange(K)
    mask = np.asarray(mask)
    if mask.dtype == bool:
        mask = np.flatnonzero(mask)
    if mask.size == 0:
        raise DataError("empty vertex mask")
    return mask


def lve(y, y_hat, mouth_mask) -> float:
    """Per-frame max L2 error over mouth vertices, averaged over frames."""
    y, y_hat = _pair(y, y_hat)
    m = _mask(mouth_mask, y.shape[1])
    err = np.linalg.norm(y[:, m] - y_hat[:, m], axis=-1)
    return float(err.max(axis=1).mean())


def mve(y, y_hat) -> float:
    return lve(y, y_hat, None)


def fdd(y, y_hat, upper_mask, template) -> float:
    """Mean |std_t |Y_t - tpl| - std_t |Y^_t - tpl|| over upper-face vertices."""
    y, y_hat = _pair(y, y_hat)
    if y.shape[0] < 2:
        raise DataError("FDD needs at least two frames")
    m = _mask(upper_mask, y.shape[1])
    tpl = np.asarray(template, dtype=np.float64)[m]
    s_gt = np.linalg.norm(y[:, m] - tpl, axis=-1).std(axis=0)
    s_pr = np.linalg.norm(y_hat[:, m] - tpl, axis=-1).std(axis=0)
    return float(np.abs(s_gt - s_pr).mean())


def frame_distances(y, y_hat, lip_mask) -> np.ndarray:
    """Euclidean distances between stacked lip-vertex vectors, shape (T_gt, T_pred)."""
    y = np.asarray(y, dtype=np.float64)
    y_hat = np.asarray(y_hat, dtype=np.float64)
    if y.shape[0] == 0 or y_hat.shape[0] == 0:
        raise DataError("empty sequence")
    m = _mask(lip_mask, y.shape[1])
    a = y[:, m].reshape(y.shape[0], -1)
    b = y_hat[:, m].reshape(y_hat.shape[0], -1)
    return np.sqrt(np.maximum(((a[:, None, :] - b[None, :, :]) ** 2).sum(-1), 0.0))


def dtw(y, y_hat, lip_mask) -> float:
    """Dynamic time warping cost divided by the length of the optimal warping path.

    Among paths of minimal total cost, the shortest is used for normalization.
    """
    c = frame_distances(y, y_hat, lip_mask)
    n, m = c.shape
    cost = np.full((n + 1, m + 1), np.inf)
    length = np.zeros((n + 1, m + 1), dtype=np.int64)
    cost[0, 0] = 0.0
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            cands = ((cost[i - 1, j - 1], length[i - 1, j - 1]),
                     (cost[i - 1, j], length[i - 1, j]),
                     (cost[i, j - 1], length[i, j - 1]))
            best = min(cands)
            cost[i, j] = c[i - 1, j - 1] + best[0]
            length[i, j] = best[1] + 1
    return float(cost[n, m] / length[n, m])


def dfd(y, y_hat, lip_mask) -> float:
    """Discrete Frechet distance between the two lip trajectories."""
    c = frame_distances(y, y_hat, lip_mask)
    n, m = c.shape
    ca = np.empty((n, m))
    for i in range(n):
        for j in range(m):
            if i == 0 and j == 0:
                prev = 0.0
            elif i == 0:
                prev = ca[0, j - 1]
            elif j == 0:
                prev = ca[i - 1, 0]
            else:
                prev = min(ca[i - 1, j], ca[i - 1, j - 1], ca[i, j - 1])
            ca[i, j] = max(prev, c[i, j])
    return float(ca[n - 1, m - 1])


def _frame_deltas(y, y_hat):
    y, y_hat = _pair(y, y_hat)
    if y.shape[0] < 2:
        raise DataError("need at least two frames")
    return np.diff(y, axis=0), np.diff(y_hat, axis=0)


def delta_m(y, y_hat) -> float:
    """Mean squared norm of the difference between consecutive-frame displacements."""
    dy, dp = _frame_deltas(y, y_hat)
    return float(((dp - dy) ** 2).sum(-1).mean())


def delta_cd(y, y_hat) -> float:
    """Mean cosine distance between consecutive-frame displacement vectors.

    Vectors shorter than 1e-9 count as zero: two zeros give 0, one zero gives 1.
    """
    dy, dp = _frame_deltas(y, y_hat)
    ny = np.linalg.norm(dy, axis=-1)
    npr = np.linalg.norm(dp, axis=-1)
    zy, zp = ny < ZERO_NORM, npr < ZERO_NORM
    # 1 - cos(u, v) written as |u/|u| - v/|v||^2 / 2, which is exactly 0 for u == v
    uy = dy / np.where(zy, 1.0, ny)[..., None]
    up = dp / np.where(zp, 1.0, npr)[..., None]
    dist = np.clip(0.5 * ((uy - up) ** 2).sum(-1), 0.0, 2.0)
    dist = np.where(zy & zp, 0.0, np.where(zy | zp, 1.0, dist))
    return float(dist.mean())


def evaluate_pair(y, y_hat, template, mouth_mask, upper_mask, lip_mask) -> MetricReport:
    """All seven metrics for one aligned pair of vertex trajectories."""
    return MetricReport(
        lve=lve(y, y_hat, mouth_mask),
        mve=mve(y, y_hat),
        fdd=fdd(y, y_hat, upper_mask, template),
        dtw=dtw(y, y_hat, lip_mask),
        dfd=dfd(y, y_hat, lip_mask),
        delta_m=delta_m(y, y_hat),
        delta_cd=delta_cd(y, y_hat),
    )
