"""Slow, obviously-correct reference implementations used as test oracles.

Everything here loops over frames and coordinates explicitly and shares no code
with the library.
"""
import math


def _dist(a, b):
    return math.sqrt(sum((x - y) ** 2 for x, y in zip(a, b)))


def _flat(frame, mask):
    return [c for k in mask for c in frame[k]]


def monotone_paths(n, m):
    """All warping paths from (0, 0) to (n-1, m-1) with unit steps right/down/diagonal."""
    out = []

    def walk(i, j, path):
        path.append((i, j))
        if i == n - 1 and j == m - 1:
            out.append(list(path))
        else:
            if i + 1 < n and j + 1 < m:
                walk(i + 1, j + 1, path)
            if i + 1 < n:
                walk(i + 1, j, path)
            if j + 1 < m:
                walk(i, j + 1, path)
        path.pop()

    walk(0, 0, [])
    return out


def _cell_costs(y, y_hat, mask):
    a = [_flat(f, mask) for f in y]
    b = [_flat(f, mask) for f in y_hat]
    return [[_dist(u, v) for v in b] for u in a]


def dtw_bruteforce(y, y_hat, mask):
    c = _cell_costs(y, y_hat, mask)
    best = None
    for path in monotone_paths(len(c), len(c[0])):
        cost = 0.0
        for i, j in path:
            cost += c[i][j]
        key = (cost, len(path))
        if best is None or key < best:
            best = key
    return best[0] / best[1]


def dfd_bruteforce(y, y_hat, mask):
    c = _cell_costs(y, y_hat, mask)
    return min(max(c[i][j] for i, j in path) for path in monotone_paths(len(c), len(c[0])))


def motion_loss_direct(y, y_hat, lv, la):
    T, K = len(y), len(y[0])
    d = [[[y[t][k][c] - y_hat[t][k][c] for c in range(3)] for k in range(K)] for t in range(T)]
    pos = sum(d[t][k][c] ** 2 for t in range(T) for k in range(K) for c in range(3)) / (T * K)
    vel = acc = 0.0
    if T >= 2:
        vel = sum((d[t][k][c] - d[t - 1][k][c]) ** 2
                  for t in range(1, T) for k in range(K) for c in range(3)) / ((T - 1) * K)
    if T >= 3:
        acc = sum((d[t][k][c] - 2 * d[t - 1][k][c] + d[t - 2][k][c]) ** 2
                  for t in range(2, T) for k in range(K) for c in range(3)) / ((T - 2) * K)
    return pos + lv * vel + la * acc


def lve_direct(y, y_hat, mask):
    per_frame = [max(_dist(y[t][k], y_hat[t][k]) for k in mask) for t in range(len(y))]
    return sum(per_frame) / len(per_frame)


def mve_direct(y, y_hat):
    return lve_direct(y, y_hat, range(len(y[0])))


def fdd_direct(y, y_hat, mask, template):
    T = len(y)
    total = 0.0
    for k in mask:
        def std(seq):
            mags = [_dist(seq[t][k], template[k]) for t in range(T)]
            mu = sum(mags) / T
            return math.sqrt(sum((x - mu) ** 2 for x in mags) / T)
        total += abs(std(y) - std(y_hat))
    return total / len(mask)


def delta_m_direct(y, y_hat):
    T, K = len(y), len(y[0])
    acc = 0.0
    for t in range(1, T):
        for k in range(K):
            acc += sum(((y_hat[t][k][c] - y_hat[t - 1][k][c]) - (y[t][k][c] - y[t - 1][k][c])) ** 2
                       for c in range(3))
    return acc / ((T - 1) * K)


def delta_cd_direct(y, y_hat, zero=1e-9):
    T, K = len(y), len(y[0])
    acc = 0.0
    for t in range(1, T):
        for k in range(K):
            u = [y[t][k][c] - y[t - 1][k][c] for c in range(3)]
            v = [y_hat[t][k][c] - y_hat[t - 1][k][c] for c in range(3)]
            nu, nv = _dist(u, [0, 0, 0]), _dist(v, [0, 0, 0])
            if nu < zero and nv < zero:
                acc += 0.0
            elif nu < zero or nv < zero:
                acc += 1.0
            else:
                cos = sum(a * b for a, b in zip(u, v)) / (nu * nv)
                acc += 1.0 - max(-1.0, min(1.0, cos))
    return acc / ((T - 1) * K)
