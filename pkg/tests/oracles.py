"""Reference implementations written directly from the formulas, kept deliberately naive."""

import math

import numpy as np


def cos(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return float(a @ b / (np.linalg.norm(a) * np.linalg.norm(b)))


def first_order(anchor, positive, negatives, tau):
    pos = math.exp(cos(anchor, positive) / tau)
    negs = sum(math.exp(cos(anchor, n) / tau) for n in negatives)
    return -math.log(pos / (pos + negs))


def nce(anchor, positive, negatives, tau, K, Z):
    m = len(negatives)
    pn = 1.0 / K

    def q(x):
        return math.exp(cos(anchor, x) / tau) / Z

    value = -math.log(q(positive) / (q(positive) + m * pn))
    for n in negatives:
        value -= math.log(m * pn / (q(n) + m * pn))
    return value


def second_order(anchor, positive, second, negatives, tau):
    a, p = np.asarray(anchor, float), np.asarray(positive, float)
    step = p - a
    pos = math.exp(cos(step, np.asarray(second, float) - p) / tau)
    negs = sum(math.exp(cos(step, np.asarray(n, float) - p) / tau) for n in negatives)
    return -math.log(pos / (pos + negs))


def rotation_ce(logits, k):
    z = [float(x) for x in logits]
    return -z[k] + math.log(sum(math.exp(x) for x in z))


def select_negatives(sims, keys_video, anchor_video, n, r):
    """Admissible keys sorted by (-similarity, key); returns (mined prefix, how many random fills)."""
    cands = [(k, s) for k, (s, v) in enumerate(zip(sims, keys_video)) if v != anchor_video]
    eligible = sorted([(k, s) for k, s in cands if s <= r], key=lambda ks: (-ks[1], ks[0]))
    mined = [k for k, _ in eligible[:n]]
    return mined, n - len(mined), {k for k, s in cands if s > r}


def turning_angles(points):
    out = []
    for i in range(1, len(points) - 1):
        u = np.subtract(points[i], points[i - 1])
        v = np.subtract(points[i + 1], points[i])
        c = float(np.dot(u, v) / (np.linalg.norm(u) * np.linalg.norm(v)))
        out.append(math.acos(max(-1.0, min(1.0, c))))
    return out


def central_diff(f, x, h=1e-5):
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + h
        up = f(x)
        x[i] = old - h
        down = f(x)
        x[i] = old
        g[i] = (up - down) / (2 * h)
    return g


def rel_err(a, b):
    a, b = np.asarray(a, float), np.asarray(b, float)
    return float(np.max(np.abs(a - b)) / max(1e-8, np.max(np.abs(a)) + np.max(np.abs(b))))
