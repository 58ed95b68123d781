"""Independent brute-force reference implementations.

Everything here is written with explicit Python loops and no calls into
mpbench numerics, so agreement with the package is a real cross-check.
"""
import math


def conv3d_loops(x, kernel, bias):
    """x (Ci,T,H,W), kernel (Co,Ci,3,3,3): zero-padded, stride 1."""
    ci_n, T, H, W = x.shape
    co_n = kernel.shape[0]
    out = [[[[0.0] * W for _ in range(H)] for _ in range(T)] for _ in range(co_n)]
    for co in range(co_n):
        for t in range(T):
            for h in range(H):
                for w in range(W):
                    acc = float(bias[co])
                    for ci in range(ci_n):
                        for a in range(3):
                            tt = t + a - 1
                            if not 0 <= tt < T:
                                continue
                            for b in range(3):
                                hh = h + b - 1
                                if not 0 <= hh < H:
                                    continue
                                for c in range(3):
                                    ww = w + c - 1
                                    if 0 <= ww < W:
                                        acc += float(kernel[co, ci, a, b, c]) * float(x[ci, tt, hh, ww])
                    out[co][t][h][w] = acc
    return out


def temporal_diffs_loops(x):
    T, C, H, W = x.shape
    out = [0.0]
    for t in range(1, T):
        s = 0.0
        for c in range(C):
            for h in range(H):
                for w in range(W):
                    d = float(x[t, c, h, w]) - float(x[t - 1, c, h, w])
                    s += d * d
        out.append(math.sqrt(s / (C * H * W)))
    return out


def channel_descriptors_loops(x):
    T, C, H, W = x.shape
    out = []
    for c in range(C):
        s = 0.0
        for t in range(T):
            for h in range(H):
                for w in range(W):
                    s += float(x[t, c, h, w])
        out.append(s / (T * H * W))
    return out


def tgca_weights_loops(v, y, weight, bias):
    L, D = len(y), len(y[0])
    C = len(v)
    P = [[float(bias[c]) + sum(float(y[l][d]) * float(weight[d][c]) for d in range(D))
          for c in range(C)] for l in range(L)]
    logits = [sum(float(v[c]) * P[l][c] for c in range(C)) / math.sqrt(C) for l in range(L)]
    m = max(logits)
    e = [math.exp(z - m) for z in logits]
    alpha = [z / sum(e) for z in e]
    s = [sum(alpha[l] * P[l][c] for l in range(L)) for c in range(C)]
    return [1.0 / (1.0 + math.exp(-z)) for z in s]


def max_abs_diff(a, b):
    def flat(z):
        if hasattr(z, "ravel"):
            return [float(q) for q in z.ravel()]
        if isinstance(z, (list, tuple)):
            return [q for item in z for q in flat(item)]
        return [float(z)]
    fa, fb = flat(a), flat(b)
    assert len(fa) == len(fb)
    return max((abs(p - q) for p, q in zip(fa, fb)), default=0.0)
