"""Naive scalar-loop complex-arithmetic oracles shared by several test modules."""

import numpy as np


def naive_complex_conv(x, w, stride, pad):
    """Sliding-window complex cross-correlation; x (N, H, W, C), w (kh, kw, C, O)."""
    n, h, wd, c = x.shape
    kh, kw, _, o = w.shape
    xp = np.pad(x, ((0, 0), (pad[0], pad[0]), (pad[1], pad[1]), (0, 0)))
    ho = (h + 2 * pad[0] - kh) // stride[0] + 1
    wo = (wd + 2 * pad[1] - kw) // stride[1] + 1
    out = np.zeros((n, ho, wo, o), complex)
    for b in range(n):
        for i in range(ho):
            for j in range(wo):
                for q in range(o):
                    acc = 0j
                    for di in range(kh):
                        for dj in range(kw):
                            for ch in range(c):
                                acc += w[di, dj, ch, q] * xp[b, i * stride[0] + di, j * stride[1] + dj, ch]
                    out[b, i, j, q] = acc
    return out


def naive_matmul(a, b):
    n, m = a.shape
    _, p = b.shape
    out = np.zeros((n, p), complex)
    for i in range(n):
        for j in range(p):
            for k in range(m):
                out[i, j] += a[i, k] * b[k, j]
    return out


def scm_loop(mask, y):
    """Per-frame accumulation: y (U, T, F), mask (T, F) -> (F, U, U)."""
    u, t, f = y.shape
    out = np.zeros((f, u, u), complex)
    for k in range(f):
        num = np.zeros((u, u), complex)
        den = 0.0
        for n in range(t):
            v = mask[n, k] * y[:, n, k]
            num += np.outer(v, np.conj(v))
            den += abs(mask[n, k]) ** 2
        out[k] = num / den
    return out
