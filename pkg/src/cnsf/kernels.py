"""Hot inner loops with a numba path and a pure-numpy fallback.

The numba path is used when numba imports cleanly and the environment
variable ``CNSF_DISABLE_NUMBA`` is unset (or ``0``).  Both implementations of
looped kernel are importable as ``<name>_numba`` / ``<name>_numpy`` so tests
and the benchmark can compare them directly; the unsuffixed name is the one
selected for the current process.  Kernels that are already vectorised slice
arithmetic have a single numpy implementation.
"""

from __future__ import annotations

import os

import numpy as np

try:
    import numba
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAVE_NUMBA = False

USE_NUMBA = HAVE_NUMBA and os.environ.get("CNSF_DISABLE_NUMBA", "0") in ("", "0", "false", "no")


def _jit(fn):
    if not HAVE_NUMBA:
        return fn
    return njit(cache=True, fastmath=False)(fn)


# ---------------------------------------------------------------------------
# shifted-slice sums for channels-last convolution
# ---------------------------------------------------------------------------
# ``prods`` has shape (N, Hp, Wp, kh*kw, O): the product of every input
# position with every kernel tap.  A convolution output is the sum over taps
# of the tap's slice shifted by the tap offset.


def conv_out_size(n: int, k: int, s: int, p: int) -> int:
    return (n + 2 * p - k) // s + 1


def shift_sum(prods, kh, kw, sh, sw, ho, wo):
    out = np.zeros(prods.shape[:1] + (ho, wo) + prods.shape[-1:], dtype=prods.dtype)
    for i in range(kh):
        for j in range(kw):
            out += prods[:, i : i + sh * (ho - 1) + 1 : sh, j : j + sw * (wo - 1) + 1 : sw, i * kw + j]
    return out


def shift_spread(g, kh, kw, sh, sw, hp, wp):
    """Adjoint of :func:`shift_sum`."""
    n, ho, wo, o = g.shape
    gp = np.zeros((n, hp, wp, kh * kw, o), dtype=g.dtype)
    for i in range(kh):
        for j in range(kw):
            gp[:, i : i + sh * (ho - 1) + 1 : sh, j : j + sw * (wo - 1) + 1 : sw, i * kw + j] = g
    return gp


def shift_scatter(prods, kh, kw, sh, sw, hp, wp):
    """Transposed-convolution accumulation of (N, H, W, kh*kw, O) into (N, Hp, Wp, O)."""
    n, h, w, _, o = prods.shape
    out = np.zeros((n, hp, wp, o), dtype=prods.dtype)
    for i in range(kh):
        for j in range(kw):
            out[:, i : i + sh * (h - 1) + 1 : sh, j : j + sw * (w - 1) + 1 : sw] += prods[:, :, :, i * kw + j]
    return out


def shift_gather(g, kh, kw, sh, sw, h, w):
    """Adjoint of :func:`shift_scatter`."""
    n, _, _, o = g.shape
    out = np.empty((n, h, w, kh * kw, o), dtype=g.dtype)
    for i in range(kh):
        for j in range(kw):
            out[:, :, :, i * kw + j] = g[:, i : i + sh * (h - 1) + 1 : sh, j : j + sw * (w - 1) + 1 : sw]
    return out


# ---------------------------------------------------------------------------
# framing / overlap-add (STFT analysis and synthesis)
# ---------------------------------------------------------------------------


def frame_signal(x, frame_len, hop):
    """(B, L) -> (B, T, frame_len) strided copy; T = 1 + (L - frame_len) // hop."""
    b, length = x.shape
    t = 1 + (length - frame_len) // hop
    sb, ss = x.strides
    view = np.lib.stride_tricks.as_strided(
        x, shape=(b, t, frame_len), strides=(sb, ss * hop, ss), writeable=False
    )
    return np.ascontiguousarray(view)


def overlap_add_numpy(frames, hop, length):
    b, t, n = frames.shape
    out = np.zeros((b, length), dtype=frames.dtype)
    # n // hop passes, each summing non-overlapping frames
    for k in range(t):
        out[:, k * hop : k * hop + n] += frames[:, k, :]
    return out


def _ola_loop(frames, hop, out):
    b, t, n = frames.shape
    for bi in range(b):
        for k in range(t):
            base = k * hop
            for i in range(n):
                out[bi, base + i] += frames[bi, k, i]


_ola_jit = _jit(_ola_loop)


def overlap_add_numba(frames, hop, length):
    out = np.zeros((frames.shape[0], length), dtype=frames.dtype)
    _ola_jit(np.ascontiguousarray(frames), hop, out)
    return out


# ---------------------------------------------------------------------------
# single-direction LSTM recurrence
# ---------------------------------------------------------------------------
# Gate layout in the 4H axis is (input, forget, cell, output).  ``gx`` holds the
# input projections x_t @ Wx + b for every step, already computed by the caller.


def _sigmoid(z):
    return 1.0 / (1.0 + np.exp(-z))


def lstm_forward_numpy(gx, wh, reverse):
    b, t, h4 = gx.shape
    h = h4 // 4
    hs = np.zeros((b, t, h), dtype=gx.dtype)
    cs = np.zeros((b, t, h), dtype=gx.dtype)
    gates = np.zeros((b, t, h4), dtype=gx.dtype)
    hprev = np.zeros((b, h), dtype=gx.dtype)
    cprev = np.zeros((b, h), dtype=gx.dtype)
    steps = range(t - 1, -1, -1) if reverse else range(t)
    for s in steps:
        z = gx[:, s] + hprev @ wh
        i = _sigmoid(z[:, :h])
        f = _sigmoid(z[:, h : 2 * h])
        g = np.tanh(z[:, 2 * h : 3 * h])
        o = _sigmoid(z[:, 3 * h :])
        c = f * cprev + i * g
        hcur = o * np.tanh(c)
        gates[:, s, :h] = i
        gates[:, s, h : 2 * h] = f
        gates[:, s, 2 * h : 3 * h] = g
        gates[:, s, 3 * h :] = o
        cs[:, s] = c
        hs[:, s] = hcur
        hprev, cprev = hcur, c
    return hs, cs, gates


def lstm_backward_numpy(dhs, hs, cs, gates, wh, reverse):
    """Return (dgx, dwh) given upstream gradient on the hidden sequence."""
    b, t, h = hs.shape
    dgx = np.zeros((b, t, 4 * h), dtype=hs.dtype)
    dwh = np.zeros_like(wh)
    dh_next = np.zeros((b, h), dtype=hs.dtype)
    dc_next = np.zeros((b, h), dtype=hs.dtype)
    steps = range(t) if reverse else range(t - 1, -1, -1)
    for s in steps:
        prev = s + 1 if reverse else s - 1
        has_prev = 0 <= prev < t
        i = gates[:, s, :h]
        f = gates[:, s, h : 2 * h]
        g = gates[:, s, 2 * h : 3 * h]
        o = gates[:, s, 3 * h :]
        c = cs[:, s]
        tc = np.tanh(c)
        dh = dhs[:, s] + dh_next
        do = dh * tc
        dc = dc_next + dh * o * (1.0 - tc * tc)
        cprev = cs[:, prev] if has_prev else np.zeros_like(c)
        hprev = hs[:, prev] if has_prev else np.zeros_like(c)
        di = dc * g
        df = dc * cprev
        dg = dc * i
        dz = np.concatenate(
            [di * i * (1 - i), df * f * (1 - f), dg * (1 - g * g), do * o * (1 - o)], axis=1
        )
        dgx[:, s] = dz
        dwh += hprev.T @ dz
        dh_next = dz @ wh.T
        dc_next = dc * f
    return dgx, dwh


def _lstm_forward_loop(gx, wh, reverse, hs, cs, gates):
    b, t, h4 = gx.shape
    h = h4 // 4
    hprev = np.zeros((b, h), dtype=gx.dtype)
    cprev = np.zeros((b, h), dtype=gx.dtype)
    for step in range(t):
        s = t - 1 - step if reverse else step
        z = gx[:, s, :] + np.dot(hprev, wh)
        for bi in range(b):
            for k in range(h):
                ig = 1.0 / (1.0 + np.exp(-z[bi, k]))
                fg = 1.0 / (1.0 + np.exp(-z[bi, h + k]))
                gg = np.tanh(z[bi, 2 * h + k])
                og = 1.0 / (1.0 + np.exp(-z[bi, 3 * h + k]))
                c = fg * cprev[bi, k] + ig * gg
                hc = og * np.tanh(c)
                gates[bi, s, k] = ig
                gates[bi, s, h + k] = fg
                gates[bi, s, 2 * h + k] = gg
                gates[bi, s, 3 * h + k] = og
                cs[bi, s, k] = c
                hs[bi, s, k] = hc
                cprev[bi, k] = c
                hprev[bi, k] = hc


def _lstm_backward_loop(dhs, hs, cs, gates, wh, reverse, dgx, dwh):
    b, t, h = hs.shape
    dh_next = np.zeros((b, h), dtype=hs.dtype)
    dc_next = np.zeros((b, h), dtype=hs.dtype)
    dz = np.zeros((b, 4 * h), dtype=hs.dtype)
    hprev = np.zeros((b, h), dtype=hs.dtype)
    for step in range(t):
        s = step if reverse else t - 1 - step
        prev = s + 1 if reverse else s - 1
        has_prev = prev >= 0 and prev < t
        for bi in range(b):
            for k in range(h):
                ig = gates[bi, s, k]
                fg = gates[bi, s, h + k]
                gg = gates[bi, s, 2 * h + k]
                og = gates[bi, s, 3 * h + k]
                tc = np.tanh(cs[bi, s, k])
                dh = dhs[bi, s, k] + dh_next[bi, k]
                do = dh * tc
                dc = dc_next[bi, k] + dh * og * (1.0 - tc * tc)
                cp = cs[bi, prev, k] if has_prev else 0.0
                hprev[bi, k] = hs[bi, prev, k] if has_prev else 0.0
                dz[bi, k] = dc * gg * ig * (1.0 - ig)
                dz[bi, h + k] = dc * cp * fg * (1.0 - fg)
                dz[bi, 2 * h + k] = dc * ig * (1.0 - gg * gg)
                dz[bi, 3 * h + k] = do * og * (1.0 - og)
                dc_next[bi, k] = dc * fg
        dgx[:, s, :] = dz
        dwh += np.dot(hprev.T, dz)
        dh_next[:, :] = np.dot(dz, wh.T)


_lstm_forward_jit = _jit(_lstm_forward_loop)
_lstm_backward_jit = _jit(_lstm_backward_loop)


def lstm_forward_numba(gx, wh, reverse):
    b, t, h4 = gx.shape
    h = h4 // 4
    hs = np.zeros((b, t, h), dtype=gx.dtype)
    cs = np.zeros((b, t, h), dtype=gx.dtype)
    gates = np.zeros((b, t, h4), dtype=gx.dtype)
    _lstm_forward_jit(np.ascontiguousarray(gx), np.ascontiguousarray(wh), bool(reverse), hs, cs, gates)
    return hs, cs, gates


def lstm_backward_numba(dhs, hs, cs, gates, wh, reverse):
    b, t, h = hs.shape
    dgx = np.zeros((b, t, 4 * h), dtype=hs.dtype)
    dwh = np.zeros(wh.shape, dtype=hs.dtype)
    _lstm_backward_jit(
        np.ascontiguousarray(dhs), hs, cs, gates, np.ascontiguousarray(wh), bool(reverse), dgx, dwh
    )
    return dgx, dwh


# ---------------------------------------------------------------------------
# batched complex inverse: Gauss-Jordan elimination with partial pivoting
# ---------------------------------------------------------------------------


def complex_inverse_numpy(a):
    """Invert a stack of complex matrices (..., n, n)."""
    shape = a.shape
    n = shape[-1]
    m = a.reshape(-1, n, n).astype(np.complex128, copy=True)
    batch = m.shape[0]
    inv = np.broadcast_to(np.eye(n, dtype=np.complex128), m.shape).copy()
    rows = np.arange(batch)
    for col in range(n):
        piv = col + np.argmax(np.abs(m[:, col:, col]), axis=1)
        swap = piv != col
        if np.any(swap):
            r = rows[swap]
            p = piv[swap]
            m[r, col], m[r, p] = m[r, p].copy(), m[r, col].copy()
            inv[r, col], inv[r, p] = inv[r, p].copy(), inv[r, col].copy()
        d = m[:, col, col][:, None].copy()
        m[:, col] /= d
        inv[:, col] /= d
        factors = m[:, :, col].copy()
        factors[:, col] = 0
        m -= factors[:, :, None] * m[:, col][:, None, :]
        inv -= factors[:, :, None] * inv[:, col][:, None, :]
    return inv.reshape(shape)


def _complex_inverse_loop(m, inv):
    batch, n = m.shape[0], m.shape[1]
    for b in range(batch):
        for col in range(n):
            piv = col
            best = np.abs(m[b, col, col])
            for r in range(col + 1, n):
                v = np.abs(m[b, r, col])
                if v > best:
                    best = v
                    piv = r
            if piv != col:
                for k in range(n):
                    tmp = m[b, col, k]
                    m[b, col, k] = m[b, piv, k]
                    m[b, piv, k] = tmp
                    tmp = inv[b, col, k]
                    inv[b, col, k] = inv[b, piv, k]
                    inv[b, piv, k] = tmp
            d = m[b, col, col]
            for k in range(n):
                m[b, col, k] /= d
                inv[b, col, k] /= d
            for r in range(n):
                if r == col:
                    continue
                fac = m[b, r, col]
                if fac == 0:
                    continue
                for k in range(n):
                    m[b, r, k] -= fac * m[b, col, k]
                    inv[b, r, k] -= fac * inv[b, col, k]


_complex_inverse_jit = _jit(_complex_inverse_loop)


def complex_inverse_numba(a):
    shape = a.shape
    n = shape[-1]
    m = a.reshape(-1, n, n).astype(np.complex128, copy=True)
    inv = np.zeros_like(m)
    for i in range(n):
        inv[:, i, i] = 1.0
    _complex_inverse_jit(m, inv)
    return inv.reshape(shape)


# ---------------------------------------------------------------------------
# image-source room impulse response accumulation
# ---------------------------------------------------------------------------


def _ism_loop(src, mic, room, beta, order, fs, c, n_taps, half_width, out):
    # beta: (2, 3) reflection coefficients, row 0 walls at the origin.
    two_pi = 2.0 * np.pi
    max_dist = n_taps / fs * c
    for nx in range(-order, order + 1):
        for ny in range(-order, order + 1):
            for nz in range(-order, order + 1):
                for qx in range(2):
                    for qy in range(2):
                        for qz in range(2):
                            ix = (1 - 2 * qx) * src[0] + 2 * nx * room[0]
                            iy = (1 - 2 * qy) * src[1] + 2 * ny * room[1]
                            iz = (1 - 2 * qz) * src[2] + 2 * nz * room[2]
                            dx = ix - mic[0]
                            dy = iy - mic[1]
                            dz = iz - mic[2]
                            d = np.sqrt(dx * dx + dy * dy + dz * dz)
                            if d > max_dist:
                                continue
                            gain = (
                                beta[0, 0] ** abs(nx - qx)
                                * beta[1, 0] ** abs(nx)
                                * beta[0, 1] ** abs(ny - qy)
                                * beta[1, 1] ** abs(ny)
                                * beta[0, 2] ** abs(nz - qz)
                                * beta[1, 2] ** abs(nz)
                            )
                            if gain == 0.0:
                                continue
                            amp = gain / (2.0 * two_pi * d)
                            delay = d / c * fs
                            center = int(np.floor(delay))
                            for k in range(center - half_width + 1, center + half_width + 1):
                                if k < 0 or k >= n_taps:
                                    continue
                                x = k - delay
                                if abs(x) >= half_width:
                                    continue
                                win = 0.5 * (1.0 + np.cos(np.pi * x / half_width))
                                if x == 0.0:
                                    s = 1.0
                                else:
                                    s = np.sin(np.pi * x) / (np.pi * x)
                                out[k] += amp * win * s


_ism_jit = _jit(_ism_loop)


def ism_rir_numba(src, mic, room, beta, order, fs, c, n_taps, half_width):
    out = np.zeros(n_taps, dtype=np.float64)
    _ism_jit(
        np.asarray(src, dtype=np.float64),
        np.asarray(mic, dtype=np.float64),
        np.asarray(room, dtype=np.float64),
        np.asarray(beta, dtype=np.float64),
        int(order),
        float(fs),
        float(c),
        int(n_taps),
        int(half_width),
        out,
    )
    return out


def ism_rir_numpy(src, mic, room, beta, order, fs, c, n_taps, half_width):
    src = np.asarray(src, dtype=np.float64)
    mic = np.asarray(mic, dtype=np.float64)
    room = np.asarray(room, dtype=np.float64)
    beta = np.asarray(beta, dtype=np.float64)
    n = np.arange(-order, order + 1)
    q = np.arange(2)
    nx, ny, nz, qx, qy, qz = (a.ravel() for a in np.meshgrid(n, n, n, q, q, q, indexing="ij"))
    ix = (1 - 2 * qx) * src[0] + 2 * nx * room[0]
    iy = (1 - 2 * qy) * src[1] + 2 * ny * room[1]
    iz = (1 - 2 * qz) * src[2] + 2 * nz * room[2]
    d = np.sqrt((ix - mic[0]) ** 2 + (iy - mic[1]) ** 2 + (iz - mic[2]) ** 2)
    gain = (
        beta[0, 0] ** np.abs(nx - qx)
        * beta[1, 0] ** np.abs(nx)
        * beta[0, 1] ** np.abs(ny - qy)
        * beta[1, 1] ** np.abs(ny)
        * beta[0, 2] ** np.abs(nz - qz)
        * beta[1, 2] ** np.abs(nz)
    )
    keep = (d <= n_taps / fs * c) & (gain != 0.0)
    d, gain = d[keep], gain[keep]
    out = np.zeros(n_taps, dtype=np.float64)
    offsets = np.arange(-half_width + 1, half_width + 1)
    chunk = 8192
    for start in range(0, d.size, chunk):
        dd = d[start : start + chunk]
        amp = gain[start : start + chunk] / (4.0 * np.pi * dd)
        delay = dd / c * fs
        k = np.floor(delay).astype(np.int64)[:, None] + offsets[None, :]
        x = k - delay[:, None]
        win = 0.5 * (1.0 + np.cos(np.pi * x / half_width))
        vals = amp[:, None] * win * np.sinc(x)
        valid = (k >= 0) & (k < n_taps) & (np.abs(x) < half_width)
        out += np.bincount(k[valid], weights=vals[valid], minlength=n_taps)
    return out


# ---------------------------------------------------------------------------
# selection
# ---------------------------------------------------------------------------

if USE_NUMBA:
    overlap_add = overlap_add_numba
    lstm_forward = lstm_forward_numba
    lstm_backward = lstm_backward_numba
    complex_inverse = complex_inverse_numba
    ism_rir = ism_rir_numba
else:
    overlap_add = overlap_add_numpy
    lstm_forward = lstm_forward_numpy
    lstm_backward = lstm_backward_numpy
    complex_inverse = complex_inverse_numpy
    ism_rir = ism_rir_numpy


def backend() -> str:
    return "numba" if USE_NUMBA else "numpy"
