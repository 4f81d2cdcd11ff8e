"""Complex-valued layers and the dense U-Net mask estimator.

All layers take and return :class:`~cnsf.complex.ComplexTensor` values laid
out channels last as (batch, time, freq, channels), except the recurrent
bottleneck which works on (batch, time, features).  Kernels are stored as
(kh, kw, in_ch, out_ch).
"""

from __future__ import annotations

from dataclasses import dataclass, field, asdict

import numpy as np

from . import tensor as T
from .complex import ComplexTensor, c_concat, c_matmul
from .features import FeaturePack
from .kernels import conv_out_size
from .tensor import ShapeError, Tensor

EPS_BN = 1e-5


class Module:
    """Minimal parameter container with recursive naming."""

    training: bool = True

    def children(self):
        for name, value in vars(self).items():
            if isinstance(value, Module):
                yield name, value
            elif isinstance(value, (list, tuple)):
                for i, v in enumerate(value):
                    if isinstance(v, Module):
                        yield f"{name}.{i}", v

    def named_parameters(self, prefix: str = ""):
        for name, value in vars(self).items():
            if isinstance(value, Tensor) and value.requires_grad:
                yield prefix + name, value
        for name, child in self.children():
            yield from child.named_parameters(f"{prefix}{name}.")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def named_buffers(self, prefix: str = ""):
        for name, value in getattr(self, "buffers", {}).items():
            yield prefix + name, value
        for name, child in self.children():
            yield from child.named_buffers(f"{prefix}{name}.")

    def state_dict(self) -> dict[str, np.ndarray]:
        state = {name: p.data for name, p in self.named_parameters()}
        state.update({name: np.asarray(b) for name, b in self.named_buffers()})
        return state

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        params = dict(self.named_parameters())
        missing = [n for n in params if n not in state]
        if missing:
            raise KeyError(f"state is missing parameters: {missing[:5]}")
        for name, p in params.items():
            arr = np.asarray(state[name], dtype=p.dtype)
            if arr.shape != p.shape:
                raise ShapeError(f"{name}: expected {p.shape}, got {arr.shape}")
            p.data = arr.copy()
            p.data.flags.writeable = False
        for mod_prefix, mod in self._modules_with_prefix():
            for bname in list(getattr(mod, "buffers", {})):
                key = mod_prefix + bname
                if key in state:
                    mod.buffers[bname] = np.array(state[key], dtype=mod.buffers[bname].dtype)

    def _modules_with_prefix(self, prefix: str = ""):
        yield prefix, self
        for name, child in self.children():
            yield from child._modules_with_prefix(f"{prefix}{name}.")

    def train(self, mode: bool = True):
        for _, m in self._modules_with_prefix():
            m.training = mode
        return self

    def eval(self):
        return self.train(False)

    def n_parameters(self) -> int:
        return sum(p.size for p in self.parameters())


def _param(arr) -> Tensor:
    return Tensor(arr, requires_grad=True)


def complex_init(rng, shape, fan_in: int):
    """Uniform magnitude scaled by fan-in with uniform phase in [-pi, pi)."""
    # E|w|^2 = 2 / fan_in
    mag = rng.uniform(0.0, np.sqrt(6.0 / fan_in), size=shape)
    phase = rng.uniform(-np.pi, np.pi, size=shape)
    return mag * np.cos(phase), mag * np.sin(phase)


# ---------------------------------------------------------------------------
# convolution
# ---------------------------------------------------------------------------


class ComplexConv2d(Module):
    """W = A + jB applied as [[A, -B], [B, A]] over stacked (re, im) channels."""

    def __init__(self, in_ch, out_ch, kernel=(3, 3), stride=(1, 1), padding=(0, 0), rng=None, bias=True):
        rng = rng or np.random.default_rng(0)
        self.in_ch, self.out_ch = in_ch, out_ch
        self.kernel, self.stride, self.padding = tuple(kernel), tuple(stride), tuple(padding)
        a, b = complex_init(rng, self.kernel + (in_ch, out_ch), in_ch * int(np.prod(kernel)))
        self.A = _param(a)
        self.B = _param(b)
        self.bias_re = _param(np.zeros(out_ch)) if bias else None
        self.bias_im = _param(np.zeros(out_ch)) if bias else None

    def out_size(self, t: int, f: int) -> tuple[int, int]:
        return (
            conv_out_size(t, self.kernel[0], self.stride[0], self.padding[0]),
            conv_out_size(f, self.kernel[1], self.stride[1], self.padding[1]),
        )

    def __call__(self, x: ComplexTensor) -> ComplexTensor:
        return complex_conv2d(x, self)


def _bias(layer):
    if layer.bias_re is None:
        return None
    return T.concat([layer.bias_re, layer.bias_im], axis=0)


def _stacked_kernel(p) -> Tensor:
    # rows: input (re, im); columns: output (re, im)
    from_re = T.concat([p.A, p.B], axis=3)
    from_im = T.concat([-p.B, p.A], axis=3)
    return T.concat([from_re, from_im], axis=2)


def complex_conv2d(x: ComplexTensor, p: ComplexConv2d) -> ComplexTensor:
    if x.ndim != 4 or x.shape[3] != p.in_ch:
        raise ShapeError(f"complex_conv2d expects (N, T, F, {p.in_ch}), got {x.shape}")
    xin = T.concat([x.re, x.im], axis=3)
    out = T.conv2d(xin, _stacked_kernel(p), _bias(p), p.stride, p.padding)
    o = p.out_ch
    return ComplexTensor(out[..., :o], out[..., o:])


class ComplexDeconv2d(Module):
    """Transposed complex convolution."""

    def __init__(self, in_ch, out_ch, kernel=(3, 3), stride=(1, 1), padding=(0, 0), rng=None, bias=True):
        rng = rng or np.random.default_rng(0)
        self.in_ch, self.out_ch = in_ch, out_ch
        self.kernel, self.stride, self.padding = tuple(kernel), tuple(stride), tuple(padding)
        a, b = complex_init(rng, self.kernel + (in_ch, out_ch), in_ch * int(np.prod(kernel)))
        self.A = _param(a)
        self.B = _param(b)
        self.bias_re = _param(np.zeros(out_ch)) if bias else None
        self.bias_im = _param(np.zeros(out_ch)) if bias else None

    def __call__(self, x: ComplexTensor) -> ComplexTensor:
        return complex_deconv2d(x, self)


def complex_deconv2d(x: ComplexTensor, p: ComplexDeconv2d) -> ComplexTensor:
    if x.ndim != 4 or x.shape[3] != p.in_ch:
        raise ShapeError(f"complex_deconv2d expects (N, T, F, {p.in_ch}), got {x.shape}")
    xin = T.concat([x.re, x.im], axis=3)
    out = T.conv_transpose2d(xin, _stacked_kernel(p), _bias(p), p.stride, p.padding)
    o = p.out_ch
    return ComplexTensor(out[..., :o], out[..., o:])


def complex_relu(x: ComplexTensor) -> ComplexTensor:
    return ComplexTensor(T.relu(x.re), T.relu(x.im))


# ---------------------------------------------------------------------------
# batch normalisation
# ---------------------------------------------------------------------------


class ComplexBatchNorm(Module):
    """Per-channel 2x2 whitening of (re, im) followed by a learned 2x2 affine."""

    def __init__(self, channels: int, momentum: float = 0.1, eps: float = EPS_BN):
        self.channels, self.momentum, self.eps = channels, momentum, eps
        self.gamma_rr = _param(np.ones(channels))
        self.gamma_ri = _param(np.zeros(channels))
        self.gamma_ii = _param(np.ones(channels))
        self.beta_re = _param(np.zeros(channels))
        self.beta_im = _param(np.zeros(channels))
        self.buffers = {
            "running_mean": np.zeros((2, channels), dtype=np.float64),
            "running_cov": np.stack([np.ones(channels), np.zeros(channels), np.ones(channels)]).astype(np.float64),
        }

    def __call__(self, x: ComplexTensor, training: bool | None = None) -> ComplexTensor:
        return complex_batch_norm(x, self, self.training if training is None else training)


def whiten(x: ComplexTensor, axes, eps: float = EPS_BN):
    """Zero-mean, identity-covariance (re, im) over ``axes``; returns (xw, stats)."""
    mr = x.re.mean(axis=axes, keepdims=True)
    mi = x.im.mean(axis=axes, keepdims=True)
    cr = x.re - mr
    ci = x.im - mi
    vrr = T.square(cr).mean(axis=axes, keepdims=True) + eps
    vii = T.square(ci).mean(axis=axes, keepdims=True) + eps
    vri = (cr * ci).mean(axis=axes, keepdims=True)
    xw = _apply_inv_sqrt(cr, ci, vrr, vri, vii)
    return xw, (mr, mi, vrr, vri, vii)


def _apply_inv_sqrt(cr, ci, vrr, vri, vii) -> ComplexTensor:
    # closed-form inverse square root of the 2x2 SPD matrix [[vrr, vri], [vri, vii]]
    s = T.sqrt(vrr * vii - vri * vri)
    t = T.sqrt(vrr + vii + 2 * s)
    inv = 1.0 / (s * t)
    wrr = (vii + s) * inv
    wii = (vrr + s) * inv
    wri = -vri * inv
    return ComplexTensor(wrr * cr + wri * ci, wri * cr + wii * ci)


def complex_batch_norm(x: ComplexTensor, bn: ComplexBatchNorm, training: bool) -> ComplexTensor:
    if x.shape[-1] != bn.channels:
        raise ShapeError(f"batch norm over {bn.channels} channels got input {x.shape}")
    axes = tuple(range(x.ndim - 1))
    bshape = (1,) * (x.ndim - 1) + (bn.channels,)
    dtype = x.dtype
    if training:
        if x.shape[0] < 2:
            raise ValueError("complex batch norm needs a batch of at least 2 in training mode")
        xw, (mr, mi, vrr, vri, vii) = whiten(x, axes, bn.eps)
        m = bn.momentum
        rm, rc = bn.buffers["running_mean"], bn.buffers["running_cov"]
        rm[0] = (1 - m) * rm[0] + m * mr.data.reshape(-1)
        rm[1] = (1 - m) * rm[1] + m * mi.data.reshape(-1)
        rc[0] = (1 - m) * rc[0] + m * (vrr.data.reshape(-1) - bn.eps)
        rc[1] = (1 - m) * rc[1] + m * vri.data.reshape(-1)
        rc[2] = (1 - m) * rc[2] + m * (vii.data.reshape(-1) - bn.eps)
    else:
        rm, rc = bn.buffers["running_mean"], bn.buffers["running_cov"]

        def const(v):
            return Tensor(np.asarray(v).reshape(bshape), dtype=dtype)

        cr = x.re - const(rm[0])
        ci = x.im - const(rm[1])
        xw = _apply_inv_sqrt(cr, ci, const(rc[0] + bn.eps), const(rc[1]), const(rc[2] + bn.eps))
    g_rr = bn.gamma_rr.reshape(bshape)
    g_ri = bn.gamma_ri.reshape(bshape)
    g_ii = bn.gamma_ii.reshape(bshape)
    re = g_rr * xw.re + g_ri * xw.im + bn.beta_re.reshape(bshape)
    im = g_ri * xw.re + g_ii * xw.im + bn.beta_im.reshape(bshape)
    return ComplexTensor(re, im)


# ---------------------------------------------------------------------------
# conv unit and dense block
# ---------------------------------------------------------------------------


class ConvUnit(Module):
    """complex conv2d -> complex ReLU -> complex batch norm."""

    def __init__(self, in_ch, out_ch, kernel, stride, padding, rng):
        self.conv = ComplexConv2d(in_ch, out_ch, kernel, stride, padding, rng)
        self.bn = ComplexBatchNorm(out_ch)

    def __call__(self, x):
        return self.bn(complex_relu(self.conv(x)))


class ComplexDenseBlock(Module):
    """Five densely connected 3x3 complex conv units; output has ``growth`` maps."""

    n_layers = 5

    def __init__(self, in_ch: int, growth: int, rng=None, kernel=(3, 3)):
        rng = rng or np.random.default_rng(0)
        self.in_ch, self.growth = in_ch, growth
        pad = (kernel[0] // 2, kernel[1] // 2)
        self.layers = [
            ConvUnit(in_ch + k * growth, growth, kernel, (1, 1), pad, rng) for k in range(self.n_layers)
        ]

    def layer_in_channels(self) -> list[int]:
        return [layer.conv.in_ch for layer in self.layers]

    def __call__(self, x: ComplexTensor) -> ComplexTensor:
        return complex_dense_block(x, self)


def complex_dense_block(x: ComplexTensor, block: ComplexDenseBlock) -> ComplexTensor:
    feats = [x]
    out = x
    for layer in block.layers:
        inp = feats[0] if len(feats) == 1 else c_concat(feats, axis=-1)
        out = layer(inp)
        feats.append(out)
    return out


# ---------------------------------------------------------------------------
# recurrent bottleneck
# ---------------------------------------------------------------------------


class BLSTM(Module):
    """Real bidirectional single-layer LSTM."""

    def __init__(self, in_dim: int, hidden: int, rng=None):
        rng = rng or np.random.default_rng(0)
        k = 1.0 / np.sqrt(hidden)
        self.in_dim, self.hidden = in_dim, hidden
        self.wx_f = _param(rng.uniform(-k, k, (in_dim, 4 * hidden)))
        self.wh_f = _param(rng.uniform(-k, k, (hidden, 4 * hidden)))
        self.b_f = _param(rng.uniform(-k, k, 4 * hidden))
        self.wx_b = _param(rng.uniform(-k, k, (in_dim, 4 * hidden)))
        self.wh_b = _param(rng.uniform(-k, k, (hidden, 4 * hidden)))
        self.b_b = _param(rng.uniform(-k, k, 4 * hidden))

    def __call__(self, x: Tensor) -> Tensor:
        fwd = T.lstm(x, self.wx_f, self.wh_f, self.b_f, reverse=False)
        bwd = T.lstm(x, self.wx_b, self.wh_b, self.b_b, reverse=True)
        return T.concat([fwd, bwd], axis=-1)


class ComplexBLSTM(Module):
    def __init__(self, in_dim: int, hidden: int, rng=None):
        rng = rng or np.random.default_rng(0)
        self.blstm_r = BLSTM(in_dim, hidden, rng)
        self.blstm_i = BLSTM(in_dim, hidden, rng)

    def __call__(self, x: ComplexTensor) -> ComplexTensor:
        return complex_blstm(x, self)


def complex_blstm(x: ComplexTensor, p: ComplexBLSTM) -> ComplexTensor:
    """(BLSTM_r(Xr) - BLSTM_i(Xi)) + j (BLSTM_r(Xi) + BLSTM_i(Xr)) on (B, T, D)."""
    squeeze = x.ndim == 2
    if squeeze:
        x = x.reshape((1,) + x.shape)
    b = x.shape[0]
    both = T.concat([x.re, x.im], axis=0)
    r = p.blstm_r(both)
    i = p.blstm_i(both)
    r_re, r_im = r[:b], r[b:]
    i_re, i_im = i[:b], i[b:]
    out = ComplexTensor(r_re - i_im, r_im + i_re)
    if squeeze:
        out = out.reshape(out.shape[1:])
    return out


class ComplexLinear(Module):
    def __init__(self, in_dim: int, out_dim: int, rng=None):
        rng = rng or np.random.default_rng(0)
        a, b = complex_init(rng, (in_dim, out_dim), in_dim)
        self.A = _param(a)
        self.B = _param(b)
        self.bias_re = _param(np.zeros(out_dim))
        self.bias_im = _param(np.zeros(out_dim))

    def __call__(self, x: ComplexTensor) -> ComplexTensor:
        y = c_matmul(x, ComplexTensor(self.A, self.B))
        return ComplexTensor(y.re + self.bias_re, y.im + self.bias_im)


# ---------------------------------------------------------------------------
# U-Net
# ---------------------------------------------------------------------------

DOWN_KERNEL = (3, 3)
DOWN_STRIDE = (1, 2)
DOWN_PAD = (1, 0)


@dataclass
class UNetConfig:
    in_channels: int = 3
    channels: list[int] = field(default_factory=lambda: [8, 8])
    hidden: int = 16
    n_freq: int = 257
    out_channels: int = 1
    seed: int = 0

    @classmethod
    def profile(cls, name: str, in_channels: int, n_freq: int, out_channels: int, seed: int = 0) -> "UNetConfig":
        if name == "toy":
            chans, hidden = [8, 8], 16
        elif name == "desk":
            chans, hidden = [12, 16], 64
        elif name == "paper":
            # wide five-stage layout; stage widths are not taken stage-for-stage from the figure
            chans, hidden = [32, 64, 64, 64, 64], 256
        else:
            raise ValueError(f"unknown model profile {name!r}")
        return cls(in_channels, chans, hidden, n_freq, out_channels, seed)

    def to_dict(self) -> dict:
        return asdict(self)


def padded_freq(n_freq: int, depth: int) -> int:
    """Smallest F' >= n_freq that the strided encoder maps back exactly."""
    kf, sf, pf = DOWN_KERNEL[1], DOWN_STRIDE[1], DOWN_PAD[1]
    f = max(n_freq, kf)
    while True:
        sizes = [f]
        ok = True
        for _ in range(depth):
            cur = sizes[-1]
            nxt = conv_out_size(cur, kf, sf, pf)
            if nxt < 1 or (nxt - 1) * sf - 2 * pf + kf != cur:
                ok = False
                break
            sizes.append(nxt)
        if ok:
            return f
        f += 1


class UNet(Module):
    def __init__(self, cfg: UNetConfig):
        self.cfg = cfg
        rng = np.random.default_rng(cfg.seed)
        depth = len(cfg.channels)
        self.f_pad = padded_freq(cfg.n_freq, depth)
        self.freq_sizes = [self.f_pad]
        for _ in range(depth):
            self.freq_sizes.append(conv_out_size(self.freq_sizes[-1], DOWN_KERNEL[1], DOWN_STRIDE[1], DOWN_PAD[1]))
        self.down = []
        self.enc_dense = []
        prev = cfg.in_channels
        for c in cfg.channels:
            self.down.append(ConvUnit(prev, c, DOWN_KERNEL, DOWN_STRIDE, DOWN_PAD, rng))
            self.enc_dense.append(ComplexDenseBlock(c, c, rng))
            prev = c
        bottleneck = cfg.channels[-1] * self.freq_sizes[-1]
        self.blstm = ComplexBLSTM(bottleneck, cfg.hidden, rng)
        self.proj = ComplexLinear(2 * cfg.hidden, bottleneck, rng)
        self.up = []
        self.dec_dense = []
        for k in reversed(range(depth)):
            in_ch = 2 * cfg.channels[k]
            if k > 0:
                out_ch = cfg.channels[k - 1]
                self.up.append(ComplexDeconv2d(in_ch, out_ch, DOWN_KERNEL, DOWN_STRIDE, DOWN_PAD, rng))
                self.dec_dense.append(ComplexDenseBlock(out_ch, out_ch, rng))
            else:
                self.up.append(ComplexDeconv2d(in_ch, cfg.out_channels, DOWN_KERNEL, DOWN_STRIDE, DOWN_PAD, rng))
        self.up_bn = [ComplexBatchNorm(cfg.channels[k - 1]) for k in reversed(range(1, depth))]

    def __call__(self, features) -> ComplexTensor:
        return unet_forward(features, self)


@dataclass
class MaskPair:
    target: ComplexTensor  # (B, T, F)
    noise: ComplexTensor | None = None


def unet_forward(features, model: UNet) -> MaskPair:
    x = features.data if isinstance(features, FeaturePack) else features
    if x.ndim == 3:
        x = x.reshape((1,) + x.shape)
    cfg = model.cfg
    if x.shape[1] != cfg.in_channels:
        raise ShapeError(f"model expects {cfg.in_channels} feature channels, got {x.shape[1]}")
    n, _, t, f = x.shape
    x = x.transpose(0, 2, 3, 1)
    f_pad = padded_freq(f, len(cfg.channels))
    if f_pad != model.f_pad:
        raise ShapeError(f"frequency extent {f} is incompatible with a model built for {cfg.n_freq} bins")
    if f_pad > f:
        widths = ((0, 0), (0, 0), (0, f_pad - f), (0, 0))
        x = ComplexTensor(T.pad(x.re, widths), T.pad(x.im, widths))
    skips = []
    for down, dense in zip(model.down, model.enc_dense):
        x = dense(down(x))
        skips.append(x)
    fb, c = x.shape[2], x.shape[3]
    seq = model.proj(model.blstm(x.reshape(n, t, fb * c)))
    x = seq.reshape(n, t, fb, c)
    depth = len(cfg.channels)
    for step, up in enumerate(model.up):
        skip = skips[depth - 1 - step]
        x = up(c_concat([x, skip], axis=-1))
        if step < depth - 1:
            x = model.dec_dense[step](model.up_bn[step](complex_relu(x)))
    x = x[:, :, :f]
    target = x[..., 0]
    noise = x[..., 1] if cfg.out_channels > 1 else None
    return MaskPair(target, noise)
