"""Real-valued tensors with define-by-run reverse-mode differentiation.

A :class:`Tape` records every op applied while it is active.  Leaves are
tensors created with ``requires_grad=True``; :func:`backward` walks the
tape in reverse and returns a :class:`Gradients` map keyed by tensor identity.

Storage is float32 by default.  :func:`precision` switches the default to
float64 for gradient checking; ops preserve the dtype of their inputs.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np

from . import kernels


class ShapeError(ValueError):
    """Operand dimensions are incompatible."""


class LineageError(RuntimeError):
    """A tensor was not recorded on the tape being differentiated."""


class NumericalError(FloatingPointError):
    """A tensor holds NaN or Inf."""


_DEFAULT_DTYPE = [np.float32]
_ACTIVE_TAPES: list["Tape"] = []


def default_dtype():
    return _DEFAULT_DTYPE[-1]


@contextlib.contextmanager
def precision(dtype):
    """Temporarily change the dtype used for newly created tensors."""
    _DEFAULT_DTYPE.append(np.dtype(dtype).type)
    try:
        yield
    finally:
        _DEFAULT_DTYPE.pop()


class Tensor:
    """Immutable n-d real array, optionally tracked for gradients."""

    __slots__ = ("data", "requires_grad", "name", "__weakref__")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None, dtype=None):
        arr = np.asarray(data)
        if dtype is None:
            dtype = default_dtype()
        # private copy: freezing it must not freeze the caller's array
        self.data = np.array(arr, dtype=dtype, order="C")
        self.data.flags.writeable = False
        self.requires_grad = requires_grad
        self.name = name

    # -- basic properties -------------------------------------------------
    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def validate(self) -> "Tensor":
        """Raise :class:`NumericalError` if any value is non-finite."""
        if not np.all(np.isfinite(self.data)):
            raise NumericalError(f"non-finite values in tensor {self.name or ''} of shape {self.shape}")
        return self

    def detach(self) -> "Tensor":
        return Tensor(self.data, dtype=self.dtype)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"

    # -- operators --------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, p):
        return power(self, p)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)


class _Node:
    __slots__ = ("out", "parents", "vjp")

    def __init__(self, out, parents, vjp):
        self.out = out
        self.parents = parents
        self.vjp = vjp


class Tape:
    """Ordered record of ops; use as a context manager to activate it."""

    def __init__(self):
        self.nodes: list[_Node] = []
        self._produced: dict[int, Tensor] = {}

    def __enter__(self):
        _ACTIVE_TAPES.append(self)
        return self

    def __exit__(self, *exc):
        _ACTIVE_TAPES.remove(self)

    def record(self, out: Tensor, parents: Sequence[Tensor], vjp: Callable) -> None:
        self.nodes.append(_Node(out, tuple(parents), vjp))
        self._produced[id(out)] = out

    def knows(self, t: Tensor) -> bool:
        if id(t) in self._produced:
            return True
        return any(id(p) == id(t) for n in self.nodes for p in n.parents)

    def __len__(self) -> int:
        return len(self.nodes)


class Gradients:
    """Gradient map returned by :func:`backward`, indexed by tensor."""

    def __init__(self, tape: Tape, grads: dict[int, np.ndarray]):
        self._tape = tape
        self._grads = grads

    def __getitem__(self, t: Tensor) -> np.ndarray:
        g = self._grads.get(id(t))
        if g is not None:
            return g
        if not self._tape.knows(t):
            raise LineageError("tensor was not recorded on this tape")
        return np.zeros(t.shape, dtype=t.dtype)

    def __contains__(self, t: Tensor) -> bool:
        return id(t) in self._grads

    def get(self, t: Tensor, default=None):
        return self._grads.get(id(t), default)


def _active_tape() -> Tape | None:
    return _ACTIVE_TAPES[-1] if _ACTIVE_TAPES else None


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, parents: Sequence[Tensor], vjp: Callable) -> Tensor:
    tape = _active_tape()
    track = tape is not None and any(p.requires_grad for p in parents)
    out = Tensor.__new__(Tensor)
    data = np.asarray(data)
    out.data = data if data.flags.c_contiguous else data.copy(order="C")
    out.data.flags.writeable = False
    out.requires_grad = track
    out.name = None
    if track:
        tape.record(out, parents, vjp)
    return out


def backward(loss: Tensor, tape: Tape) -> Gradients:
    """Reverse-mode sweep from a scalar ``loss`` over ``tape``."""
    if loss.size != 1:
        raise ShapeError(f"loss must be scalar, got shape {loss.shape}")
    if id(loss) not in tape._produced:
        raise LineageError("loss was not produced on this tape")
    grads: dict[int, np.ndarray] = {id(loss): np.ones(loss.shape, dtype=loss.dtype)}
    for node in reversed(tape.nodes):
        g = grads.pop(id(node.out), None)
        if g is None:
            continue
        pgrads = node.vjp(g)
        for p, pg in zip(node.parents, pgrads):
            if pg is None or not p.requires_grad:
                continue
            key = id(p)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = np.asarray(pg, dtype=p.dtype)
    return Gradients(tape, grads)


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)), dtype=np.float64).astype(g.dtype)
    axes = tuple(i for i, (gs, s) in enumerate(zip(g.shape, shape)) if s == 1 and gs != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True, dtype=np.float64).astype(g.dtype)
    return g.reshape(shape)


def _broadcast_shape(a, b):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError as exc:
        raise ShapeError(f"cannot broadcast {a.shape} with {b.shape}") from exc


# ---------------------------------------------------------------------------
# elementwise arithmetic
# ---------------------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b)
    sa, sb = a.shape, b.shape
    return _make(a.data + b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b)
    sa, sb = a.shape, b.shape
    return _make(a.data - b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b)
    ad, bd = a.data, b.data
    return _make(
        ad * bd,
        (a, b),
        lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)),
    )


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b)
    ad, bd = a.data, b.data
    out = ad / bd

    def vjp(g):
        ga = g / bd
        return _unbroadcast(ga, ad.shape), _unbroadcast(-ga * out, bd.shape)

    return _make(out, (a, b), vjp)


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _make(-a.data, (a,), lambda g: (-g,))


def power(a, p: float) -> Tensor:
    a = as_tensor(a)
    ad = a.data
    return _make(ad**p, (a,), lambda g: (g * p * ad ** (p - 1),))


def square(a) -> Tensor:
    a = as_tensor(a)
    ad = a.data
    return _make(ad * ad, (a,), lambda g: (2 * g * ad,))


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return _make(out, (a,), lambda g: (g * out,))


def log(a) -> Tensor:
    a = as_tensor(a)
    ad = a.data
    return _make(np.log(ad), (a,), lambda g: (g / ad,))


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    out = np.sqrt(a.data)
    return _make(out, (a,), lambda g: (g * 0.5 / out,))


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.data)
    return _make(out, (a,), lambda g: (g * (1 - out * out),))


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    out = 1.0 / (1.0 + np.exp(-a.data))
    return _make(out.astype(a.dtype), (a,), lambda g: (g * out * (1 - out),))


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0
    return _make(np.where(mask, a.data, 0).astype(a.dtype), (a,), lambda g: (g * mask,))


def atan2(y, x) -> Tensor:
    y, x = as_tensor(y), as_tensor(x)
    yd, xd = y.data, x.data
    r2 = xd * xd + yd * yd
    r2 = np.where(r2 == 0, 1, r2)

    def vjp(g):
        return _unbroadcast(g * xd / r2, yd.shape), _unbroadcast(-g * yd / r2, xd.shape)

    return _make(np.arctan2(yd, xd), (y, x), vjp)


def where(cond, a, b) -> Tensor:
    """Select elementwise; ``cond`` is a constant boolean array."""
    a, b = as_tensor(a), as_tensor(b)
    cond = np.asarray(cond, dtype=bool)
    sa, sb = a.shape, b.shape

    def vjp(g):
        return _unbroadcast(np.where(cond, g, 0), sa), _unbroadcast(np.where(cond, 0, g), sb)

    return _make(np.where(cond, a.data, b.data), (a, b), vjp)


# ---------------------------------------------------------------------------
# reductions and linear algebra (64-bit accumulation)
# ---------------------------------------------------------------------------


def sum_(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    shape = a.shape
    out = a.data.sum(axis=axis, keepdims=keepdims, dtype=np.float64).astype(a.dtype)

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).astype(a.dtype),)

    return _make(np.asarray(out), (a,), vjp)


def mean(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    if axis is None:
        n = a.size
    else:
        axes = (axis,) if isinstance(axis, int) else axis
        n = int(np.prod([a.shape[ax] for ax in axes]))
    return sum_(a, axis, keepdims) * (1.0 / n)


def matmul(a, b) -> Tensor:
    """Batched matrix product following numpy broadcasting of batch dims."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul shapes {a.shape} and {b.shape} do not agree")
    ad, bd = a.data, b.data
    out = np.matmul(ad, bd)

    def vjp(g):
        ga = np.matmul(g, np.swapaxes(bd, -1, -2))
        gb = np.matmul(np.swapaxes(ad, -1, -2), g)
        return _unbroadcast(ga, ad.shape), _unbroadcast(gb, bd.shape)

    return _make(out, (a, b), vjp)


# ---------------------------------------------------------------------------
# shape manipulation
# ---------------------------------------------------------------------------


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    old = a.shape
    try:
        out = a.data.reshape(shape)
    except ValueError as exc:
        raise ShapeError(str(exc)) from exc
    return _make(out, (a,), lambda g: (g.reshape(old),))


def transpose(a, axes=None) -> Tensor:
    a = as_tensor(a)
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    inv = tuple(np.argsort(axes))
    return _make(np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inv),))


def getitem(a, idx) -> Tensor:
    a = as_tensor(a)
    shape, dtype = a.shape, a.dtype

    def vjp(g):
        full = np.zeros(shape, dtype=dtype)
        np.add.at(full, idx, g) if _is_fancy(idx) else full.__setitem__(idx, g)
        return (full,)

    return _make(np.asarray(a.data[idx]), (a,), vjp)


def _is_fancy(idx) -> bool:
    items = idx if isinstance(idx, tuple) else (idx,)
    return any(isinstance(i, (list, np.ndarray)) for i in items)


def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in ts], axis=axis)
    except ValueError as exc:
        raise ShapeError(str(exc)) from exc
    sizes = np.cumsum([t.shape[axis] for t in ts])[:-1]

    def vjp(g):
        return tuple(np.split(g, sizes, axis=axis))

    return _make(out, ts, vjp)


def stack(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    return concat([expand_dims(t, axis) for t in ts], axis=axis)


def expand_dims(a, axis: int) -> Tensor:
    a = as_tensor(a)
    shape = list(a.shape)
    ax = axis if axis >= 0 else a.ndim + 1 + axis
    shape.insert(ax, 1)
    return reshape(a, tuple(shape))


def pad(a, widths) -> Tensor:
    """Zero padding; ``widths`` as for :func:`numpy.pad`."""
    a = as_tensor(a)
    sl = tuple(slice(lo, lo + n) for (lo, _), n in zip(widths, a.shape))
    return _make(np.pad(a.data, widths), (a,), lambda g: (g[sl],))


# ---------------------------------------------------------------------------
# fused ops: convolution, framing, lstm
# ---------------------------------------------------------------------------


def _conv_geometry(h, w, kh, kw, sh, sw, ph, pw):
    hp, wp = h + 2 * ph, w + 2 * pw
    return hp, wp, (hp - kh) // sh + 1, (wp - kw) // sw + 1


def conv2d(x, w, b=None, stride=(1, 1), padding=(0, 0)) -> Tensor:
    """Real 2-D cross-correlation, channels last.

    x: (N, H, W, C); w: (kh, kw, C, O); b: (O,).  One matmul produces every
    kernel-offset product at every padded position; the output is the sum
    of the kh*kw shifted slices.
    """
    x, w = as_tensor(x), as_tensor(w)
    n, h, wd, c = x.shape
    kh, kw, cw, o = w.shape
    if c != cw:
        raise ShapeError(f"conv2d input has {c} channels, kernel expects {cw}")
    sh, sw = stride
    ph, pw = padding
    hp, wp, ho, wo = _conv_geometry(h, wd, kh, kw, sh, sw, ph, pw)
    if ho <= 0 or wo <= 0:
        raise ShapeError(f"conv2d kernel {kh}x{kw} larger than padded input {hp}x{wp}")
    xp = np.pad(x.data, ((0, 0), (ph, ph), (pw, pw), (0, 0))) if (ph or pw) else x.data
    wall = w.data.transpose(2, 0, 1, 3).reshape(c, kh * kw * o)
    prods = (xp.reshape(-1, c) @ wall).reshape(n, hp, wp, kh * kw, o)
    out = kernels.shift_sum(prods, kh, kw, sh, sw, ho, wo)
    if b is not None:
        b = as_tensor(b)
        out += b.data

    def vjp(g):
        gp = kernels.shift_spread(np.ascontiguousarray(g), kh, kw, sh, sw, hp, wp)
        gp2 = gp.reshape(-1, kh * kw * o)
        gx = (gp2 @ wall.T).reshape(n, hp, wp, c)[:, ph : ph + h, pw : pw + wd]
        gw = (xp.reshape(-1, c).T @ gp2).reshape(c, kh, kw, o).transpose(1, 2, 0, 3)
        grads = [gx, gw]
        if b is not None:
            grads.append(g.sum(axis=(0, 1, 2), dtype=np.float64).astype(g.dtype))
        return tuple(grads)

    parents = (x, w) if b is None else (x, w, b)
    return _make(out, parents, vjp)


def conv_transpose2d(x, w, b=None, stride=(1, 1), padding=(0, 0)) -> Tensor:
    """Adjoint of :func:`conv2d` w.r.t. its input, channels last.

    x: (N, H, W, C_in); w: (kh, kw, C_in, C_out); output spatial size is
    ((H - 1) * s - 2 * p + k).
    """
    x, w = as_tensor(x), as_tensor(w)
    n, h, wd, c = x.shape
    kh, kw, cw, o = w.shape
    if c != cw:
        raise ShapeError(f"conv_transpose2d input has {c} channels, kernel expects {cw}")
    sh, sw = stride
    ph, pw = padding
    hp = (h - 1) * sh + kh
    wp = (wd - 1) * sw + kw
    ho, wo = hp - 2 * ph, wp - 2 * pw
    if ho <= 0 or wo <= 0:
        raise ShapeError("conv_transpose2d produces an empty output")
    wall = w.data.transpose(2, 0, 1, 3).reshape(c, kh * kw * o)
    xm = x.data.reshape(-1, c)
    prods = (xm @ wall).reshape(n, h, wd, kh * kw, o)
    full = kernels.shift_scatter(prods, kh, kw, sh, sw, hp, wp)
    out = full[:, ph : ph + ho, pw : pw + wo]
    if b is not None:
        b = as_tensor(b)
        out = out + b.data

    def vjp(g):
        gfull = np.pad(g, ((0, 0), (ph, ph), (pw, pw), (0, 0))) if (ph or pw) else np.ascontiguousarray(g)
        gq = kernels.shift_gather(gfull, kh, kw, sh, sw, h, wd)
        gq2 = gq.reshape(-1, kh * kw * o)
        gx = (gq2 @ wall.T).reshape(n, h, wd, c)
        gw = (xm.T @ gq2).reshape(c, kh, kw, o).transpose(1, 2, 0, 3)
        grads = [gx, gw]
        if b is not None:
            grads.append(g.sum(axis=(0, 1, 2), dtype=np.float64).astype(g.dtype))
        return tuple(grads)

    parents = (x, w) if b is None else (x, w, b)
    return _make(out, parents, vjp)


def frame(x, frame_len: int, hop: int) -> Tensor:
    """(B, L) -> (B, T, frame_len) sliding frames."""
    x = as_tensor(x)
    if x.shape[-1] < frame_len:
        raise ShapeError(f"signal of {x.shape[-1]} samples shorter than frame {frame_len}")
    length = x.shape[-1]
    out = kernels.frame_signal(x.data, frame_len, hop)

    def vjp(g):
        return (kernels.overlap_add(g, hop, length),)

    return _make(out, (x,), vjp)


def overlap_add(frames, hop: int, length: int) -> Tensor:
    """(B, T, N) -> (B, length) overlap-add of frames spaced by ``hop``."""
    frames = as_tensor(frames)
    n = frames.shape[-1]
    out = kernels.overlap_add(frames.data, hop, length)
    t = frames.shape[1]

    def vjp(g):
        return (kernels.frame_signal(np.ascontiguousarray(g), n, hop)[:, :t],)

    return _make(out, (frames,), vjp)


def lstm(x, wx, wh, b, reverse: bool = False) -> Tensor:
    """Single-direction LSTM over (B, T, D); returns hidden states (B, T, H)."""
    x, wx, wh, b = (as_tensor(v) for v in (x, wx, wh, b))
    bsz, t, d = x.shape
    if wx.shape[0] != d:
        raise ShapeError(f"lstm input dim {d} != weight dim {wx.shape[0]}")
    # the recurrence kernels need one dtype throughout
    dt = np.result_type(x.dtype, wx.dtype, wh.dtype, b.dtype)
    xm = x.data.reshape(-1, d).astype(dt, copy=False)
    whd = np.ascontiguousarray(wh.data, dtype=dt)
    gx = (xm @ wx.data.astype(dt, copy=False) + b.data).reshape(bsz, t, -1)
    hs, cs, gates = kernels.lstm_forward(gx, whd, reverse)

    def vjp(g):
        dgx, dwh = kernels.lstm_backward(np.ascontiguousarray(g, dtype=dt), hs, cs, gates, whd, reverse)
        dg2 = dgx.reshape(-1, dgx.shape[-1])
        dx = (dg2 @ wx.data.T).reshape(x.shape)
        dwx = xm.T @ dg2
        db = dg2.sum(axis=0, dtype=np.float64).astype(dg2.dtype)
        return dx, dwx, dwh, db

    return _make(hs, (x, wx, wh, b), vjp)


def parameters_of(tensors: Iterable[Tensor]) -> list[Tensor]:
    return [t for t in tensors if t.requires_grad]
