"""Complex tensors as (re, im) pairs of real :class:`~cnsf.tensor.Tensor`.

Every complex op is expressed with real ops, so differentiation happens on
the real and imaginary parts independently; no Wirtinger calculus is exposed.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from . import kernels
from . import tensor as T
from .tensor import ShapeError, Tensor

EPS_MOD = 1e-12


class ComplexTensor:
    __slots__ = ("re", "im")

    def __init__(self, re, im=None):
        re = T.as_tensor(re)
        im = T.Tensor(np.zeros(re.shape), dtype=re.dtype) if im is None else T.as_tensor(im)
        if re.shape != im.shape:
            raise ShapeError(f"real part {re.shape} and imaginary part {im.shape} differ")
        self.re = re
        self.im = im

    @classmethod
    def from_numpy(cls, z, requires_grad: bool = False, dtype=None) -> "ComplexTensor":
        z = np.asarray(z)
        return cls(
            Tensor(z.real, requires_grad=requires_grad, dtype=dtype),
            Tensor(z.imag, requires_grad=requires_grad, dtype=dtype),
        )

    def numpy(self) -> np.ndarray:
        return self.re.data.astype(np.float64) + 1j * self.im.data.astype(np.float64)

    @property
    def shape(self) -> tuple:
        return self.re.shape

    @property
    def ndim(self) -> int:
        return self.re.ndim

    @property
    def dtype(self):
        return self.re.dtype

    def validate(self) -> "ComplexTensor":
        self.re.validate()
        self.im.validate()
        return self

    def __repr__(self) -> str:
        return f"ComplexTensor(shape={self.shape}, dtype={self.dtype})"

    # -- arithmetic -------------------------------------------------------
    def __add__(self, other):
        other = _lift(other)
        return ComplexTensor(self.re + other.re, self.im + other.im)

    __radd__ = __add__

    def __sub__(self, other):
        other = _lift(other)
        return ComplexTensor(self.re - other.re, self.im - other.im)

    def __neg__(self):
        return ComplexTensor(-self.re, -self.im)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return ComplexTensor(self.re * other, self.im * other)
        if isinstance(other, Tensor):
            return ComplexTensor(self.re * other, self.im * other)
        return c_mul(self, _lift(other))

    __rmul__ = __mul__

    def __matmul__(self, other):
        return c_matmul(self, other)

    def __getitem__(self, idx):
        return ComplexTensor(self.re[idx], self.im[idx])

    def conj(self):
        return c_conj(self)

    def reshape(self, *shape):
        return ComplexTensor(self.re.reshape(*shape), self.im.reshape(*shape))

    def transpose(self, *axes):
        return ComplexTensor(self.re.transpose(*axes), self.im.transpose(*axes))

    def sum(self, axis=None, keepdims=False):
        return ComplexTensor(self.re.sum(axis, keepdims), self.im.sum(axis, keepdims))

    def times_j(self):
        return ComplexTensor(-self.im, self.re)


def _lift(x) -> ComplexTensor:
    if isinstance(x, ComplexTensor):
        return x
    if isinstance(x, (complex, np.complexfloating)) or (isinstance(x, np.ndarray) and np.iscomplexobj(x)):
        arr = np.asarray(x)
        return ComplexTensor(Tensor(arr.real), Tensor(arr.imag))
    t = T.as_tensor(x)
    return ComplexTensor(t, Tensor(np.zeros(t.shape), dtype=t.dtype))


def c_mul(a: ComplexTensor, b: ComplexTensor) -> ComplexTensor:
    """Elementwise complex product with broadcasting."""
    a, b = _lift(a), _lift(b)
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError as exc:
        raise ShapeError(f"cannot broadcast {a.shape} with {b.shape}") from exc
    re = a.re * b.re - a.im * b.im
    im = a.re * b.im + a.im * b.re
    return ComplexTensor(re, im)


def c_conj(a: ComplexTensor) -> ComplexTensor:
    return ComplexTensor(a.re, -a.im)


def modulus(a: ComplexTensor, eps: float = EPS_MOD) -> Tensor:
    return T.sqrt(T.square(a.re) + T.square(a.im) + eps)


def modulus_sq(a: ComplexTensor) -> Tensor:
    return T.square(a.re) + T.square(a.im)


def angle(a: ComplexTensor) -> Tensor:
    return T.atan2(a.im, a.re)


def c_matmul(a: ComplexTensor, b: ComplexTensor) -> ComplexTensor:
    """Complex matrix product via four real matmuls (batch dims broadcast)."""
    a, b = _lift(a), _lift(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"c_matmul shapes {a.shape} and {b.shape} do not agree")
    re = a.re @ b.re - a.im @ b.im
    im = a.re @ b.im + a.im @ b.re
    return ComplexTensor(re, im)


def c_concat(items: Sequence[ComplexTensor], axis: int = 0) -> ComplexTensor:
    return ComplexTensor(T.concat([c.re for c in items], axis), T.concat([c.im for c in items], axis))


def c_stack(items: Sequence[ComplexTensor], axis: int = 0) -> ComplexTensor:
    return ComplexTensor(T.stack([c.re for c in items], axis), T.stack([c.im for c in items], axis))


def c_div(a: ComplexTensor, b: ComplexTensor, floor: float = 0.0) -> ComplexTensor:
    """a / b with |b|^2 floored at ``floor``."""
    a, b = _lift(a), _lift(b)
    den = modulus_sq(b)
    if floor > 0:
        den = T.where(den.data < floor, floor, den)
    num = c_mul(a, c_conj(b))
    return ComplexTensor(num.re / den, num.im / den)


def c_inverse(a: ComplexTensor) -> ComplexTensor:
    """Inverse of a stack of square complex matrices (..., n, n).

    Forward pass uses Gauss-Jordan elimination with partial pivoting; the
    backward pass uses dA = -X^H dX X^H where X = A^-1.
    """
    if a.ndim < 2 or a.shape[-1] != a.shape[-2]:
        raise ShapeError(f"c_inverse expects square matrices, got {a.shape}")
    z = a.re.data.astype(np.float64) + 1j * a.im.data.astype(np.float64)
    inv = kernels.complex_inverse(z)
    dtype = a.dtype
    inv_h = np.conj(np.swapaxes(inv, -1, -2))

    def vjp_pair(g):
        ga = -inv_h @ g @ inv_h
        return ga.real.astype(dtype), ga.imag.astype(dtype)

    # the adjoint is linear, so each output contributes independently
    out_re = T._make(inv.real.astype(dtype), (a.re, a.im), lambda g: vjp_pair(g.astype(np.float64)))
    out_im = T._make(inv.imag.astype(dtype), (a.re, a.im), lambda g: vjp_pair(1j * g.astype(np.float64)))
    return ComplexTensor(out_re, out_im)
