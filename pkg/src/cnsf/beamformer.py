"""Mask-driven target reconstruction: direct masking and a differentiable MVDR.

Multi-channel spectrograms are laid out (..., U, T, F); masks are (..., T, F).
Spatial correlation matrices are stored per frequency as (..., F, U, U).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .complex import ComplexTensor, c_conj, c_inverse, c_matmul, c_mul, modulus_sq
from .features import MultiSpec
from .tensor import ShapeError, Tensor

EPS_LOAD = 1e-5
EPS_TR = 1e-10
# absolute floor on the loading so an all-zero matrix still inverts
EPS_LOAD_ABS = 1e-12


@dataclass
class Scm:
    data: ComplexTensor  # (..., F, U, U)
    role: str = "speech"

    @property
    def n_channels(self) -> int:
        return self.data.shape[-1]

    def numpy(self) -> np.ndarray:
        return self.data.numpy()

    def hermitian_error(self) -> float:
        z = self.numpy()
        return float(np.max(np.abs(z - np.conj(np.swapaxes(z, -1, -2))), initial=0.0))


@dataclass
class BeamWeights:
    w: ComplexTensor  # (..., U, F)
    ref: int = 0

    def numpy(self) -> np.ndarray:
        return self.w.numpy()


def _spec_data(y) -> ComplexTensor:
    if isinstance(y, MultiSpec):
        return y.data
    if isinstance(y, ComplexTensor):
        return y
    return ComplexTensor.from_numpy(y)


def _eye(n: int, dtype) -> np.ndarray:
    return np.eye(n, dtype=dtype)


def apply_mask(mask: ComplexTensor, y) -> ComplexTensor:
    """Target estimate M * Y at the reference channel."""
    if isinstance(y, MultiSpec):
        y = y.reference
    if mask.shape != y.shape:
        raise ShapeError(f"mask {mask.shape} and spectrogram {y.shape} differ")
    return c_mul(mask, y)


def estimate_scm(mask: ComplexTensor, y, role: str = "speech", eps_load: float = EPS_LOAD) -> Scm:
    """Mask-weighted spatial correlation per frequency.

    The same mask weights every channel.  Frequencies whose mask energy is
    zero fall back to ``eps_load * I``.
    """
    y = _spec_data(y)
    if y.ndim < 3 or mask.shape != y.shape[:-3] + y.shape[-2:]:
        raise ShapeError(f"mask {mask.shape} does not match multi-channel spectrogram {y.shape}")
    u = y.shape[-3]
    nd = y.ndim
    m = mask.reshape(mask.shape[:-2] + (1,) + mask.shape[-2:])
    z = c_mul(m, y)  # (..., U, T, F)
    perm = tuple(range(nd - 3)) + (nd - 1, nd - 3, nd - 2)  # (..., F, U, T)
    zf = z.transpose(*perm)
    num = c_matmul(zf, c_conj(zf).transpose(*(tuple(range(nd - 3)) + (nd - 3, nd - 1, nd - 2))))
    energy = modulus_sq(mask).sum(axis=-2)  # (..., F)
    dead = energy.data <= 0.0
    safe = T.where(dead, 1.0, energy)
    den = safe.reshape(safe.shape + (1, 1))
    fallback = np.broadcast_to(eps_load * _eye(u, num.dtype), num.shape)
    dmask = np.broadcast_to(dead[..., None, None], num.shape)
    re = T.where(dmask, Tensor(fallback, dtype=num.dtype), num.re / den)
    im = T.where(dmask, 0.0, num.im / den)
    return Scm(ComplexTensor(re, im), role)


def _trace(a: ComplexTensor) -> ComplexTensor:
    n = a.shape[-1]
    eye = Tensor(_eye(n, a.dtype), dtype=a.dtype)
    return ComplexTensor((a.re * eye).sum(axis=(-2, -1)), (a.im * eye).sum(axis=(-2, -1)))


def regularized_inverse(phi, eps_load: float = EPS_LOAD) -> ComplexTensor:
    """(Phi + eps_load * tr(Phi) / U * I)^-1 per frequency."""
    a = phi.data if isinstance(phi, Scm) else phi
    n = a.shape[-1]
    tr = _trace(a).re
    load = tr * (eps_load / n) + EPS_LOAD_ABS
    eye = Tensor(_eye(n, a.dtype), dtype=a.dtype)
    loaded = ComplexTensor(a.re + load.reshape(load.shape + (1, 1)) * eye, a.im)
    return c_inverse(loaded)


def mvdr_weights(phi_ss, phi_nn, ref: int = 0, eps_load: float = EPS_LOAD, eps_tr: float = EPS_TR) -> BeamWeights:
    """w = (Phi_nn^-1 Phi_ss) u / tr(Phi_nn^-1 Phi_ss) per frequency.

    Frequencies with |trace| < ``eps_tr`` use the identity beamformer u.
    """
    ss = phi_ss.data if isinstance(phi_ss, Scm) else phi_ss
    nn = phi_nn.data if isinstance(phi_nn, Scm) else phi_nn
    if ss.shape != nn.shape:
        raise ShapeError(f"speech SCM {ss.shape} and noise SCM {nn.shape} differ")
    n = ss.shape[-1]
    if not 0 <= ref < n:
        raise ValueError(f"reference channel {ref} out of range for {n} channels")
    prod = c_matmul(regularized_inverse(nn, eps_load), ss)  # (..., F, U, U)
    tr = _trace(prod)  # (..., F)
    tr_mag = np.hypot(tr.re.data.astype(np.float64), tr.im.data.astype(np.float64))
    degenerate = tr_mag < eps_tr
    tr_safe = ComplexTensor(T.where(degenerate, 1.0, tr.re), T.where(degenerate, 0.0, tr.im))
    col = prod[..., ref]  # (..., F, U)
    den = modulus_sq(tr_safe)
    num = c_mul(col, c_conj(tr_safe).reshape(tr_safe.shape + (1,)))
    den = den.reshape(den.shape + (1,))
    onehot = np.zeros(n, dtype=col.dtype)
    onehot[ref] = 1.0
    dmask = np.broadcast_to(degenerate[..., None], col.shape)
    w_re = T.where(dmask, Tensor(np.broadcast_to(onehot, col.shape), dtype=col.dtype), num.re / den)
    w_im = T.where(dmask, 0.0, num.im / den)
    nd = col.ndim
    perm = tuple(range(nd - 2)) + (nd - 1, nd - 2)
    return BeamWeights(ComplexTensor(w_re, w_im).transpose(*perm), ref)


def beamform(weights: BeamWeights, y) -> ComplexTensor:
    """S(t, f) = w(f)^H Y(t, f)."""
    y = _spec_data(y)
    w = weights.w
    if w.shape[-2] != y.shape[-3] or w.shape[-1] != y.shape[-1]:
        raise ShapeError(f"weights {w.shape} do not match spectrogram {y.shape}")
    wb = w.reshape(w.shape[:-1] + (1, w.shape[-1]))  # (..., U, 1, F)
    return c_mul(c_conj(wb), y).sum(axis=-3)


def mvdr_separate(mask: ComplexTensor, noise_mask: ComplexTensor, y, ref: int = 0) -> ComplexTensor:
    """Full MVDR path: both SCMs, weights, and the beamformed reference estimate."""
    phi_ss = estimate_scm(mask, y, "speech")
    phi_nn = estimate_scm(noise_mask, y, "noise")
    return beamform(mvdr_weights(phi_ss, phi_nn, ref), y)
