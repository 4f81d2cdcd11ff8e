"""STFT front end and complex-valued spectral/spatial/directional features.

Layout conventions: waveforms are ``(..., U, samples)``; spectrograms are
``(..., U, T, F)`` complex tensors with time before frequency.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from . import tensor as T
from .complex import ComplexTensor, c_conj, c_mul, modulus
from .tensor import ShapeError, Tensor

EPS_DIV = 1e-8
K_CLIP = 10.0
SPEED_OF_SOUND = 343.0

# 1-based microphone pairs for the 15-element array
PAPER_PAIRS = [(1, 15), (2, 14), (3, 13), (1, 7), (12, 4), (11, 5), (12, 8), (7, 10), (8, 9)]
# 14 gaps (cm); the published list has 12 entries for 15 microphones, so the
# symmetric pattern is extended by one 7 cm gap on each end
PAPER_GAPS_CM = [7, 6, 5, 4, 3, 2, 1, 1, 2, 3, 4, 5, 6, 7]


@dataclass(frozen=True)
class StftConfig:
    sample_rate: int = 16000
    win_length: int = 512
    hop: int = 256
    n_fft: int = 512

    def __post_init__(self):
        if self.hop > self.win_length:
            raise ValueError("hop must not exceed the window length")
        if self.n_fft < self.win_length:
            raise ValueError("fft size must be at least the window length")

    @property
    def n_freq(self) -> int:
        return self.n_fft // 2 + 1

    @property
    def left_pad(self) -> int:
        return self.win_length - self.hop

    def window(self) -> np.ndarray:
        """Square-root periodic Hann window."""
        n = np.arange(self.win_length)
        return np.sqrt(0.5 - 0.5 * np.cos(2 * np.pi * n / self.win_length))

    def freqs(self) -> np.ndarray:
        return np.arange(self.n_freq) * self.sample_rate / self.n_fft

    def padded_length(self, length: int) -> int:
        total = self.left_pad + length + self.left_pad
        rem = (total - self.win_length) % self.hop
        return total + (self.hop - rem) % self.hop

    def n_frames(self, length: int) -> int:
        return 1 + (self.padded_length(length) - self.win_length) // self.hop

    def cola_error(self) -> float:
        """Max deviation of the interior squared-window overlap sum from its mean."""
        env = _envelope(self, 8 * self.win_length)
        mid = env[self.win_length : -self.win_length]
        return float(np.max(np.abs(mid - mid.mean())))

    @cached_property
    def _bases(self):
        w = self.window()
        n = np.arange(self.win_length)[:, None]
        k = np.arange(self.n_freq)[None, :]
        ang = 2 * np.pi * n * k / self.n_fft
        analysis_re = w[:, None] * np.cos(ang)
        analysis_im = -w[:, None] * np.sin(ang)
        scale = np.full(self.n_freq, 2.0)
        scale[0] = 1.0
        if self.n_fft % 2 == 0:
            scale[-1] = 1.0
        synth_re = (scale[:, None] / self.n_fft) * np.cos(ang.T) * w[None, :]
        synth_im = -(scale[:, None] / self.n_fft) * np.sin(ang.T) * w[None, :]
        return analysis_re, analysis_im, synth_re, synth_im


def _envelope(cfg: StftConfig, padded_len: int) -> np.ndarray:
    w2 = cfg.window() ** 2
    t = 1 + (padded_len - cfg.win_length) // cfg.hop
    env = np.zeros(padded_len)
    for k in range(t):
        env[k * cfg.hop : k * cfg.hop + cfg.win_length] += w2
    return env


@dataclass
class MultiSpec:
    data: ComplexTensor
    config: StftConfig = field(default_factory=StftConfig)
    ref: int = 0
    length: int | None = None

    def __post_init__(self):
        if self.data.shape[-1] != self.config.n_freq:
            raise ShapeError(f"spectrogram has {self.data.shape[-1]} bins, config expects {self.config.n_freq}")
        if self.data.ndim >= 3 and not 0 <= self.ref < self.data.shape[-3]:
            raise ValueError(f"reference channel {self.ref} out of range")

    @property
    def n_channels(self) -> int:
        return self.data.shape[-3]

    def channel(self, u: int) -> ComplexTensor:
        return self.data[(Ellipsis, u, slice(None), slice(None))]

    @property
    def reference(self) -> ComplexTensor:
        return self.channel(self.ref)


@dataclass
class ArrayGeometry:
    positions: np.ndarray
    pairs: list[tuple[int, int]]
    speed_of_sound: float = SPEED_OF_SOUND

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=np.float64).reshape(-1, 3)
        self.pairs = [tuple(int(i) for i in p) for p in self.pairs]
        u = len(self.positions)
        for p1, p2 in self.pairs:
            if not (0 <= p1 < u and 0 <= p2 < u) or p1 == p2:
                raise ValueError(f"invalid microphone pair ({p1}, {p2}) for {u} microphones")

    @property
    def n_mics(self) -> int:
        return len(self.positions)

    @property
    def n_pairs(self) -> int:
        return len(self.pairs)

    @property
    def axis(self) -> np.ndarray:
        d = self.positions[-1] - self.positions[0]
        norm = np.linalg.norm(d)
        return d / norm if norm > 0 else np.array([1.0, 0.0, 0.0])

    def axial(self) -> np.ndarray:
        """Microphone coordinates along the array axis, relative to the centroid."""
        return (self.positions - self.positions.mean(axis=0)) @ self.axis

    def pair_spacings(self) -> np.ndarray:
        x = self.axial()
        return np.array([x[p1] - x[p2] for p1, p2 in self.pairs])

    def delays(self, theta) -> np.ndarray:
        """Far-field pair delays (seconds); shape theta.shape + (P,)."""
        theta = np.asarray(theta, dtype=np.float64)
        return self.pair_spacings() * np.cos(theta)[..., None] / self.speed_of_sound

    def centered(self, center) -> np.ndarray:
        """Absolute mic positions with the array centroid moved to ``center``."""
        return self.positions - self.positions.mean(axis=0) + np.asarray(center, dtype=np.float64)

    @classmethod
    def paper_array(cls) -> "ArrayGeometry":
        x = np.concatenate([[0.0], np.cumsum(PAPER_GAPS_CM) / 100.0])
        pos = np.stack([x, np.zeros_like(x), np.zeros_like(x)], axis=1)
        return cls(pos, [(a - 1, b - 1) for a, b in PAPER_PAIRS])

    @classmethod
    def desk_pair(cls, spacing: float = 0.1) -> "ArrayGeometry":
        pos = np.array([[0.0, 0.0, 0.0], [spacing, 0.0, 0.0]])
        return cls(pos, [(0, 1)])

    @classmethod
    def preset(cls, name: str) -> "ArrayGeometry":
        if name == "paper":
            return cls.paper_array()
        if name == "desk":
            return cls.desk_pair()
        raise ValueError(f"unknown array preset {name!r}")


@dataclass
class FeaturePack:
    data: ComplexTensor  # (..., P + 2, T, F)
    n_pairs: int

    @property
    def n_channels(self) -> int:
        return self.data.shape[-3]


# ---------------------------------------------------------------------------
# STFT / iSTFT
# ---------------------------------------------------------------------------


def stft(wave, cfg: StftConfig | None = None, ref: int = 0) -> MultiSpec:
    """Complex spectrogram of ``wave`` (..., U, samples) as a fixed convolution."""
    cfg = cfg or StftConfig()
    wave = T.as_tensor(wave)
    length = wave.shape[-1]
    if length < cfg.win_length:
        raise ShapeError(f"input of {length} samples is shorter than the {cfg.win_length}-sample window")
    lead = wave.shape[:-1]
    flat = wave.reshape(-1, length)
    total = cfg.padded_length(length)
    padded = T.pad(flat, ((0, 0), (cfg.left_pad, total - cfg.left_pad - length)))
    frames = T.frame(padded, cfg.win_length, cfg.hop)
    are, aim, _, _ = cfg._bases
    re = frames @ Tensor(are, dtype=wave.dtype)
    im = frames @ Tensor(aim, dtype=wave.dtype)
    n_t = frames.shape[1]
    shape = lead + (n_t, cfg.n_freq)
    return MultiSpec(ComplexTensor(re.reshape(shape), im.reshape(shape)), cfg, ref, length)


def istft(spec, cfg: StftConfig | None = None, length: int | None = None) -> Tensor:
    """Overlap-add synthesis of (..., T, F) back to (..., samples)."""
    if isinstance(spec, MultiSpec):
        cfg = cfg or spec.config
        length = length if length is not None else spec.length
        spec = spec.data
    cfg = cfg or StftConfig()
    if spec.shape[-1] != cfg.n_freq:
        raise ShapeError(f"spectrogram has {spec.shape[-1]} bins, config expects {cfg.n_freq}")
    lead = spec.shape[:-2]
    n_t = spec.shape[-2]
    padded_len = (n_t - 1) * cfg.hop + cfg.win_length
    if length is None:
        length = padded_len - 2 * cfg.left_pad
    if cfg.padded_length(length) != padded_len:
        raise ShapeError(f"{n_t} frames cannot produce {length} samples with this config")
    _, _, sre, sim = cfg._bases
    re = spec.re.reshape(-1, n_t, cfg.n_freq)
    im = spec.im.reshape(-1, n_t, cfg.n_freq)
    frames = re @ Tensor(sre, dtype=re.dtype) + im @ Tensor(sim, dtype=re.dtype)
    signal = T.overlap_add(frames, cfg.hop, padded_len)
    env = _envelope(cfg, padded_len)[cfg.left_pad : cfg.left_pad + length]
    out = signal[:, cfg.left_pad : cfg.left_pad + length] * Tensor(1.0 / np.maximum(env, 1e-8), dtype=re.dtype)
    return out.reshape(lead + (length,))


# ---------------------------------------------------------------------------
# masks and spatial features
# ---------------------------------------------------------------------------


def compute_crm(S: ComplexTensor, Y: ComplexTensor, floor: float = EPS_DIV, clip: float | None = None) -> ComplexTensor:
    """Complex ratio mask S / Y with |Y|^2 floored; optional modulus clipping."""
    if S.shape != Y.shape:
        raise ShapeError(f"S {S.shape} and Y {Y.shape} differ")
    den = T.square(Y.re) + T.square(Y.im)
    den = T.where(den.data < floor, floor, den)
    num = c_mul(S, c_conj(Y))
    m = ComplexTensor(num.re / den, num.im / den)
    if clip is not None:
        mag = np.sqrt(m.re.data.astype(np.float64) ** 2 + m.im.data.astype(np.float64) ** 2)
        scale = np.where(mag > clip, clip / np.maximum(mag, 1e-30), 1.0)
        m = ComplexTensor(m.re * Tensor(scale, dtype=m.dtype), m.im * Tensor(scale, dtype=m.dtype))
    return m


def _as_complex_array(x) -> np.ndarray:
    if isinstance(x, MultiSpec):
        x = x.data
    if isinstance(x, ComplexTensor):
        return x.numpy()
    return np.asarray(x)


def compute_ipd(spec, geom: ArrayGeometry) -> ComplexTensor:
    """Unit-modulus cos/sin IPD per pair: (..., P, T, F)."""
    y = _as_complex_array(spec)
    if y.shape[-3] < geom.n_mics and max(max(p) for p in geom.pairs) >= y.shape[-3]:
        raise ValueError(f"spectrogram has {y.shape[-3]} channels; pairs reference more")
    phase = np.angle(y)
    diff = np.stack([phase[..., p1, :, :] - phase[..., p2, :, :] for p1, p2 in geom.pairs], axis=-3)
    return ComplexTensor(Tensor(np.cos(diff)), Tensor(np.sin(diff)))


def compute_tpd(geom: ArrayGeometry, theta, freqs) -> ComplexTensor:
    """exp(j 2 pi f tau_p(theta)): (..., P, F) with theta in radians."""
    tau = geom.delays(theta)  # (..., P)
    phase = 2 * np.pi * tau[..., :, None] * np.asarray(freqs, dtype=np.float64)
    return ComplexTensor(Tensor(np.cos(phase)), Tensor(np.sin(phase)))


def compute_df(ipd: ComplexTensor, tpd: ComplexTensor) -> ComplexTensor:
    """Directional feature sum_p TPD_p * conj(IPD_p): (..., T, F)."""
    if ipd.shape[-3] != tpd.shape[-2]:
        raise ShapeError(f"IPD has {ipd.shape[-3]} pairs, TPD has {tpd.shape[-2]}")
    if ipd.shape[-1] != tpd.shape[-1]:
        raise ShapeError("IPD and TPD frequency extents differ")
    tp = tpd.reshape(tpd.shape[:-1] + (1, tpd.shape[-1]))  # (..., P, 1, F)
    prod = c_mul(tp, c_conj(ipd))
    return prod.sum(axis=-3)


def assemble_features(spec: MultiSpec, geom: ArrayGeometry, theta) -> FeaturePack:
    """Stack [Y_ref, IPD_1..IPD_P, DF(theta)] along the channel axis."""
    if spec.n_channels != geom.n_mics:
        raise ShapeError(f"spectrogram has {spec.n_channels} channels, geometry has {geom.n_mics} mics")
    y_ref = spec.reference
    ipd = compute_ipd(spec, geom)
    tpd = compute_tpd(geom, theta, spec.config.freqs())
    df = compute_df(ipd, tpd)
    lead = y_ref.shape[:-2]
    t, f = y_ref.shape[-2:]

    def chan(x):
        return x.reshape(lead + (1, t, f))

    re = T.concat([chan(y_ref.re), ipd.re, chan(df.re)], axis=-3)
    im = T.concat([chan(y_ref.im), ipd.im, chan(df.im)], axis=-3)
    return FeaturePack(ComplexTensor(re, im), geom.n_pairs)


def unit_modulus_error(z: ComplexTensor) -> float:
    return float(np.max(np.abs(modulus(z, eps=0.0).data - 1.0)))
