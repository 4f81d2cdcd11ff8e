"""Image-source room impulse responses for shoebox rooms.

Walls share one absorption coefficient obtained from the requested T60 with
Sabine's formula; each image contributes a Hann-windowed sinc pulse at its
fractional delay, scaled by 1/(4 pi d) and the product of wall reflection
coefficients it has met.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import kernels
from ..features import SPEED_OF_SOUND

FS = 16000
HALF_WIDTH = 16  # windowed-sinc half-width in samples
MAX_ORDER = 20
TAIL_FACTOR = 1.5
SABINE_CONST = 24.0 * np.log(10.0)


@dataclass(frozen=True)
class RoomSpec:
    dims: tuple[float, float, float]
    t60: float  # seconds; <= 0 means anechoic
    max_order: int = MAX_ORDER

    def __post_init__(self):
        if len(self.dims) != 3 or min(self.dims) <= 0:
            raise ValueError(f"room dimensions must be three positive lengths, got {self.dims}")

    @property
    def anechoic(self) -> bool:
        return self.t60 <= 0

    def contains(self, pos, margin: float = 0.0) -> bool:
        p = np.asarray(pos, dtype=np.float64)
        return bool(np.all(p > margin) and np.all(p < np.asarray(self.dims) - margin))


def sabine_absorption(dims, t60: float, c: float = SPEED_OF_SOUND) -> float:
    """Uniform absorption coefficient giving ``t60`` under Sabine's formula, clipped to 1."""
    if t60 <= 0:
        return 1.0
    lx, ly, lz = dims
    volume = lx * ly * lz
    surface = 2.0 * (lx * ly + lx * lz + ly * lz)
    alpha = SABINE_CONST * volume / (c * surface * t60)
    return float(min(alpha, 1.0))


def rir_length(room: RoomSpec, src, mic, fs: int = FS, c: float = SPEED_OF_SOUND, half_width: int = HALF_WIDTH) -> int:
    direct = np.linalg.norm(np.asarray(src, float) - np.asarray(mic, float)) / c
    tail = TAIL_FACTOR * room.t60 if not room.anechoic else 0.0
    return int(np.ceil(max(tail, direct) * fs)) + 2 * half_width + 1


def image_order(room: RoomSpec, n_taps: int, fs: int = FS, c: float = SPEED_OF_SOUND) -> int:
    """Per-axis reflection order implied by the tail length, capped at ``room.max_order``."""
    if room.anechoic:
        return 0
    reach = n_taps / fs * c
    need = int(np.ceil(reach / (2.0 * min(room.dims)))) + 1
    return min(room.max_order, need)


def simulate_rir(
    room: RoomSpec,
    src,
    mic,
    fs: int = FS,
    c: float = SPEED_OF_SOUND,
    half_width: int = HALF_WIDTH,
    n_taps: int | None = None,
) -> np.ndarray:
    """Image-source RIR between two points strictly inside ``room``."""
    if not room.contains(src):
        raise ValueError(f"source {tuple(np.round(src, 3))} is outside the room {room.dims}")
    if not room.contains(mic):
        raise ValueError(f"microphone {tuple(np.round(mic, 3))} is outside the room {room.dims}")
    if n_taps is None:
        n_taps = rir_length(room, src, mic, fs, c, half_width)
    alpha = sabine_absorption(room.dims, room.t60, c)
    beta = np.full((2, 3), np.sqrt(1.0 - alpha))
    order = image_order(room, n_taps, fs, c)
    return kernels.ism_rir(src, mic, room.dims, beta, order, fs, c, n_taps, half_width)


def schroeder_t60(h, fs: int = FS, start_db: float = -5.0, stop_db: float = -25.0) -> float:
    """T60 extrapolated from a line fit of the backward-integrated energy decay."""
    e = np.asarray(h, dtype=np.float64) ** 2
    edc = np.cumsum(e[::-1])[::-1]
    edc_db = 10.0 * np.log10(np.maximum(edc / edc[0], 1e-300))
    idx = np.nonzero((edc_db <= start_db) & (edc_db >= stop_db))[0]
    if idx.size < 2:
        raise ValueError("decay curve does not span the fitting range")
    t = idx / fs
    slope, _ = np.polyfit(t, edc_db[idx], 1)
    if slope >= 0:
        raise ValueError("energy decay curve is not decreasing")
    return float(-60.0 / slope)
