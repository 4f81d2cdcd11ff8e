"""Scene specification, sampling and mixing."""

from __future__ import annotations

from dataclasses import dataclass, field, asdict

import numpy as np
from scipy import signal

from ..features import ArrayGeometry
from .rir import FS, RoomSpec, simulate_rir

MIN_SEPARATION_DEG = 5.0
WALL_MARGIN = 0.3


@dataclass(frozen=True)
class SourceSpec:
    theta_deg: float  # azimuth from the array axis, [0, 180)
    distance: float  # metres from the array centre
    source_id: str


@dataclass(frozen=True)
class SceneSpec:
    room: RoomSpec
    array_center: tuple[float, float, float]
    array_azimuth: float  # radians, direction of the array axis in the horizontal plane
    sources: tuple[SourceSpec, ...]
    target: int = 0
    sir_db: float = 0.0
    noise_type: str = "white"  # white | pink | none
    snr_db: float = 30.0
    seed: int = 0

    def to_dict(self) -> dict:
        return asdict(self)

    @property
    def theta_target(self) -> float:
        return self.sources[self.target].theta_deg


@dataclass
class SceneBundle:
    mixture: np.ndarray  # (U, samples), float64
    images: np.ndarray  # (n_sources, U, samples)
    noise: np.ndarray  # (U, samples)
    target: np.ndarray  # reverberant target at the reference channel
    theta_deg: float
    spec: SceneSpec
    ref: int = 0
    meta: dict = field(default_factory=dict)

    def recompose(self) -> np.ndarray:
        """Re-sum the stored components in the order used for mixing."""
        total = np.zeros_like(self.mixture)
        for img in self.images:
            total += img
        return total + self.noise

    def residual(self) -> np.ndarray:
        """Mixture minus its recomposition; all zeros when the bundle is consistent."""
        return self.mixture - self.recompose()


def _axis_vectors(azimuth: float):
    axis = np.array([np.cos(azimuth), np.sin(azimuth), 0.0])
    perp = np.array([-np.sin(azimuth), np.cos(azimuth), 0.0])
    return axis, perp


def mic_positions(spec: SceneSpec, geom: ArrayGeometry) -> np.ndarray:
    """World coordinates of the array rotated to ``array_azimuth`` about its centre."""
    axis, perp = _axis_vectors(spec.array_azimuth)
    local = geom.positions - geom.positions.mean(axis=0)
    # local x runs along the array axis, local y across it
    world = local[:, :1] * axis + local[:, 1:2] * perp + local[:, 2:3] * np.array([0.0, 0.0, 1.0])
    return world + np.asarray(spec.array_center)


def source_position(spec: SceneSpec, src: SourceSpec) -> np.ndarray:
    axis, perp = _axis_vectors(spec.array_azimuth)
    th = np.deg2rad(src.theta_deg)
    return np.asarray(spec.array_center) + src.distance * (np.cos(th) * axis + np.sin(th) * perp)


def _power(x) -> float:
    return float(np.mean(np.asarray(x, dtype=np.float64) ** 2))


def make_noise(kind: str, shape, rng) -> np.ndarray:
    white = rng.standard_normal(shape)
    if kind == "white":
        return white
    if kind == "pink":
        # 1/f power via a spectral tilt on each channel
        n = shape[-1]
        spec = np.fft.rfft(white, axis=-1)
        f = np.arange(spec.shape[-1], dtype=np.float64)
        f[0] = 1.0
        return np.fft.irfft(spec / np.sqrt(f), n=n, axis=-1)
    raise ValueError(f"unknown noise type {kind!r}")


def mix_scene(spec: SceneSpec, waveforms, geom: ArrayGeometry, fs: int = FS) -> SceneBundle:
    """Convolve each source with its RIRs, scale to the SIR/SNR targets and sum.

    Interferers are scaled one by one so that each sits ``sir_db`` below the
    target at the reference channel; spatially white noise is scaled against
    the target image at the reference channel.
    """
    if len(waveforms) != len(spec.sources):
        raise ValueError(f"{len(spec.sources)} sources specified but {len(waveforms)} waveforms given")
    waves = [np.asarray(w, dtype=np.float64) for w in waveforms]
    length = waves[spec.target].size
    if length < fs:
        raise ValueError("source waveforms must be at least one second long")
    for w in waves:
        if w.size < length:
            raise ValueError("interferer waveforms must be at least as long as the target")
        if not np.any(w[:length]):
            raise ValueError("source waveform is silent")
    mics = mic_positions(spec, geom)
    n_mics = mics.shape[0]
    images = np.zeros((len(waves), n_mics, length))
    for s, (src, w) in enumerate(zip(spec.sources, waves)):
        pos = source_position(spec, src)
        for m in range(n_mics):
            h = simulate_rir(spec.room, pos, mics[m], fs)
            images[s, m] = signal.fftconvolve(w[:length], h)[:length]
    ref = 0
    p_target = _power(images[spec.target, ref])
    if p_target <= 0:
        raise ValueError("target image is silent at the reference channel")
    for s in range(len(waves)):
        if s == spec.target:
            continue
        p = _power(images[s, ref])
        if p <= 0:
            raise ValueError(f"interferer {s} is silent at the reference channel")
        images[s] *= np.sqrt(p_target / (p * 10.0 ** (spec.sir_db / 10.0)))
    rng = np.random.default_rng(spec.seed)
    if spec.noise_type == "none":
        noise = np.zeros((n_mics, length))
    else:
        noise = make_noise(spec.noise_type, (n_mics, length), rng)
        noise *= np.sqrt(p_target / (_power(noise[ref]) * 10.0 ** (spec.snr_db / 10.0)))
    mixture = np.zeros((n_mics, length))
    for img in images:
        mixture += img
    mixture = mixture + noise
    return SceneBundle(
        mixture=mixture,
        images=images,
        noise=noise,
        target=images[spec.target, ref].copy(),
        theta_deg=spec.theta_target,
        spec=spec,
        ref=ref,
        meta={"mics": mics},
    )


@dataclass
class SceneRanges:
    """Sampling ranges for random scenes."""

    room_min: tuple[float, float, float] = (4.0, 4.0, 2.5)
    room_max: tuple[float, float, float] = (10.0, 8.0, 6.0)
    t60: tuple[float, float] = (0.05, 0.7)
    sir_db: tuple[float, float] = (-6.0, 6.0)
    snr_db: tuple[float, float] = (18.0, 30.0)
    distance: tuple[float, float] = (0.8, 2.0)
    noise_types: tuple[str, ...] = ("white", "pink")
    array_height: tuple[float, float] = (1.0, 1.6)


def _separated(thetas, cand, min_sep) -> bool:
    return all(abs(cand - t) >= min_sep for t in thetas)


def sample_scene(
    rng: np.random.Generator,
    n_sources: int,
    source_ids,
    ranges: SceneRanges,
    geom: ArrayGeometry,
    seed: int,
    max_tries: int = 200,
) -> SceneSpec:
    """Draw a scene whose array and sources all lie inside the room with a wall margin."""
    lo, hi = np.asarray(ranges.room_min), np.asarray(ranges.room_max)
    aperture = float(np.ptp(geom.positions[:, 0]))
    for _ in range(max_tries):
        dims = tuple(float(x) for x in rng.uniform(lo, hi))
        room = RoomSpec(dims, float(rng.uniform(*ranges.t60)))
        height = float(np.clip(rng.uniform(*ranges.array_height), WALL_MARGIN + 0.05, dims[2] - WALL_MARGIN - 0.05))
        center = (
            float(rng.uniform(0.35 * dims[0], 0.65 * dims[0])),
            float(rng.uniform(0.35 * dims[1], 0.65 * dims[1])),
            height,
        )
        azimuth = float(rng.uniform(0, 2 * np.pi))
        srcs: list[SourceSpec] = []
        thetas: list[float] = []
        for k in range(n_sources):
            for _ in range(max_tries):
                th = float(rng.uniform(0.0, 180.0))
                if _separated(thetas, th, MIN_SEPARATION_DEG):
                    break
            else:
                break
            dist = float(rng.uniform(*ranges.distance))
            thetas.append(th)
            srcs.append(SourceSpec(round(th, 4), round(dist, 4), source_ids[k]))
        if len(srcs) < n_sources:
            continue
        spec = SceneSpec(
            room=room,
            array_center=center,
            array_azimuth=azimuth,
            sources=tuple(srcs),
            target=0,
            sir_db=float(rng.uniform(*ranges.sir_db)),
            noise_type=str(ranges.noise_types[rng.integers(len(ranges.noise_types))]) if ranges.noise_types else "none",
            snr_db=float(rng.uniform(*ranges.snr_db)),
            seed=seed,
        )
        pts = [source_position(spec, s) for s in srcs]
        mics = mic_positions(spec, geom)
        if aperture / 2 < min(dims[:2]) and all(room.contains(p, WALL_MARGIN) for p in pts + list(mics)):
            return spec
    raise RuntimeError("could not place sources inside the sampled rooms")
