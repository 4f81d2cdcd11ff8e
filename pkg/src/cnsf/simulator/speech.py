"""Deterministic speech-like test signals.

Each utterance is a run of syllables separated by short pauses.  A voiced
syllable is a harmonic series on a gliding pitch contour whose harmonic
amplitudes follow a three-formant resonance envelope; some syllables start
with a band-passed noise burst standing in for a fricative.  The result has
the sparse, harmonic, time-varying spectrum that makes complex ratio masks
cluster near 0 and 1, without needing a speech corpus.
"""

from __future__ import annotations

import numpy as np
from scipy import signal

FS = 16000
MAX_HARMONIC_HZ = 5000.0

# (F1, F2, F3) ranges in Hz, loosely spanning the vowel space
FORMANT_RANGES = ((280.0, 850.0), (850.0, 2400.0), (2300.0, 3300.0))
FORMANT_BW = (90.0, 120.0, 180.0)


def _formant_gain(freq, formants, bws):
    # magnitude of a cascade of second-order resonances, evaluated per frequency
    g = np.ones_like(freq)
    for f0, bw in zip(formants, bws):
        g = g * (f0 * f0) / np.sqrt((f0 * f0 - freq * freq) ** 2 + (bw * freq) ** 2 + 1e-9)
    return g


def _voiced(rng, n, fs, f0_base):
    t = np.arange(n) / fs
    # pitch glides by up to +-20% across the syllable, with slight vibrato
    glide = rng.uniform(-0.2, 0.2)
    f0 = f0_base * (1.0 + glide * t / max(t[-1], 1e-3)) * (1.0 + 0.01 * np.sin(2 * np.pi * 5.0 * t))
    phase = 2 * np.pi * np.cumsum(f0) / fs
    start = np.array([rng.uniform(*r) for r in FORMANT_RANGES])
    stop = np.array([rng.uniform(*r) for r in FORMANT_RANGES])
    n_harm = int(MAX_HARMONIC_HZ // (f0_base * 0.8))
    out = np.zeros(n)
    # formants move linearly from start to stop; evaluate the envelope on a coarse grid
    grid = np.linspace(0.0, 1.0, 8)
    for k in range(1, n_harm + 1):
        fk = k * f0
        if fk.min() >= MAX_HARMONIC_HZ:
            break
        env_pts = np.empty(grid.size)
        for gi, a in enumerate(grid):
            fm = (1 - a) * start + a * stop
            idx = min(int(a * (n - 1)), n - 1)
            env_pts[gi] = _formant_gain(np.array([fk[idx]]), fm, FORMANT_BW)[0]
        env = np.interp(np.linspace(0.0, 1.0, n), grid, env_pts)
        env = np.where(fk < MAX_HARMONIC_HZ, env, 0.0)
        out += env / k * np.sin(k * phase + rng.uniform(0, 2 * np.pi))
    return out


def _fricative(rng, n, fs):
    lo = rng.uniform(2500.0, 4000.0)
    hi = min(lo + rng.uniform(1500.0, 3000.0), 0.45 * fs)
    sos = signal.butter(4, [lo, hi], btype="bandpass", fs=fs, output="sos")
    return signal.sosfilt(sos, rng.standard_normal(n))


def synth_speech(seconds: float, seed: int, fs: int = FS, f0_range=(90.0, 240.0)) -> np.ndarray:
    """Speech-like mono signal of ``seconds`` duration, unit RMS over active samples."""
    rng = np.random.default_rng(seed)
    total = int(round(seconds * fs))
    out = np.zeros(total)
    f0_speaker = rng.uniform(*f0_range)
    pos = int(rng.uniform(0.0, 0.15) * fs)
    while pos < total:
        syl = int(rng.uniform(0.12, 0.32) * fs)
        syl = min(syl, total - pos)
        if syl < int(0.03 * fs):
            break
        seg = np.zeros(syl)
        fric = 0
        if rng.random() < 0.3:
            fric = min(int(rng.uniform(0.03, 0.08) * fs), syl // 2)
            burst = _fricative(rng, fric, fs)
            seg[:fric] = 0.4 * burst / (np.std(burst) + 1e-12) * np.hanning(fric)
        voiced = _voiced(rng, syl - fric, fs, f0_speaker * rng.uniform(0.9, 1.1))
        voiced /= np.std(voiced) + 1e-12
        # syllabic amplitude envelope: fast attack, slower decay
        m = voiced.size
        att = max(int(0.02 * fs), 1)
        env = np.ones(m)
        env[: min(att, m)] = np.linspace(0.0, 1.0, min(att, m))
        env *= np.exp(-np.linspace(0.0, rng.uniform(0.5, 2.0), m))
        env[-min(att, m) :] *= np.linspace(1.0, 0.0, min(att, m))
        seg[fric:] += voiced * env * rng.uniform(0.6, 1.0)
        out[pos : pos + syl] = seg
        pos += syl
        # pauses: mostly short gaps, occasionally a longer one between words
        gap = rng.uniform(0.02, 0.08) if rng.random() < 0.7 else rng.uniform(0.12, 0.35)
        pos += int(gap * fs)
    active = np.abs(out) > 1e-6
    rms = np.sqrt(np.mean(out[active] ** 2)) if active.any() else 1.0
    return out / rms * 0.1
