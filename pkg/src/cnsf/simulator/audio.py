"""Multi-channel 32-bit float RIFF/WAVE I/O."""

from __future__ import annotations

import os

import numpy as np
from scipy.io import wavfile

SAMPLE_RATE = 16000


class AudioFormatError(ValueError):
    pass


def write_wav(path, data, fs: int = SAMPLE_RATE) -> None:
    """Write (channels, samples) or (samples,) as float32 WAVE."""
    data = np.asarray(data, dtype=np.float32)
    if data.ndim == 2:
        data = data.T
    wavfile.write(os.fspath(path), fs, np.ascontiguousarray(data))


def read_wav(path, expect_fs: int | None = SAMPLE_RATE) -> np.ndarray:
    """Read a WAVE file as float32 (channels, samples); integer PCM is rescaled to [-1, 1)."""
    try:
        fs, data = wavfile.read(os.fspath(path))
    except (ValueError, EOFError) as exc:
        raise AudioFormatError(f"{path}: {exc}") from exc
    if expect_fs is not None and fs != expect_fs:
        raise AudioFormatError(f"{path}: sample rate {fs} Hz, expected {expect_fs} Hz")
    if np.issubdtype(data.dtype, np.integer):
        data = data.astype(np.float32) / float(np.iinfo(data.dtype).max + 1)
    data = np.asarray(data, dtype=np.float32)
    return data[None, :] if data.ndim == 1 else np.ascontiguousarray(data.T)
