"""Desk-scale multi-channel scene simulation."""

from .rir import RoomSpec, simulate_rir, sabine_absorption, schroeder_t60, HALF_WIDTH
from .speech import synth_speech
from .scene import SceneSpec, SourceSpec, SceneBundle, mix_scene, sample_scene, SceneRanges
from .dataset import SourcePool, generate_dataset, read_manifest, ManifestRow, CONDITION_PRESETS
from .audio import read_wav, write_wav

__all__ = [
    "RoomSpec",
    "simulate_rir",
    "sabine_absorption",
    "schroeder_t60",
    "HALF_WIDTH",
    "synth_speech",
    "SceneSpec",
    "SourceSpec",
    "SceneBundle",
    "SceneRanges",
    "mix_scene",
    "sample_scene",
    "SourcePool",
    "generate_dataset",
    "read_manifest",
    "ManifestRow",
    "CONDITION_PRESETS",
    "read_wav",
    "write_wav",
]
