"""Run configuration: sectioned ``key = value`` files with typed defaults.

Every field has a default; unknown sections and keys are rejected; values
passed on the command line override file values.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

MODES = ("cnsf", "cnsf-mvdr")
PROFILES = ("toy", "desk", "paper")

# named bundles of overrides applied on top of the defaults, before any file or flag
PRESETS = {
    # memorise one scene: full-length chunks, no held-out split, no decay or early stop
    "overfit": {
        "profile": "desk",
        "batch_size": 2,
        "chunk_seconds": 1.0,
        "steps_per_epoch": 25,
        "max_steps": 500,
        "max_epochs": 20,
        "valid_fraction": 0.0,
        "decay_patience": 1000,
        "early_stop_patience": 1000,
    },
}


def _f(section: str, default, doc: str):
    return field(default=default, metadata={"section": section, "doc": doc})


@dataclass(frozen=True)
class RunConfig:
    # STFT
    sample_rate: int = _f("stft", 16000, "sampling rate in Hz")
    win_length: int = _f("stft", 512, "analysis window length in samples")
    hop: int = _f("stft", 256, "hop size in samples")
    n_fft: int = _f("stft", 512, "FFT size")
    # array
    array: str = _f("array", "desk", "microphone array preset: desk | paper")
    pairs: str = _f("array", "", "microphone pairs as 'a-b,c-d' (0-based); empty uses the preset list")
    # model
    profile: str = _f("model", "desk", "model profile: toy | desk | paper")
    mode: str = _f("model", "cnsf", "cnsf (direct masking) | cnsf-mvdr (beamforming)")
    model_seed: int = _f("model", 0, "parameter initialisation seed")
    # training
    chunk_seconds: float = _f("train", 1.0, "training chunk length in seconds")
    batch_size: int = _f("train", 4, "chunks per step (at least 2 for batch norm)")
    learning_rate: float = _f("train", 1e-3, "initial Adam learning rate")
    decay_factor: float = _f("train", 0.5, "learning-rate decay factor on plateau")
    decay_patience: int = _f("train", 3, "validation epochs without improvement before decay")
    early_stop_patience: int = _f("train", 6, "validation epochs without improvement before stopping")
    max_epochs: int = _f("train", 100, "maximum number of epochs")
    steps_per_epoch: int = _f("train", 0, "steps per epoch; 0 means one chunk per training scene")
    max_steps: int = _f("train", 0, "stop after this many steps; 0 means no limit")
    time_budget: float = _f("train", 0.0, "stop after this many seconds of training; 0 means no limit")
    valid_fraction: float = _f("train", 0.1, "fraction of the manifest held out for validation")
    valid_limit: int = _f("train", 16, "maximum validation utterances per epoch")
    train_seed: int = _f("train", 0, "seed for chunk sampling")
    # simulation
    sim_seed: int = _f("simulate", 0, "dataset seed")
    conditions: str = _f("simulate", "paper", "speaker-count preset: paper | 1spk | 2spk | 3spk")
    t60_min: float = _f("simulate", 0.05, "minimum T60 in seconds")
    t60_max: float = _f("simulate", 0.7, "maximum T60 in seconds")
    sir_min: float = _f("simulate", -6.0, "minimum SIR in dB")
    sir_max: float = _f("simulate", 6.0, "maximum SIR in dB")
    snr_min: float = _f("simulate", 18.0, "minimum SNR in dB")
    snr_max: float = _f("simulate", 30.0, "maximum SNR in dB")
    source_seconds: float = _f("simulate", 4.0, "source and mixture duration in seconds")
    source_dir: str = _f("simulate", "", "directory of mono WAVE sources; empty uses synthetic speech")
    noise_types: str = _f("simulate", "white,pink", "comma-separated noise presets")
    # paths
    out: str = _f("paths", "run", "output directory")
    log_name: str = _f("paths", "train_log.tsv", "training log file name inside the output directory")

    def validate(self) -> "RunConfig":
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.profile not in PROFILES:
            raise ConfigError(f"profile must be one of {PROFILES}, got {self.profile!r}")
        if self.hop > self.win_length or self.n_fft < self.win_length:
            raise ConfigError("STFT requires hop <= win_length <= n_fft")
        if self.batch_size < 2:
            raise ConfigError("batch_size must be at least 2 (complex batch norm)")
        if self.chunk_seconds * self.sample_rate < self.win_length:
            raise ConfigError("chunk is shorter than one window")
        return self

    def to_ini(self) -> str:
        sections: dict[str, list[str]] = {}
        for f in fields(self):
            body = sections.setdefault(f.metadata["section"], [])
            body.append(f"# {f.metadata['doc']}")
            body.append(f"{f.name} = {getattr(self, f.name)}")
        return "\n".join(f"[{sec}]\n" + "\n".join(body) + "\n" for sec, body in sections.items())

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        return apply_overrides(cls(), d)

    @classmethod
    def from_file(cls, path) -> "RunConfig":
        return load_config(path)


class ConfigError(ValueError):
    pass


_FIELDS = {f.name: f for f in fields(RunConfig)}


def _convert(name: str, raw):
    f = _FIELDS[name]
    typ = type(f.default)
    if isinstance(raw, typ) and not (typ is float and isinstance(raw, bool)):
        return raw
    try:
        if typ is int:
            return int(raw)
        if typ is float:
            return float(raw)
        return str(raw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{name}: cannot parse {raw!r} as {typ.__name__}") from exc


def apply_overrides(cfg: RunConfig, values: dict) -> RunConfig:
    unknown = [k for k in values if k not in _FIELDS]
    if unknown:
        raise ConfigError(f"unknown configuration keys: {', '.join(sorted(unknown))}")
    return replace(cfg, **{k: _convert(k, v) for k, v in values.items() if v is not None})


def preset_config(name: str) -> RunConfig:
    try:
        values = PRESETS[name]
    except KeyError:
        raise ConfigError(f"unknown preset {name!r}; available: {', '.join(sorted(PRESETS))}") from None
    return apply_overrides(RunConfig(), values)


def load_config(path, base: RunConfig | None = None) -> RunConfig:
    text = Path(path).read_text(encoding="utf-8")
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read_string(text, source=str(path))
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    values = {}
    for sec in parser.sections():
        for key, raw in parser.items(sec):
            f = _FIELDS.get(key)
            if f is None:
                raise ConfigError(f"{path}: unknown key {key!r} in section [{sec}]")
            if f.metadata["section"] != sec:
                raise ConfigError(f"{path}: key {key!r} belongs in section [{f.metadata['section']}], not [{sec}]")
            values[key] = raw
    return apply_overrides(base or RunConfig(), values).validate()


def parse_pairs(text: str):
    pairs = []
    for item in filter(None, (s.strip() for s in text.split(","))):
        try:
            a, b = item.split("-")
            pairs.append((int(a), int(b)))
        except ValueError as exc:
            raise ConfigError(f"malformed microphone pair {item!r}; expected 'a-b'") from exc
    return pairs
