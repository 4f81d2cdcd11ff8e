"""Dataset generation: sampled scenes written as WAVE files plus a manifest."""

from __future__ import annotations

import csv
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..features import ArrayGeometry
from .audio import read_wav, write_wav
from .rir import FS
from .scene import SceneRanges, mix_scene, sample_scene
from .speech import synth_speech

MANIFEST_NAME = "manifest.tsv"
MANIFEST_FIELDS = ("id", "mixture", "target", "theta_deg", "condition", "sir_db", "snr_db", "seed")
CONDITION_PRESETS = {
    "paper": {"1spk": 0.05, "2spk": 0.45, "3spk": 0.50},
    "1spk": {"1spk": 1.0},
    "2spk": {"2spk": 1.0},
    "3spk": {"3spk": 1.0},
}


@dataclass(frozen=True)
class ManifestRow:
    uid: str
    mixture: str
    target: str
    theta_deg: float
    condition: str
    sir_db: float
    snr_db: float
    seed: int

    def fields(self) -> list[str]:
        return [
            self.uid,
            self.mixture,
            self.target,
            f"{self.theta_deg:.4f}",
            self.condition,
            f"{self.sir_db:.4f}",
            f"{self.snr_db:.4f}",
            str(self.seed),
        ]


class SourcePool:
    """Mono source material: synthetic speech by default, or a directory of WAVE files."""

    def __init__(self, seconds: float = 4.0, base_seed: int = 0, paths=None, fs: int = FS):
        self.seconds, self.base_seed, self.fs = seconds, base_seed, fs
        self.paths = sorted(str(p) for p in paths) if paths else None

    @classmethod
    def from_dir(cls, directory, seconds: float = 4.0) -> "SourcePool":
        paths = sorted(Path(directory).glob("*.wav"))
        if not paths:
            raise ValueError(f"no .wav files found in {directory}")
        return cls(seconds, paths=paths)

    @property
    def size(self) -> int | None:
        return len(self.paths) if self.paths is not None else None

    def draw_ids(self, rng: np.random.Generator, k: int) -> list[str]:
        if self.paths is None:
            return [f"synth:{int(x)}" for x in rng.choice(2**31 - 1, size=k, replace=False)]
        if len(self.paths) < k:
            raise ValueError(f"source pool has {len(self.paths)} files, a scene needs {k}")
        return [self.paths[i] for i in rng.choice(len(self.paths), size=k, replace=False)]

    def load(self, source_id: str) -> np.ndarray:
        n = int(round(self.seconds * self.fs))
        if source_id.startswith("synth:"):
            return synth_speech(self.seconds, int(source_id.split(":", 1)[1]) + self.base_seed, self.fs)
        wav = read_wav(source_id, self.fs)[0].astype(np.float64)
        if wav.size >= n:
            return wav[:n]
        reps = int(np.ceil(n / wav.size))
        return np.tile(wav, reps)[:n]


def condition_schedule(count: int, preset: str, rng: np.random.Generator) -> list[str]:
    """Exactly-rounded condition counts in a seeded random order."""
    try:
        props = CONDITION_PRESETS[preset]
    except KeyError:
        raise ValueError(f"unknown condition preset {preset!r}") from None
    names = list(props)
    raw = np.array([props[c] for c in names]) * count
    counts = np.floor(raw).astype(int)
    # largest remainders get the leftover scenes
    for i in np.argsort(-(raw - counts), kind="stable")[: count - counts.sum()]:
        counts[i] += 1
    tags = [c for c, k in zip(names, counts) for _ in range(k)]
    order = rng.permutation(count)
    return [tags[i] for i in order]


def _make_one(job):
    idx, cond, scene_seed, out_dir, ranges, geom, pool = job
    rng = np.random.default_rng(scene_seed)
    n_src = int(cond[0])
    ids = pool.draw_ids(rng, n_src)
    spec = sample_scene(rng, n_src, ids, ranges, geom, scene_seed)
    waves = [pool.load(i) for i in ids]
    bundle = mix_scene(spec, waves, geom)
    uid = f"scene{idx:05d}"
    mix_rel, tgt_rel = f"{uid}_mix.wav", f"{uid}_target.wav"
    write_wav(Path(out_dir) / mix_rel, bundle.mixture)
    write_wav(Path(out_dir) / tgt_rel, bundle.target)
    return ManifestRow(uid, mix_rel, tgt_rel, spec.theta_target, cond, spec.sir_db, spec.snr_db, scene_seed)


def num_workers() -> int:
    try:
        return max(1, int(os.environ.get("CNSF_NUM_WORKERS", "1")))
    except ValueError:
        return 1


def generate_dataset(
    out_dir,
    count: int,
    seed: int,
    geom: ArrayGeometry | None = None,
    ranges: SceneRanges | None = None,
    conditions: str = "paper",
    pool: SourcePool | None = None,
    workers: int | None = None,
) -> list[ManifestRow]:
    """Sample ``count`` scenes, write their audio and a manifest, and return the rows.

    Output is identical for a fixed seed regardless of the worker count: each
    scene draws from its own generator and the manifest is written in index order.
    """
    if count < 1:
        raise ValueError("count must be positive")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    geom = geom or ArrayGeometry.desk_pair()
    ranges = ranges or SceneRanges()
    pool = pool or SourcePool(base_seed=seed)
    root = np.random.default_rng(seed)
    tags = condition_schedule(count, conditions, root)
    max_src = max(int(t[0]) for t in tags)
    if pool.size is not None and pool.size < max_src:
        raise ValueError(f"source pool has {pool.size} files but scenes need {max_src} distinct sources")
    seeds = root.integers(0, 2**31 - 1, size=count)
    jobs = [(i, tags[i], int(seeds[i]), str(out), ranges, geom, pool) for i in range(count)]
    workers = workers or num_workers()
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            rows = list(ex.map(_make_one, jobs))
    else:
        rows = [_make_one(j) for j in jobs]
    write_manifest(out / MANIFEST_NAME, rows)
    return rows


def write_manifest(path, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, delimiter="\t", lineterminator="\n")
        w.writerow(MANIFEST_FIELDS)
        for r in rows:
            w.writerow(r.fields())


class ManifestError(ValueError):
    pass


def read_manifest(path) -> list[ManifestRow]:
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh, delimiter="\t")
        header = next(reader, None)
        if header is None or tuple(header) != MANIFEST_FIELDS:
            raise ManifestError(f"{path}: missing or unexpected manifest header")
        for lineno, rec in enumerate(reader, start=2):
            if len(rec) != len(MANIFEST_FIELDS):
                raise ManifestError(f"{path}:{lineno}: expected {len(MANIFEST_FIELDS)} fields, got {len(rec)}")
            try:
                rows.append(
                    ManifestRow(rec[0], rec[1], rec[2], float(rec[3]), rec[4], float(rec[5]), float(rec[6]), int(rec[7]))
                )
            except ValueError as exc:
                raise ManifestError(f"{path}:{lineno}: {exc}") from exc
    return rows
