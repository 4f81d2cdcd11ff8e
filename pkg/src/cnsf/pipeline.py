"""Model assembly, separation, training and evaluation built on a RunConfig."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from . import tensor as T
from .beamformer import apply_mask, mvdr_separate
from .checkpoint import Checkpoint, checkpoint_load, checkpoint_save
from .complex import ComplexTensor
from .config import RunConfig, parse_pairs
from .features import K_CLIP, ArrayGeometry, StftConfig, assemble_features, compute_crm, istft, stft
from .metrics import clamp_db, evaluate_set, si_sdr_db, si_sdr_loss
from .network import UNet, UNetConfig
from .optim import Adam, EarlyStopping, PlateauDecay
from .simulator.audio import AudioFormatError, read_wav
from .simulator.dataset import ManifestRow, read_manifest
from .tensor import NumericalError, ShapeError

log = logging.getLogger("cnsf")


# ---------------------------------------------------------------------------
# assembly
# ---------------------------------------------------------------------------


def build_geometry(cfg: RunConfig) -> ArrayGeometry:
    geom = ArrayGeometry.preset(cfg.array)
    if cfg.pairs:
        geom = ArrayGeometry(geom.positions, parse_pairs(cfg.pairs))
    return geom


def build_stft(cfg: RunConfig) -> StftConfig:
    return StftConfig(win_length=cfg.win_length, hop=cfg.hop, n_fft=cfg.n_fft, sample_rate=cfg.sample_rate)


def build_model(cfg: RunConfig, geom: ArrayGeometry, stft_cfg: StftConfig) -> UNet:
    out_ch = 2 if cfg.mode == "cnsf-mvdr" else 1
    ucfg = UNetConfig.profile(cfg.profile, geom.n_pairs + 2, stft_cfg.n_freq, out_ch, cfg.model_seed)
    return UNet(ucfg)


@dataclass
class Separator:
    """A model with everything needed to turn mixtures into target estimates."""

    cfg: RunConfig
    geom: ArrayGeometry
    stft_cfg: StftConfig
    model: UNet

    @classmethod
    def from_config(cls, cfg: RunConfig) -> "Separator":
        geom = build_geometry(cfg)
        sc = build_stft(cfg)
        return cls(cfg, geom, sc, build_model(cfg, geom, sc))

    @property
    def n_mics(self) -> int:
        return self.geom.n_mics

    def masks(self, spec, theta_rad):
        feats = assemble_features(spec, self.geom, theta_rad)
        return self.model(feats)

    def estimate(self, mixture, theta_deg, training: bool = False) -> T.Tensor:
        """Target waveform estimate for (B, U, N) or (U, N) mixtures; theta in degrees."""
        mix = np.asarray(mixture, dtype=np.float32)
        single = mix.ndim == 2
        if single:
            mix = mix[None]
        if mix.shape[1] != self.n_mics:
            raise ShapeError(f"mixture has {mix.shape[1]} channels, model expects {self.n_mics}")
        theta = np.deg2rad(np.atleast_1d(np.asarray(theta_deg, dtype=np.float64)))
        self.model.train(training)
        spec = stft(T.Tensor(mix), self.stft_cfg)
        pair = self.masks(spec, theta)
        if self.cfg.mode == "cnsf-mvdr":
            s_hat = mvdr_separate(pair.target, pair.noise, spec.data, ref=spec.ref)
        else:
            s_hat = apply_mask(pair.target, spec.reference)
        wave = istft(s_hat, self.stft_cfg, mix.shape[-1])
        return wave[0] if single else wave

    def separate(self, mixture, theta_deg) -> np.ndarray:
        if not 0.0 <= float(theta_deg) < 180.0:
            raise ValueError(f"theta must lie in [0, 180) degrees, got {theta_deg}")
        return self.estimate(mixture, theta_deg, training=False).data.astype(np.float32)

    # -- persistence ------------------------------------------------------
    def to_checkpoint(self, optimizer: Adam | None = None, epoch: int = 0, extra: dict | None = None) -> Checkpoint:
        tensors = {f"model.{k}": np.asarray(v) for k, v in self.model.state_dict().items()}
        meta = {
            "version": __version__,
            "config": self.cfg.to_dict(),
            "model": self.model.cfg.to_dict(),
            "epoch": epoch,
            "adam_step": 0,
        }
        if optimizer is not None:
            tensors.update(optimizer.state_arrays())
            meta["adam_step"] = optimizer.t
            meta["lr"] = optimizer.lr
        if extra:
            meta.update(extra)
        return Checkpoint(tensors, meta)

    @classmethod
    def from_checkpoint(cls, ckpt: Checkpoint) -> "Separator":
        cfg = RunConfig.from_dict(ckpt.meta.get("config", {}))
        sep = cls.from_config(cfg)
        state = {k[len("model.") :]: v for k, v in ckpt.tensors.items() if k.startswith("model.")}
        sep.model.load_state_dict(state)
        return sep

    @classmethod
    def load(cls, path) -> "Separator":
        return cls.from_checkpoint(checkpoint_load(path))


# ---------------------------------------------------------------------------
# data
# ---------------------------------------------------------------------------


@dataclass
class Utterance:
    uid: str
    mixture: np.ndarray  # (U, N) float32
    target: np.ndarray  # (N,) float32
    theta_deg: float
    condition: str


def load_manifest_audio(manifest, n_mics: int | None = None, strict: bool = False) -> list[Utterance]:
    """Load every manifest entry; unreadable or inconsistent entries are skipped with a warning."""
    base = Path(manifest).parent
    utts = []
    for row in read_manifest(manifest):
        try:
            utts.append(_load_row(base, row, n_mics))
        except (AudioFormatError, OSError, ValueError) as exc:
            if strict:
                raise
            log.warning("skipping %s: %s", row.uid, exc)
    return utts


def _load_row(base: Path, row: ManifestRow, n_mics):
    mix = read_wav(base / row.mixture)
    tgt = read_wav(base / row.target)
    if tgt.shape[0] != 1:
        raise AudioFormatError(f"{row.target}: target must be mono")
    if mix.shape[1] != tgt.shape[1]:
        raise AudioFormatError(f"{row.uid}: mixture and target lengths differ")
    if n_mics is not None and mix.shape[0] != n_mics:
        raise AudioFormatError(f"{row.mixture}: {mix.shape[0]} channels, expected {n_mics}")
    if not (np.all(np.isfinite(mix)) and np.all(np.isfinite(tgt))):
        raise AudioFormatError(f"{row.uid}: non-finite samples")
    return Utterance(row.uid, mix, tgt[0], row.theta_deg, row.condition)


def split_train_valid(utts: list[Utterance], fraction: float):
    n_valid = max(1, int(round(len(utts) * fraction))) if len(utts) > 1 and fraction > 0 else 0
    if n_valid == 0:
        return utts, utts[:0]
    return utts[:-n_valid], utts[-n_valid:]


class ChunkSampler:
    """Random fixed-length crops with a seeded generator; silent target crops are redrawn."""

    def __init__(self, utts: list[Utterance], chunk: int, seed: int):
        if not utts:
            raise ValueError("no training utterances")
        self.utts, self.chunk = utts, chunk
        self.rng = np.random.default_rng(seed)

    def batch(self, idx) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        mixes, tgts, thetas = [], [], []
        for i in idx:
            u = self.utts[i]
            n = u.target.size
            for _ in range(20):
                off = int(self.rng.integers(0, max(n - self.chunk, 0) + 1))
                tgt = u.target[off : off + self.chunk]
                if np.sum(tgt.astype(np.float64) ** 2) > 1e-8:
                    break
            mix = u.mixture[:, off : off + self.chunk]
            if tgt.size < self.chunk:
                pad = self.chunk - tgt.size
                tgt = np.pad(tgt, (0, pad))
                mix = np.pad(mix, ((0, 0), (0, pad)))
            mixes.append(mix)
            tgts.append(tgt)
            thetas.append(u.theta_deg)
        return np.stack(mixes), np.stack(tgts), np.asarray(thetas)

    def epoch_order(self) -> np.ndarray:
        return self.rng.permutation(len(self.utts))


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------


@dataclass
class EpochRecord:
    epoch: int
    step: int
    train_loss: float
    valid_loss: float
    valid_sisdr: float
    lr: float


@dataclass
class TrainResult:
    separator: Separator
    epochs: list[EpochRecord] = field(default_factory=list)
    step_losses: list[float] = field(default_factory=list)
    best_valid_sisdr: float = -math.inf
    stopped: str = ""
    seconds: float = 0.0


class Trainer:
    def __init__(self, cfg: RunConfig, train_utts, valid_utts, out_dir=None, separator: Separator | None = None):
        self.cfg = cfg.validate()
        self.sep = separator or Separator.from_config(cfg)
        self.train_utts, self.valid_utts = list(train_utts), list(valid_utts)
        self.out = Path(out_dir) if out_dir is not None else None
        params = dict(self.sep.model.named_parameters())
        self.opt = Adam(params, lr=cfg.learning_rate)
        self.decay = PlateauDecay(self.opt, cfg.decay_factor, cfg.decay_patience)
        self.stopper = EarlyStopping(cfg.early_stop_patience)
        chunk = int(round(cfg.chunk_seconds * cfg.sample_rate))
        self.sampler = ChunkSampler(self.train_utts, chunk, cfg.train_seed)
        self.step_count = 0

    # -- one optimisation step -------------------------------------------
    def loss_and_grads(self, mix, tgt, theta):
        with T.Tape() as tape:
            est = self.sep.estimate(mix, theta, training=True)
            loss = si_sdr_loss(est, T.Tensor(tgt))
        value = float(loss.data)
        if not math.isfinite(value):
            raise NumericalError(f"non-finite training loss {value} at step {self.step_count + 1}")
        grads = T.backward(loss, tape)
        named = {name: grads.get(p) for name, p in self.opt.params.items()}
        return value, named

    def step(self, idx) -> float:
        mix, tgt, theta = self.sampler.batch(idx)
        value, grads = self.loss_and_grads(mix, tgt, theta)
        for name, g in grads.items():
            if g is not None and not np.all(np.isfinite(g)):
                raise NumericalError(f"non-finite gradient for {name} at step {self.step_count + 1}")
        self.opt.step(grads)
        self.step_count += 1
        return value

    def validate(self) -> float:
        """Mean SI-SDR (dB) over the validation utterances in inference mode."""
        utts = self.valid_utts[: self.cfg.valid_limit] if self.cfg.valid_limit > 0 else self.valid_utts
        if not utts:
            return float("nan")
        scores = []
        for u in utts:
            est = self.sep.estimate(u.mixture, u.theta_deg, training=False).data
            scores.append(float(clamp_db(si_sdr_db(est, u.target))))
        return float(np.mean(scores))

    def _log_paths(self):
        if self.out is None:
            return None, None
        self.out.mkdir(parents=True, exist_ok=True)
        return self.out / self.cfg.log_name, self.out / "train_steps.tsv"

    def fit(self) -> TrainResult:
        cfg = self.cfg
        result = TrainResult(self.sep)
        epoch_log, step_log = self._log_paths()
        if epoch_log is not None:
            epoch_log.write_text("epoch\tstep\ttrain_loss\tvalid_loss\tvalid_sisdr\tlr\n")
            step_log.write_text("step\tloss\n")
        batch = cfg.batch_size
        per_epoch = cfg.steps_per_epoch or max(1, math.ceil(len(self.train_utts) / batch))
        t0 = time.monotonic()
        for epoch in range(1, cfg.max_epochs + 1):
            order = self.sampler.epoch_order()
            losses = []
            for k in range(per_epoch):
                idx = [order[(k * batch + j) % len(order)] for j in range(batch)]
                value = self.step(idx)
                losses.append(value)
                result.step_losses.append(value)
                if step_log is not None:
                    with open(step_log, "a") as fh:
                        fh.write(f"{self.step_count}\t{value:.6f}\n")
                if cfg.max_steps and self.step_count >= cfg.max_steps:
                    result.stopped = "max_steps"
                    break
                if cfg.time_budget and time.monotonic() - t0 >= cfg.time_budget:
                    result.stopped = "time_budget"
                    break
            valid = self.validate()
            lr_used = self.opt.lr
            rec = EpochRecord(epoch, self.step_count, float(np.mean(losses)), -valid, valid, lr_used)
            result.epochs.append(rec)
            if epoch_log is not None:
                with open(epoch_log, "a") as fh:
                    fh.write(
                        f"{rec.epoch}\t{rec.step}\t{rec.train_loss:.6f}\t{rec.valid_loss:.6f}\t"
                        f"{rec.valid_sisdr:.4f}\t{rec.lr:.6g}\n"
                    )
            log.info("epoch %d step %d loss %.3f valid %.2f dB lr %.2e", epoch, self.step_count, rec.train_loss, valid, lr_used)
            improved = math.isfinite(valid) and valid > result.best_valid_sisdr
            if improved:
                result.best_valid_sisdr = valid
                self._save("best.ckpt", epoch)
            self._save("last.ckpt", epoch)
            if math.isfinite(valid):
                self.decay.update(-valid)
                if self.stopper.update(-valid):
                    result.stopped = result.stopped or "early_stop"
            if result.stopped:
                break
        else:
            result.stopped = "max_epochs"
        result.seconds = time.monotonic() - t0
        return result

    def _save(self, name: str, epoch: int) -> None:
        if self.out is not None:
            checkpoint_save(self.out / name, self.sep.to_checkpoint(self.opt, epoch))


# ---------------------------------------------------------------------------
# evaluation and analysis
# ---------------------------------------------------------------------------


def evaluate_utterances(sep: Separator | None, utts: list[Utterance], identity: bool = False):
    """SI-SDR table for a list of utterances; ``identity`` short-circuits the model with M = 1."""
    if not utts:
        raise ValueError("no utterances to evaluate")
    ests, refs, mixes, tags, ids = [], [], [], [], []
    for u in utts:
        ref_ch = u.mixture[0]
        est = ref_ch if identity else sep.separate(u.mixture, u.theta_deg)
        ests.append(est)
        refs.append(u.target)
        mixes.append(ref_ch)
        tags.append(u.condition)
        ids.append(u.uid)
    return evaluate_set(ests, refs, tags, mixtures=mixes, ids=ids)


def mask_scatter(sep: Separator | None, mixture, target, theta_deg, oracle: bool = False):
    """Rows of (t, f, true re, true im, est re, est im) over every T-F bin.

    The true mask is the clipped complex ratio of the target and mixture
    reference-channel spectrograms.
    """
    stft_cfg = sep.stft_cfg if sep is not None else StftConfig()
    with T.precision(np.float64):
        y = stft(np.asarray(mixture, dtype=np.float64), stft_cfg)
        s = stft(np.asarray(target, dtype=np.float64), stft_cfg)
        m_true = compute_crm(s.data, y.reference, clip=K_CLIP).numpy()
    if oracle or sep is None:
        m_est = m_true
    else:
        spec = stft(T.Tensor(np.asarray(mixture, dtype=np.float32)[None]), sep.stft_cfg)
        sep.model.eval()
        m_est = sep.masks(spec, np.deg2rad([theta_deg])).target.numpy()[0]
    t_idx, f_idx = np.meshgrid(np.arange(m_true.shape[0]), np.arange(m_true.shape[1]), indexing="ij")
    return np.column_stack(
        [t_idx.ravel(), f_idx.ravel(), m_true.real.ravel(), m_true.imag.ravel(), m_est.real.ravel(), m_est.imag.ravel()]
    ), np.abs(s.data.numpy()).ravel()


def cluster_fraction(m_true: np.ndarray, target_mag: np.ndarray, radius: float = 0.3, active_db: float = -40.0) -> float:
    """Fraction of speech-active bins whose cRM lies within ``radius`` of 0 or 1+0j."""
    power = target_mag**2
    active = power > power.max() * 10.0 ** (active_db / 10.0)
    m = m_true[active]
    near = (np.abs(m) < radius) | (np.abs(m - 1.0) < radius)
    return float(np.mean(near)) if m.size else 0.0
