"""SI-SDR as a differentiable loss and as an evaluation table."""

from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import tensor as T
from .tensor import ShapeError, Tensor

EPS_SDR = 1e-8
SDR_MIN = -40.0
SDR_MAX = 80.0
CONDITIONS = ("1spk", "2spk", "3spk")


def _check_pair(est_shape, ref_shape):
    if est_shape != ref_shape:
        raise ShapeError(f"estimate {est_shape} and reference {ref_shape} differ")


def si_sdr(est, ref, eps: float = EPS_SDR) -> Tensor:
    """Differentiable SI-SDR in dB over the last axis; leading axes are kept."""
    est, ref = T.as_tensor(est), T.as_tensor(ref)
    _check_pair(est.shape, ref.shape)
    ref_energy = T.square(ref).sum(axis=-1, keepdims=True)
    if np.any(ref_energy.data <= 0):
        raise ValueError("SI-SDR reference has zero energy")
    alpha = (est * ref).sum(axis=-1, keepdims=True) / ref_energy
    target = alpha * ref
    noise = est - target
    num = T.square(target).sum(axis=-1)
    den = T.square(noise).sum(axis=-1) + eps
    with np.errstate(divide="ignore"):
        return T.log(num / den) * (10.0 / np.log(10.0))


def si_sdr_db(est, ref, eps: float = EPS_SDR) -> np.ndarray | float:
    """SI-SDR in float64 numpy, unclamped; -inf for an all-zero estimate."""
    est = np.asarray(est, dtype=np.float64)
    ref = np.asarray(ref, dtype=np.float64)
    _check_pair(est.shape, ref.shape)
    ref_energy = np.sum(ref * ref, axis=-1, keepdims=True)
    if np.any(ref_energy <= 0):
        raise ValueError("SI-SDR reference has zero energy")
    target = np.sum(est * ref, axis=-1, keepdims=True) / ref_energy * ref
    noise = est - target
    with np.errstate(divide="ignore"):
        out = 10.0 * np.log10(np.sum(target**2, axis=-1) / (np.sum(noise**2, axis=-1) + eps))
    return float(out) if out.ndim == 0 else out


def clamp_db(x):
    return np.clip(x, SDR_MIN, SDR_MAX)


def si_sdr_loss(est, ref, eps: float = EPS_SDR) -> Tensor:
    """Negative mean SI-SDR over a batch of (B, samples) estimate/reference pairs."""
    est = T.as_tensor(est)
    if est.size == 0 or (est.ndim > 1 and est.shape[0] == 0):
        raise ValueError("SI-SDR loss needs a nonempty batch")
    return -si_sdr(est, ref, eps).mean()


@dataclass
class EvalRecord:
    uid: str
    estimate_db: float
    mixture_db: float
    condition: str

    @classmethod
    def measure(cls, uid, estimate, mixture_ref, reference, condition) -> "EvalRecord":
        return cls(
            uid,
            float(clamp_db(si_sdr_db(estimate, reference))),
            float(clamp_db(si_sdr_db(mixture_ref, reference))),
            condition,
        )


@dataclass
class EvalTable:
    """Mean SI-SDR per condition plus the count-weighted average."""

    estimate: "OrderedDict[str, float]"
    mixture: "OrderedDict[str, float]"
    counts: "OrderedDict[str, int]"
    records: list[EvalRecord]

    @property
    def improvement(self) -> float:
        return self.estimate["ave"] - self.mixture["ave"]

    def format(self, sep: str = "\t") -> str:
        cols = list(self.counts) + ["ave"]
        lines = [sep.join(["system"] + cols)]
        for name, row in (("mixture", self.mixture), ("estimate", self.estimate)):
            lines.append(sep.join([name] + [f"{row[c]:.2f}" for c in cols]))
        return "\n".join(lines) + "\n"


def _table_row(values: Sequence[float], tags: Sequence[str], order) -> "OrderedDict[str, float]":
    row = OrderedDict()
    vals = np.asarray(values, dtype=np.float64)
    for cond in order:
        sel = [i for i, t in enumerate(tags) if t == cond]
        row[cond] = float(np.mean(vals[sel]))
    row["ave"] = float(np.mean(vals))
    return row


def evaluate_set(
    estimates: Sequence[np.ndarray],
    references: Sequence[np.ndarray],
    tags: Sequence[str],
    mixtures: Sequence[np.ndarray] | None = None,
    ids: Sequence[str] | None = None,
) -> EvalTable:
    """Aggregate clamped SI-SDR by condition tag.

    ``mixtures`` are the unprocessed reference-channel signals used for the
    baseline row; when omitted the baseline row repeats the estimates.
    """
    n = len(estimates)
    if n == 0:
        raise ValueError("cannot evaluate an empty set")
    if len(references) != n or len(tags) != n or (mixtures is not None and len(mixtures) != n):
        raise ValueError("estimates, references, tags and mixtures must be aligned")
    ids = list(ids) if ids is not None else [f"utt{i:05d}" for i in range(n)]
    mixtures = estimates if mixtures is None else mixtures
    records = [
        EvalRecord.measure(ids[i], estimates[i], mixtures[i], references[i], tags[i]) for i in range(n)
    ]
    known = [c for c in CONDITIONS if c in tags]
    order = known + sorted(set(tags) - set(known))
    counts = OrderedDict((c, sum(1 for t in tags if t == c)) for c in order)
    return EvalTable(
        _table_row([r.estimate_db for r in records], tags, order),
        _table_row([r.mixture_db for r in records], tags, order),
        counts,
        records,
    )
