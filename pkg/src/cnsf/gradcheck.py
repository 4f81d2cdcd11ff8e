"""Central finite-difference verification of tape gradients."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import tensor as T


@dataclass
class GradCheckReport:
    errors: list[float]
    tolerance: float
    directional_errors: list[float] = field(default_factory=list)

    @property
    def max_error(self) -> float:
        return max(self.errors + self.directional_errors, default=0.0)

    @property
    def passed(self) -> bool:
        return self.max_error < self.tolerance

    def __str__(self) -> str:
        status = "pass" if self.passed else "FAIL"
        return f"gradcheck {status}: max rel err {self.max_error:.3e} (tol {self.tolerance:.0e})"


def project(out: T.Tensor, seed: int = 0) -> T.Tensor:
    """Random fixed projection of a tensor to a scalar loss."""
    rng = np.random.default_rng(seed)
    r = rng.uniform(-1.0, 1.0, size=out.shape)
    return (out * T.Tensor(r, dtype=out.dtype)).sum()


def grad_check(
    fn: Callable[[Sequence[T.Tensor]], T.Tensor],
    inputs: Sequence[np.ndarray],
    tolerance: float = 1e-4,
    h: float = 1e-3,
    max_checks: int | None = None,
    seed: int = 0,
    directional: bool = True,
) -> GradCheckReport:
    """Compare reverse-mode gradients of ``fn`` with central differences.

    ``fn`` receives one leaf tensor per entry of ``inputs`` and must return a
    scalar tensor.  Everything runs in float64.  ``max_checks`` caps the number
    of sampled coordinates per input; when set, a directional derivative along
    a random vector additionally covers every coordinate at once.
    """
    rng = np.random.default_rng(seed)
    base = [np.asarray(x, dtype=np.float64) for x in inputs]

    def evaluate(arrs):
        with T.precision(np.float64):
            leaves = [T.Tensor(a) for a in arrs]
            return float(fn(leaves).data)

    with T.precision(np.float64):
        leaves = [T.Tensor(a, requires_grad=True) for a in base]
        with T.Tape() as tape:
            loss = fn(leaves)
        grads = T.backward(loss, tape)
        analytic = [np.asarray(grads[leaf], dtype=np.float64) for leaf in leaves]

    errors: list[float] = []
    dir_errors: list[float] = []
    for k, x in enumerate(base):
        flat_idx = np.arange(x.size)
        if max_checks is not None and x.size > max_checks:
            flat_idx = rng.choice(x.size, size=max_checks, replace=False)
        numeric = np.empty(flat_idx.size)
        for j, fi in enumerate(flat_idx):
            plus = [a.copy() for a in base]
            minus = [a.copy() for a in base]
            plus[k].flat[fi] += h
            minus[k].flat[fi] -= h
            numeric[j] = (evaluate(plus) - evaluate(minus)) / (2 * h)
        a = analytic[k].ravel()[flat_idx]
        # floor relative to the full tensor's gradient scale
        scale = float(np.abs(analytic[k]).max(initial=0.0))
        aa, nn = np.abs(a), np.abs(numeric)
        denom = np.maximum(np.maximum(aa, nn), max(1e-3 * scale, 1e-10))
        errors.append(float(np.max(np.abs(a - numeric) / denom, initial=0.0)))

        if directional and max_checks is not None and x.size > max_checks:
            v = rng.standard_normal(x.shape)
            v /= np.linalg.norm(v)
            plus = [a_.copy() for a_ in base]
            minus = [a_.copy() for a_ in base]
            plus[k] += h * v
            minus[k] -= h * v
            num_dir = (evaluate(plus) - evaluate(minus)) / (2 * h)
            ana_dir = float(np.sum(analytic[k] * v))
            denom = max(abs(num_dir), abs(ana_dir), 1e-3 * np.linalg.norm(analytic[k]), 1e-10)
            dir_errors.append(abs(num_dir - ana_dir) / denom)
    return GradCheckReport(errors, tolerance, dir_errors)
