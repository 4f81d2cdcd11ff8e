import os
import sys

import numpy as np
import pytest

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
SRC = os.path.join(ROOT, "src")
if SRC not in sys.path:
    sys.path.insert(0, SRC)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def crandn(rng, *shape):
    """Standard complex normal samples."""
    return rng.standard_normal(shape) + 1j * rng.standard_normal(shape)


def cuniform(rng, *shape):
    """Real and imaginary parts uniform in [-1, 1]."""
    return rng.uniform(-1, 1, shape) + 1j * rng.uniform(-1, 1, shape)


def _resolve(root, dotted):
    *path, attr = dotted.split(".")
    obj = root
    for part in path:
        obj = obj[int(part)] if part.isdigit() else getattr(obj, part)
    return obj, attr


def model_grad_check(model, loss_fn, tolerance, max_checks=4, seed=0, h=1e-3):
    """Finite-difference check of every parameter of ``model``.

    ``loss_fn(model)`` builds a scalar loss.  Each evaluation installs the
    check's leaf tensors in place of the model parameters and restores the
    originals afterwards.
    """
    from cnsf.gradcheck import grad_check

    names = [n for n, _ in model.named_parameters()]
    originals = [getattr(*_resolve(model, n)) for n in names]

    def fn(leaves):
        for n, leaf in zip(names, leaves):
            setattr(*_resolve(model, n), leaf)
        try:
            return loss_fn(model)
        finally:
            for n, p in zip(names, originals):
                setattr(*_resolve(model, n), p)

    return grad_check(fn, [p.data for p in originals], tolerance=tolerance, h=h, max_checks=max_checks, seed=seed)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for n in sorted(results):
            terminalreporter.write_line(results[n])
