"""The numba and numpy kernel paths must agree; the environment flag picks one."""

import os
import subprocess
import sys

import numpy as np
import pytest

from cnsf import kernels as K

needs_numba = pytest.mark.skipif(not K.HAVE_NUMBA, reason="numba not importable")


@needs_numba
class TestBackendParity:
    def test_overlap_add(self, rng):
        frames = rng.standard_normal((3, 11, 16))
        np.testing.assert_allclose(K.overlap_add_numba(frames, 8, 96), K.overlap_add_numpy(frames, 8, 96), atol=1e-12)

    def test_lstm_forward_and_backward(self, rng):
        b, t, h = 3, 7, 5
        gx = rng.standard_normal((b, t, 4 * h))
        wh = 0.3 * rng.standard_normal((h, 4 * h))
        for reverse in (False, True):
            fa = K.lstm_forward_numba(gx, wh, reverse)
            fb = K.lstm_forward_numpy(gx, wh, reverse)
            for x, y in zip(fa, fb):
                np.testing.assert_allclose(x, y, atol=1e-12)
            hs, cs, gates = fa
            dhs = rng.standard_normal(hs.shape)
            ba = K.lstm_backward_numba(dhs, hs, cs, gates, wh, reverse)
            bb = K.lstm_backward_numpy(dhs, hs, cs, gates, wh, reverse)
            for x, y in zip(ba, bb):
                np.testing.assert_allclose(x, y, atol=1e-10)

    def test_complex_inverse(self, rng):
        a = rng.standard_normal((9, 4, 4)) + 1j * rng.standard_normal((9, 4, 4))
        np.testing.assert_allclose(K.complex_inverse_numba(a), K.complex_inverse_numpy(a), atol=1e-10)
        np.testing.assert_allclose(K.complex_inverse_numba(a), np.linalg.inv(a), atol=1e-10)

    def test_ism(self):
        beta = np.full((2, 3), 0.8)
        args = ([1.0, 1.2, 1.1], [2.5, 2.0, 1.3], [4.0, 3.5, 2.6], beta, 6, 16000, 343.0, 2400, 16)
        np.testing.assert_allclose(K.ism_rir_numba(*args), K.ism_rir_numpy(*args), atol=1e-12)


class TestShiftKernels:
    def test_scatter_is_adjoint_of_gather(self, rng):
        n, h, w, kh, kw, o = 2, 4, 5, 3, 3, 2
        sh, sw = 1, 2
        hp, wp = (h - 1) * sh + kh, (w - 1) * sw + kw
        p = rng.standard_normal((n, h, w, kh * kw, o))
        g = rng.standard_normal((n, hp, wp, o))
        lhs = np.sum(K.shift_scatter(p, kh, kw, sh, sw, hp, wp) * g)
        rhs = np.sum(p * K.shift_gather(g, kh, kw, sh, sw, h, w))
        assert lhs == pytest.approx(rhs, rel=1e-12)

    def test_sum_is_adjoint_of_spread(self, rng):
        n, hp, wp, kh, kw, o = 2, 6, 9, 3, 3, 2
        ho, wo = K.conv_out_size(hp, kh, 1, 0), K.conv_out_size(wp, kw, 2, 0)
        p = rng.standard_normal((n, hp, wp, kh * kw, o))
        g = rng.standard_normal((n, ho, wo, o))
        lhs = np.sum(K.shift_sum(p, kh, kw, 1, 2, ho, wo) * g)
        rhs = np.sum(p * K.shift_spread(g, kh, kw, 1, 2, hp, wp))
        assert lhs == pytest.approx(rhs, rel=1e-12)


class TestSelection:
    def _backend_in_subprocess(self, value):
        env = dict(os.environ)
        env["CNSF_DISABLE_NUMBA"] = value
        out = subprocess.run(
            [sys.executable, "-c", "from cnsf import kernels; print(kernels.backend())"],
            env=env, capture_output=True, text=True, check=True,
        )
        return out.stdout.strip()

    def test_flag_forces_numpy(self):
        assert self._backend_in_subprocess("1") == "numpy"

    @needs_numba
    def test_default_uses_numba(self):
        assert self._backend_in_subprocess("0") == "numba"
