"""Complex pair arithmetic checked against numpy's native complex128."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from cnsf import tensor as T
from cnsf.complex import (
    ComplexTensor,
    angle,
    c_conj,
    c_div,
    c_inverse,
    c_matmul,
    c_mul,
    modulus,
)
from cnsf.gradcheck import grad_check, project
from cnsf.tensor import ShapeError

from conftest import cuniform
from oracles import naive_matmul


def ct(z):
    return ComplexTensor.from_numpy(np.asarray(z, dtype=complex))


def split(l):
    """Pair consecutive leaves into complex tensors."""
    return [ComplexTensor(l[i], l[i + 1]) for i in range(0, len(l), 2)]


def cproject(z: ComplexTensor, seed=0):
    return project(z.re, seed) + project(z.im, seed + 1)


class TestScalarExamples:
    def test_product(self):
        assert c_mul(ct(1 + 2j), ct(3 - 1j)).numpy() == pytest.approx(5 + 5j)

    def test_multiplicative_identity(self, rng):
        x = cuniform(rng, 6)
        np.testing.assert_allclose(c_mul(ct(x), ct(np.ones(6))).numpy(), x, atol=1e-7)

    def test_conj_modulus_angle(self):
        assert c_conj(ct(1 + 2j)).numpy() == pytest.approx(1 - 2j)
        assert float(modulus(ct(3 + 4j)).data) == pytest.approx(5.0)
        assert float(angle(ct(1j)).data) == pytest.approx(np.pi / 2)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            c_mul(ct(np.ones(3)), ct(np.ones(4)))
        with pytest.raises(ShapeError):
            ComplexTensor(T.Tensor(np.ones(2)), T.Tensor(np.ones(3)))


class TestAgainstNativeComplex:
    def test_elementwise_product_100_trials(self, rng):
        for _ in range(100):
            a, b = cuniform(rng, 4), cuniform(rng, 4)
            expect = np.array([complex(p) * complex(q) for p, q in zip(a, b)])
            np.testing.assert_allclose(c_mul(ct(a), ct(b)).numpy(), expect, atol=1e-6)

    def test_matmul_examples(self, rng):
        a = cuniform(rng, 2, 2)
        np.testing.assert_allclose(c_matmul(ct(np.eye(2)), ct(a)).numpy(), a, atol=1e-7)
        col = np.array([[1 + 1j], [2 - 3j]])
        swap = np.array([[0, 1], [1, 0]])
        np.testing.assert_allclose(c_matmul(ct(swap), ct(col)).numpy(), col[::-1], atol=1e-7)

    def test_matmul_triple_loop_100_trials(self, rng):
        for _ in range(100):
            a, b = cuniform(rng, 3, 3), cuniform(rng, 3, 3)
            expect = naive_matmul(a, b)
            np.testing.assert_allclose(c_matmul(ct(a), ct(b)).numpy(), expect, atol=1e-5)

    def test_matmul_inner_dimension_mismatch(self):
        with pytest.raises(ShapeError):
            c_matmul(ct(np.ones((2, 3))), ct(np.ones((2, 3))))

    def test_division_matches_numpy(self, rng):
        a, b = cuniform(rng, 8), cuniform(rng, 8) + 2
        np.testing.assert_allclose(c_div(ct(a), ct(b)).numpy(), a / b, rtol=1e-5)

    def test_inverse_matches_numpy(self, rng):
        a = cuniform(rng, 5, 3, 3) + 2 * np.eye(3)
        np.testing.assert_allclose(c_inverse(ct(a)).numpy(), np.linalg.inv(a), atol=1e-5)


class TestProperties:
    @settings(max_examples=60, deadline=None)
    @given(arrays(np.float64, 6, elements=st.floats(-1, 1)), arrays(np.float64, 6, elements=st.floats(-1, 1)))
    def test_product_with_conjugate_is_real(self, re, im):
        a = ComplexTensor(T.Tensor(re), T.Tensor(im))
        assert np.max(np.abs(c_mul(a, c_conj(a)).im.data)) <= 1e-6

    @settings(max_examples=60, deadline=None)
    @given(arrays(np.float64, 6, elements=st.floats(-1, 1)), arrays(np.float64, 6, elements=st.floats(-1, 1)))
    def test_modulus_squared_without_epsilon(self, re, im):
        a = ComplexTensor(T.Tensor(re), T.Tensor(im))
        m = modulus(a, eps=0.0).data.astype(np.float64)
        np.testing.assert_allclose(m**2, re**2 + im**2, atol=1e-6)


class TestGradients:
    def test_c_mul_shapes_2x3(self, rng):
        inputs = [rng.uniform(-1, 1, (2, 3)) for _ in range(4)]
        rep = grad_check(lambda l: cproject(c_mul(*split(l))), inputs, tolerance=1e-4)
        assert rep.passed, rep

    def test_c_matmul(self, rng):
        inputs = [rng.uniform(-1, 1, s) for s in [(2, 3)] * 2 + [(3, 4)] * 2]
        rep = grad_check(lambda l: cproject(c_matmul(*split(l))), inputs)
        assert rep.passed, rep

    def test_modulus_and_angle(self, rng):
        inputs = [rng.uniform(0.2, 1, 5), rng.uniform(-1, 1, 5)]
        rep = grad_check(lambda l: project(modulus(split(l)[0])) + project(angle(split(l)[0]), 3), inputs)
        assert rep.passed, rep

    def test_c_div(self, rng):
        inputs = [rng.uniform(-1, 1, 5), rng.uniform(-1, 1, 5), rng.uniform(0.5, 1, 5), rng.uniform(-1, 1, 5)]
        rep = grad_check(lambda l: cproject(c_div(*split(l))), inputs)
        assert rep.passed, rep

    def test_c_inverse(self, rng):
        a = cuniform(rng, 2, 3, 3) + 2 * np.eye(3)
        rep = grad_check(lambda l: cproject(c_inverse(split(l)[0])), [a.real, a.imag])
        assert rep.passed, rep
