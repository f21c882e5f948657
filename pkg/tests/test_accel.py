"""Backend equivalence: the numba kernels must match the numpy reference."""
import numpy as np
import pytest

from vibegest._accel import numpy_backend

try:
    from vibegest._accel import numba_backend
except ImportError:
    numba_backend = None

needs_numba = pytest.mark.skipif(numba_backend is None,
                                 reason="numba not importable")


@needs_numba
@pytest.mark.parametrize("dtype", [np.float32, np.float64])
def test_biquad_equivalence(rng, dtype):
    x = rng.standard_normal((3, 500)).astype(dtype)
    coeffs = np.array([[0.33, 0.0, -0.33, 0.46, 0.32],
                       [0.9, 0.1, 0.0, -0.2, 0.05]])
    s1 = np.zeros((2, 3, 2))
    s2 = np.zeros((2, 3, 2))
    y1 = numpy_backend.biquad_apply(x, coeffs, s1)
    y2 = numba_backend.biquad_apply(x, coeffs, s2)
    np.testing.assert_allclose(y1, y2, rtol=1e-6, atol=1e-10)
    np.testing.assert_allclose(s1, s2, rtol=1e-6, atol=1e-10)


@needs_numba
@pytest.mark.parametrize("k", [3, 9, 15, 39])
@pytest.mark.parametrize("length", [5, 40, 257])
def test_depthwise_forward_equivalence(rng, k, length):
    if length < k:
        pytest.skip("window shorter than kernel is not a supported shape")
    x = rng.standard_normal((4, 6, length))
    w = rng.standard_normal((6, k))
    b = rng.standard_normal(6)
    np.testing.assert_allclose(numba_backend.depthwise_forward(x, w, b),
                               numpy_backend.depthwise_forward(x, w, b),
                               rtol=1e-10, atol=1e-12)


@needs_numba
@pytest.mark.parametrize("k", [3, 15])
def test_depthwise_backward_equivalence(rng, k):
    x = rng.standard_normal((3, 5, 64))
    w = rng.standard_normal((5, k))
    dy = rng.standard_normal((3, 5, 64))
    got = numba_backend.depthwise_backward(x, w, dy)
    ref = numpy_backend.depthwise_backward(x, w, dy)
    for g, r, name in zip(got, ref, ("dx", "dw", "db")):
        np.testing.assert_allclose(g, r, rtol=1e-9, atol=1e-11, err_msg=name)


@needs_numba
@pytest.mark.parametrize("length", [2, 7, 64])
def test_maxpool_relu_equivalence(rng, length):
    x = rng.standard_normal((3, 4, length)).astype(np.float32)
    y1, c1 = numpy_backend.maxpool2_relu_forward(x)
    y2, c2 = numba_backend.maxpool2_relu_forward(x)
    np.testing.assert_array_equal(y1, y2)
    np.testing.assert_array_equal(c1, c2)
    dy = rng.standard_normal(y1.shape).astype(np.float32)
    np.testing.assert_array_equal(
        numpy_backend.maxpool2_relu_backward(dy, c1, length),
        numba_backend.maxpool2_relu_backward(dy, c2, length))


def test_maxpool_relu_semantics():
    x = np.array([[[3.0, 1.0, -2.0, -5.0, 2.0, 2.0]]])
    y, code = numpy_backend.maxpool2_relu_forward(x)
    np.testing.assert_array_equal(y[0, 0], [3.0, 0.0, 2.0])
    # codes: first wins + positive; first wins + clipped; tie -> first + positive
    np.testing.assert_array_equal(code[0, 0], [2, 0, 2])
    dy = np.ones_like(y)
    dx = numpy_backend.maxpool2_relu_backward(dy, code, 6)
    np.testing.assert_array_equal(dx[0, 0], [1, 0, 0, 0, 1, 0])


@needs_numba
def test_maxpool_relu_tie_breaks_identically(rng):
    x = np.zeros((1, 1, 8), dtype=np.float32)  # all ties at zero: clipped
    _, c1 = numpy_backend.maxpool2_relu_forward(x)
    _, c2 = numba_backend.maxpool2_relu_forward(x)
    np.testing.assert_array_equal(c1, c2)
    assert np.all(c1 == 0)


@needs_numba
def test_bn_kernels_equivalence(rng):
    z1 = rng.standard_normal((4, 5, 32)).astype(np.float32)
    z2 = z1.copy()
    mu = rng.standard_normal(5).astype(np.float32)
    invstd = rng.uniform(0.5, 2.0, 5).astype(np.float32)
    gamma = rng.standard_normal(5).astype(np.float32)
    beta = rng.standard_normal(5).astype(np.float32)
    y1 = numpy_backend.bn_affine(z1, mu, invstd, gamma, beta)
    y2 = numba_backend.bn_affine(z2, mu, invstd, gamma, beta)
    np.testing.assert_allclose(y1, y2, rtol=1e-6, atol=1e-7)
    np.testing.assert_allclose(z1, z2, rtol=1e-6, atol=1e-7)  # xhat in place

    dy1 = rng.standard_normal((4, 5, 32)).astype(np.float32)
    dy2 = dy1.copy()
    s = rng.standard_normal(5).astype(np.float32)
    b = rng.standard_normal(5).astype(np.float32)
    t = rng.standard_normal(5).astype(np.float32)
    np.testing.assert_allclose(
        numpy_backend.bn_input_grad(dy1, z1, s, b, t),
        numba_backend.bn_input_grad(dy2, z2, s, b, t), rtol=1e-5, atol=1e-6)


def test_backend_reports_name():
    from vibegest import _accel

    assert _accel.backend() in ("numba", "numpy")


def test_numpy_backend_stream_state_carries(rng):
    coeffs = np.array([[0.33, 0.0, -0.33, 0.46, 0.32]])
    x = rng.standard_normal((2, 300))
    state = np.zeros((1, 2, 2))
    full = numpy_backend.biquad_apply(x, coeffs, np.zeros((1, 2, 2)))
    a = numpy_backend.biquad_apply(x[:, :100], coeffs, state)
    b = numpy_backend.biquad_apply(x[:, 100:], coeffs, state)
    np.testing.assert_allclose(np.concatenate([a, b], axis=1), full,
                               rtol=1e-12, atol=1e-14)
