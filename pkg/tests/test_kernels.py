import numpy as np
import pytest

from signfusion import kernels
from signfusion.kernels import numpy_impl

IMPLS = [numpy_impl]
if kernels.HAVE_NUMBA:
    IMPLS.append(kernels.numba_impl)


def conv_bruteforce(x, w, b):
    n, h, wd, c = x.shape
    kh, kw, _, o = w.shape
    out = np.zeros((n, h, wd, o))
    for s in range(n):
        for i in range(h):
            for j in range(wd):
                for q in range(o):
                    acc = b[q]
                    for di in range(kh):
                        for dj in range(kw):
                            y, xx = i + di - kh // 2, j + dj - kw // 2
                            if 0 <= y < h and 0 <= xx < wd:
                                acc += float(np.dot(x[s, y, xx], w[di, dj, :, q]))
                    out[s, i, j, q] = acc
    return out


@pytest.mark.parametrize("impl", IMPLS, ids=lambda m: m.__name__.rsplit(".", 1)[-1])
class TestKernels:
    def test_conv_forward_matches_bruteforce(self, impl, rng):
        x = rng.normal(size=(2, 5, 4, 3))
        w = rng.normal(size=(3, 3, 3, 4))
        b = rng.normal(size=4)
        np.testing.assert_allclose(impl.conv2d_forward(x, w, b), conv_bruteforce(x, w, b), atol=1e-12)

    def test_conv_backward_is_adjoint(self, impl, rng):
        # <conv(x), g> is linear in x and w, so the gradients must satisfy the adjoint identities
        x = rng.normal(size=(2, 6, 5, 3))
        w = rng.normal(size=(3, 3, 3, 2))
        g = rng.normal(size=(2, 6, 5, 2))
        zero_b = np.zeros(2)
        dx, dw, db = impl.conv2d_backward(x, w, g)
        y = impl.conv2d_forward(x, w, zero_b)
        assert np.isclose(np.sum(dx * x), np.sum(y * g))
        assert np.isclose(np.sum(dw * w), np.sum(y * g))
        np.testing.assert_allclose(db, g.sum(axis=(0, 1, 2)))

    def test_maxpool_roundtrip(self, impl, rng):
        x = rng.normal(size=(1, 5, 4, 2))
        out, idx = impl.maxpool2_forward(x)
        assert out.shape == (1, 2, 2, 2)
        for i in range(2):
            for j in range(2):
                np.testing.assert_array_equal(out[0, i, j], x[0, 2 * i:2 * i + 2, 2 * j:2 * j + 2].max(axis=(0, 1)))
        dx = impl.maxpool2_backward(np.ones_like(out), idx, 5, 4)
        assert dx.sum() == out.size
        assert np.all(dx[0, 4] == 0)  # dropped odd row

    def test_maxpool_ties_pick_first(self, impl):
        x = np.zeros((1, 2, 2, 1))
        _, idx = impl.maxpool2_forward(x)
        assert idx[0, 0, 0, 0] == 0

    def test_resize_identity(self, impl, rng):
        img = rng.random((7, 5, 3))
        np.testing.assert_array_equal(impl.bilinear_resize(img, 7, 5), img)

    def test_rotate_zoom_identity(self, impl, rng):
        img = rng.random((6, 9, 3))
        np.testing.assert_array_equal(impl.rotate_zoom(img, 0.0, 1.0), img)

    def test_rotate_half_turn(self, impl, rng):
        img = rng.random((5, 7, 3))
        np.testing.assert_allclose(impl.rotate_zoom(img, np.pi, 1.0), img[::-1, ::-1], atol=1e-12)

    def test_rmsprop_formula(self, impl):
        p, g, v = np.array([1.0]), np.array([1.0]), np.array([0.0])
        impl.rmsprop_update(p, g, v, 0.001, 0.9, 1e-7)
        assert v[0] == pytest.approx(0.1, abs=1e-15)
        assert p[0] == pytest.approx(1 - 0.001 / (np.sqrt(0.1) + 1e-7), abs=1e-15)


@pytest.mark.skipif(not kernels.HAVE_NUMBA, reason="numba not installed")
class TestBackendsAgree:
    def test_conv(self, rng):
        x = rng.normal(size=(3, 9, 7, 4))
        w = rng.normal(size=(3, 3, 4, 5))
        b = rng.normal(size=5)
        g = rng.normal(size=(3, 9, 7, 5))
        np.testing.assert_allclose(kernels.numba_impl.conv2d_forward(x, w, b), numpy_impl.conv2d_forward(x, w, b),
                                   atol=1e-12)
        for a, c in zip(kernels.numba_impl.conv2d_backward(x, w, g), numpy_impl.conv2d_backward(x, w, g)):
            np.testing.assert_allclose(a, c, atol=1e-12)

    def test_images(self, rng):
        img = rng.random((10, 13, 3))
        np.testing.assert_allclose(kernels.numba_impl.bilinear_resize(img, 17, 6),
                                   numpy_impl.bilinear_resize(img, 17, 6), atol=1e-14)
        np.testing.assert_allclose(kernels.numba_impl.rotate_zoom(img, 0.4, 0.85),
                                   numpy_impl.rotate_zoom(img, 0.4, 0.85), atol=1e-14)

    def test_rmsprop_bitwise(self, rng):
        p, g, v = rng.normal(size=50), rng.normal(size=50), rng.random(50)
        p2, v2 = p.copy(), v.copy()
        kernels.numba_impl.rmsprop_update(p, g, v, 1e-3, 0.9, 1e-7)
        numpy_impl.rmsprop_update(p2, g, v2, 1e-3, 0.9, 1e-7)
        np.testing.assert_array_equal(p, p2)
        np.testing.assert_array_equal(v, v2)


def test_backend_flag_is_reported():
    assert kernels.BACKEND in ("numba", "numpy")
