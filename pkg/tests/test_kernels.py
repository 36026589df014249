import numpy as np
import pytest

from memgan import kernels
from oracles import ref_matmul

rng = np.random.default_rng(1234)


def test_matmul_matches_scalar_reference_bitwise():
    a = rng.standard_normal((17, 23))
    b = rng.standard_normal((23, 9))
    got = kernels.matmul_acc(a, b)
    assert np.array_equal(got, ref_matmul(a, b))


def test_matmul_backend_parity():
    # the numpy fallback must agree bit for bit with whatever is active
    a = rng.standard_normal((31, 40))
    b = rng.standard_normal((40, 13))
    assert np.array_equal(kernels.matmul_acc(a, b), kernels._matmul_acc_np(a, b))


def test_matmul_shape_mismatch():
    with pytest.raises(ValueError, match="shape mismatch"):
        kernels.matmul_acc(np.ones((2, 3)), np.ones((4, 2)))


def test_im2col_values_and_order():
    img = np.arange(2 * 4 * 4, dtype=np.float64).reshape(2, 4, 4)
    cols = kernels.im2col(img, 2, 2, 2)
    assert cols.shape == (4, 8)
    # first output pixel, channel-major then kernel row then kernel col
    assert list(cols[0]) == [0, 1, 4, 5, 16, 17, 20, 21]
    # strided second pixel
    assert list(cols[1]) == [2, 3, 6, 7, 18, 19, 22, 23]


def test_im2col_backend_parity():
    imgs = rng.standard_normal((3, 2, 7, 6))
    got = kernels.im2col_batch(imgs, 3, 2, 2)
    oh, ow = (7 - 3) // 2 + 1, (6 - 2) // 2 + 1
    ref = kernels._im2col_np(imgs, 3, 2, 2, oh, ow)
    assert np.array_equal(got, ref)


def test_im2col_kernel_too_large():
    with pytest.raises(ValueError, match="does not fit"):
        kernels.im2col(np.zeros((1, 3, 3)), 4, 4, 1)


def test_col2im_is_adjoint_of_im2col():
    # <im2col(x), y> == <x, col2im(y)> pins the scatter against the gather
    x = rng.standard_normal((2, 6, 5))
    y = rng.standard_normal(((6 - 3 + 1) * (5 - 2 + 1), 2 * 3 * 2))
    lhs = float(np.sum(kernels.im2col(x, 3, 2, 1) * y))
    rhs = float(np.sum(x * kernels.col2im(y, (2, 6, 5), 3, 2, 1)))
    assert lhs == pytest.approx(rhs, rel=1e-12)


def test_col2im_batch_parity_and_shape_check():
    # overlapping patches accumulate in backend-defined order, so parity
    # here is numerical, not bitwise (col2im only feeds gradients)
    n, shape = 2, (3, 5, 5)
    cols = rng.standard_normal((n * 9, 3 * 3 * 3))
    got = kernels.col2im_batch(cols, n, shape, 3, 3, 1)
    ref = kernels._col2im_np(cols, n, 3, 5, 5, 3, 3, 1, 3, 3)
    np.testing.assert_allclose(got, ref, rtol=1e-12, atol=1e-12)
    with pytest.raises(ValueError, match="col2im shape mismatch"):
        kernels.col2im_batch(cols[:-1], n, shape, 3, 3, 1)


def test_round_half_away():
    x = np.array([0.5, -0.5, 1.5, -1.5, 2.49, -2.51, 0.0])
    assert np.array_equal(kernels.round_half_away(x), [1, -1, 2, -2, 2, -3, 0])


def test_active_backend_reports():
    assert kernels.active_backend() in ("numba", "numpy")
