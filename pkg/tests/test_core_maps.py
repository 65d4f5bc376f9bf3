import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sckn.core_maps import (NORM_OFFSET, PoolSpec, column_norms, combine_patches, extract_patches,
                            pool_adjoint, pool_forward, pooled_size)
from sckn.errors import InvalidArgumentError


def test_patch_size_one_is_flatten(rng):
    x = rng.standard_normal((1, 3, 3))
    E = extract_patches(x, 1)
    assert E.shape == (1, 9)
    np.testing.assert_array_equal(E[0], x.ravel())


def test_zero_padded_windows_on_ones():
    E = extract_patches(np.ones((1, 3, 3)), 3)
    assert E.shape == (9, 9)
    np.testing.assert_array_equal(E[:, 4], np.ones(9))
    corner = E[:, 0]
    assert corner.sum() == 4 and np.count_nonzero(corner == 0) == 5
    # top-left window: only its bottom-right 2x2 block lies inside the map
    np.testing.assert_array_equal(corner.reshape(3, 3), [[0, 0, 0], [0, 1, 1], [0, 1, 1]])


def test_channel_major_ordering(rng):
    x = rng.standard_normal((2, 5, 5))
    E = extract_patches(x, 3)
    assert E.shape == (18, 25)
    center = 2 * 5 + 2
    np.testing.assert_array_equal(E[:9, center], x[0, 1:4, 1:4].ravel())
    np.testing.assert_array_equal(E[9:, center], x[1, 1:4, 1:4].ravel())


@pytest.mark.parametrize("size", [2, 4, 9])
def test_bad_patch_size(size):
    with pytest.raises(InvalidArgumentError):
        extract_patches(np.zeros((1, 3, 3)), size)


def test_combine_is_adjoint(rng):
    x = rng.standard_normal((2, 5, 5))
    U = rng.standard_normal((18, 25))
    lhs = np.sum(extract_patches(x, 3) * U)
    rhs = np.sum(x * combine_patches(U, 3, (5, 5)))
    assert abs(lhs - rhs) <= 1e-12 * abs(lhs)


def test_combine_extract_counts_windows():
    x = np.arange(1.0, 26.0).reshape(1, 5, 5)
    out = combine_patches(extract_patches(x, 3), 3, (5, 5))
    counts = np.full((5, 5), 9.0)
    counts[[0, -1], :] = 6
    counts[:, [0, -1]] = 6
    counts[[0, 0, -1, -1], [0, -1, 0, -1]] = 4
    np.testing.assert_allclose(out[0], counts * x[0], rtol=1e-14)


def test_combine_shape_mismatch():
    with pytest.raises(InvalidArgumentError):
        combine_patches(np.zeros((9, 10)), 3, (5, 5))


def test_column_norms_offset():
    P = np.zeros((3, 2))
    P[0, 1] = 1.0
    np.testing.assert_allclose(column_norms(P), [1e-5, 1.00001], rtol=0, atol=1e-15)
    assert NORM_OFFSET == 1e-5


def test_pool_grid_sizes():
    assert pooled_size(32, math.sqrt(2)) == 23
    assert pooled_size(9, 3) == 3
    assert pooled_size(7, 1) == 7
    op = PoolSpec(math.sqrt(2)).operator(32, 32)
    assert (op.out_height, op.out_width) == (23, 23)
    assert op.beta == pytest.approx(0.25)
    assert op.truncation_radius == pytest.approx(2 * math.sqrt(2))


def test_pool_single_impulse():
    s = 2.0
    op = PoolSpec(s).operator(8, 8)
    M = np.zeros((1, 8, 8))
    M[0, 4, 4] = 1.0  # coincides with output center (2, 2)
    out = pool_forward(M, op)
    beta = 1 / (2 * s * s)
    assert out[0, 2, 2] == pytest.approx(1.0)
    # neighbour centre (2, 3) sits at (4, 6): distance 2
    assert out[0, 2, 3] == pytest.approx(math.exp(-beta * 4))
    # (3, 3) sits at (6, 6): distance sqrt(8) is within the radius 4
    assert out[0, 3, 3] == pytest.approx(math.exp(-beta * 8))
    # (0, 0) sits at distance sqrt(32) > 4: truncated
    assert out[0, 0, 0] == 0.0


def test_pool_weight_matrix_definition():
    spec = PoolSpec(1.5)
    op = spec.operator(6, 5)
    P = op.dense()
    for zin in range(30):
        a, b = divmod(zin, 5)
        for zout in range(op.out_height * op.out_width):
            i, k = divmod(zout, op.out_width)
            d2 = (a - 1.5 * i) ** 2 + (b - 1.5 * k) ** 2
            expect = math.exp(-spec.beta * d2) if d2 <= spec.radius ** 2 else 0.0
            assert P[zin, zout] == pytest.approx(expect, abs=1e-15)


def test_pool_zero_and_linearity(rng):
    op = PoolSpec(math.sqrt(2)).operator(7, 9)
    assert not pool_forward(np.zeros((3, 7, 9)), op).any()
    assert not pool_adjoint(np.zeros((3, op.out_height, op.out_width)), op).any()
    M, N = rng.standard_normal((2, 3, 7, 9))
    lhs = pool_forward(2.0 * M - 0.5 * N, op)
    rhs = 2.0 * pool_forward(M, op) - 0.5 * pool_forward(N, op)
    np.testing.assert_allclose(lhs, rhs, rtol=1e-12, atol=1e-12)


def test_pool_adjoint_identity(rng):
    op = PoolSpec(3.0).operator(10, 11)
    M = rng.standard_normal((4, 10, 11))
    U = rng.standard_normal((4, op.out_height, op.out_width))
    lhs = np.sum(pool_forward(M, op) * U)
    rhs = np.sum(M * pool_adjoint(U, op))
    assert abs(lhs - rhs) <= 1e-12 * abs(lhs)


def test_pool_large_beta_is_identity(rng):
    op = PoolSpec(1.0, beta=1e3).operator(5, 5)
    M = rng.standard_normal((2, 5, 5))
    np.testing.assert_allclose(pool_forward(M, op), M, atol=1e-300)
    np.testing.assert_allclose(pool_adjoint(M, op), M, atol=1e-300)


def test_pool_shape_mismatch():
    op = PoolSpec(2.0).operator(6, 6)
    with pytest.raises(InvalidArgumentError):
        pool_forward(np.zeros((1, 5, 6)), op)


def test_pool_spec_validation():
    with pytest.raises(InvalidArgumentError):
        PoolSpec(0.0)
    with pytest.raises(InvalidArgumentError):
        PoolSpec(1.0, beta=-1.0)


@settings(max_examples=30, deadline=None)
@given(c=st.integers(1, 3), h=st.integers(2, 8), w=st.integers(2, 8),
       e=st.sampled_from([1, 3, 5]), seed=st.integers(0, 2 ** 31))
def test_extract_combine_adjoint_property(c, h, w, e, seed):
    if e > 2 * min(h, w) + 1:
        return
    r = np.random.default_rng(seed)
    x = r.standard_normal((c, h, w))
    U = r.standard_normal((c * e * e, h * w))
    lhs = np.sum(extract_patches(x, e) * U)
    rhs = np.sum(x * combine_patches(U, e, (h, w)))
    assert abs(lhs - rhs) <= 1e-12 * max(abs(lhs), 1.0)


@settings(max_examples=30, deadline=None)
@given(h=st.integers(1, 12), w=st.integers(1, 12), s=st.floats(1.0, 4.0), seed=st.integers(0, 2 ** 31))
def test_pool_adjoint_property(h, w, s, seed):
    r = np.random.default_rng(seed)
    op = PoolSpec(s).operator(h, w)
    assert op.out_height == math.ceil(h / s - 1e-9) and op.out_width == math.ceil(w / s - 1e-9)
    M = r.standard_normal((2, h, w))
    U = r.standard_normal((2, op.out_height, op.out_width))
    lhs = np.sum(pool_forward(M, op) * U)
    rhs = np.sum(M * pool_adjoint(U, op))
    assert abs(lhs - rhs) <= 1e-12 * max(abs(lhs), 1.0)
