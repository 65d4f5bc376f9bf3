import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sckn.core_maps import PoolSpec
from sckn.errors import DataError, InvalidArgumentError
from sckn.kernel_ops import KernelSpec, kappa
from sckn.layer import (LayerConfig, LayerParams, NetworkParams, encode_patch, layer_forward, network_forward,
                        network_forward_batched, network_kernel, spherical_kmeans, unsupervised_init)

from conftest import unit_columns


def test_filters_must_be_unit(rng):
    Z = rng.standard_normal((9, 3))
    with pytest.raises(InvalidArgumentError):
        LayerParams(Z)
    layer = LayerParams(unit_columns(rng, 9, 3))
    with pytest.raises(InvalidArgumentError):
        layer.Z = 2 * layer.Z


def test_whitening_rebuilt_on_update(rng):
    layer = LayerParams(unit_columns(rng, 9, 4), alpha=4.0)
    A0 = layer.whitening.A.copy()
    layer.alpha = 2.0
    assert not np.allclose(layer.whitening.A, A0)
    Z = unit_columns(rng, 9, 4)
    layer.Z = Z
    K = kappa(KernelSpec(2.0), Z.T @ Z) + layer.epsilon * np.eye(4)
    np.testing.assert_allclose(layer.whitening.A @ K @ layer.whitening.A, np.eye(4), atol=1e-9)


def test_network_chain_validation(rng):
    a = LayerParams(unit_columns(rng, 9, 4))
    b = LayerParams(unit_columns(rng, 9 * 5, 2))
    with pytest.raises(InvalidArgumentError):
        NetworkParams([a, b], 1)


def test_encode_zero_and_single_filter(rng):
    layer = LayerParams(unit_columns(rng, 9, 3))
    np.testing.assert_array_equal(encode_patch(layer, np.zeros(9)), np.zeros(3))
    z = unit_columns(rng, 9, 1)
    x = unit_columns(rng, 9, 1)[:, 0]
    one = LayerParams(z, alpha=4.0, epsilon=0.0)
    np.testing.assert_allclose(encode_patch(one, x), [math.exp(4.0 * (z[:, 0] @ x - 1))], rtol=1e-14)


def test_encode_homogeneous(rng):
    layer = LayerParams(unit_columns(rng, 9, 5))
    x = rng.standard_normal(9)
    np.testing.assert_allclose(encode_patch(layer, 2.5 * x), 2.5 * encode_patch(layer, x), rtol=1e-12)
    with pytest.raises(InvalidArgumentError):
        encode_patch(layer, np.ones(8))


def test_projection_exact_at_centroids(rng):
    Z = unit_columns(rng, 27, 16)
    layer = LayerParams(Z, alpha=4.0, epsilon=0.0)
    psi = np.stack([encode_patch(layer, Z[:, i]) for i in range(16)], axis=1)
    np.testing.assert_allclose(psi.T @ psi, kappa(layer.kernel, Z.T @ Z), rtol=1e-10)


def test_nystrom_closed_form_and_contraction(rng):
    Z = unit_columns(rng, 27, 16)
    layer = LayerParams(Z, alpha=4.0, epsilon=0.0)
    Kinv = np.linalg.inv(kappa(layer.kernel, Z.T @ Z))
    X = unit_columns(rng, 27, 50)
    psi = np.stack([encode_patch(layer, X[:, i]) for i in range(50)], axis=1)
    kx = kappa(layer.kernel, Z.T @ X)
    np.testing.assert_allclose(psi.T @ psi, kx.T @ Kinv @ kx, rtol=1e-8)
    assert np.linalg.norm(psi, axis=0).max() <= 1 + 1e-12


def test_forward_shapes(rng):
    layer = LayerParams(unit_columns(rng, 27, 64), pool=PoolSpec(math.sqrt(2)))
    out, cache = layer_forward(layer, rng.standard_normal((3, 32, 32)))
    assert cache.pre_pool.shape == (1, 64, 32 * 32)
    assert out.shape == (64, 23, 23)


def test_zero_input_gives_zero_map(rng):
    layer = LayerParams(unit_columns(rng, 9, 4), pool=PoolSpec(2.0))
    out, _ = layer_forward(layer, np.zeros((1, 6, 6)))
    assert np.abs(out).max() < 1e-4


def test_forward_matches_encode_patch(rng):
    z = unit_columns(rng, 9, 1)
    layer = LayerParams(z)
    x = 3.0 * rng.standard_normal((1, 5, 5))
    out, cache = layer_forward(layer, x)
    E = cache.patches[0]
    for k in range(25):
        if np.linalg.norm(E[:, k]) >= 1:
            ref = encode_patch(layer, E[:, k])[0]
            assert abs(out[0].ravel()[k] - ref) <= 1e-3 * abs(ref)


def test_network_forward_chain_and_identity(rng):
    x = rng.standard_normal((1, 9, 9))
    same, caches = network_forward(NetworkParams([], 1), x)
    np.testing.assert_array_equal(same, x)
    assert caches == []
    net = NetworkParams([LayerParams(unit_columns(rng, 9, 4), pool=PoolSpec(1.0)),
                         LayerParams(unit_columns(rng, 36, 5), pool=PoolSpec(3.0))], 1)
    out, _ = network_forward(net, x)
    assert out.shape == (5, 3, 3)
    again, _ = network_forward(net, x)
    np.testing.assert_array_equal(out, again)
    assert net.output_shape(9, 9) == (5, 3, 3)


def test_batched_forward_matches_single(rng):
    net = NetworkParams([LayerParams(unit_columns(rng, 9, 4), pool=PoolSpec(2.0))], 1)
    xs = rng.standard_normal((5, 1, 8, 8))
    batch = network_forward_batched(net, xs, batch_size=2)
    for i in range(5):
        np.testing.assert_allclose(batch[i], network_forward(net, xs[i])[0], rtol=1e-13, atol=1e-15)


def test_network_kernel_properties(rng):
    net = NetworkParams([LayerParams(unit_columns(rng, 9, 4), pool=PoolSpec(2.0)),
                         LayerParams(unit_columns(rng, 36, 6), pool=PoolSpec(2.0))], 1)
    imgs = rng.standard_normal((10, 1, 8, 8))
    a, b = imgs[0], imgs[1]
    assert network_kernel(net, a, b) == network_kernel(net, b, a)
    ia, _ = network_forward(net, a)
    assert network_kernel(net, a, a) == pytest.approx(np.sum(ia * ia), rel=1e-14)
    feats = network_forward_batched(net, imgs).reshape(10, -1)
    G = np.array([[network_kernel(net, x, y) for y in imgs] for x in imgs])
    np.testing.assert_allclose(G, feats @ feats.T, rtol=1e-10)
    assert np.linalg.eigvalsh(G).min() >= -1e-8


def test_kmeans_fixed_points(rng):
    u = unit_columns(rng, 5, 1)
    Z = spherical_kmeans(np.repeat(u, 7, axis=1), 1)
    np.testing.assert_allclose(Z, u, atol=1e-14)
    e = np.eye(4)
    X = np.concatenate([np.repeat(e[:, :1], 6, axis=1), np.repeat(e[:, 1:2], 4, axis=1)], axis=1)
    Z = spherical_kmeans(X, 2, seed=3)
    got = sorted(map(tuple, np.round(Z.T, 12)))
    assert got == sorted([tuple(e[0]), tuple(e[1])])


def test_kmeans_monotone_and_deterministic(rng):
    X = unit_columns(rng, 6, 300)
    hist = []
    Z1 = spherical_kmeans(X, 8, iters=10, tol=0.0, seed=1, history=hist)
    assert len(hist) == 10
    assert np.all(np.diff(hist) >= -1e-9)
    np.testing.assert_array_equal(Z1, spherical_kmeans(X, 8, iters=10, tol=0.0, seed=1))
    np.testing.assert_allclose(np.linalg.norm(Z1, axis=0), 1.0, atol=1e-12)


def test_kmeans_singletons_recover_inputs(rng):
    X = unit_columns(rng, 10, 5)
    Z = spherical_kmeans(X, 5, seed=0)
    order = np.argmax(Z.T @ X, axis=0)
    assert sorted(order) == list(range(5))
    np.testing.assert_allclose(Z[:, order], X, atol=1e-12)


def test_kmeans_errors(rng):
    with pytest.raises(InvalidArgumentError):
        spherical_kmeans(unit_columns(rng, 3, 2), 3)
    X = unit_columns(rng, 3, 4)
    X[:, 1] = 0
    with pytest.raises(InvalidArgumentError):
        spherical_kmeans(X, 2)


def test_unsupervised_init(rng):
    imgs = rng.standard_normal((6, 1, 10, 10))
    configs = [LayerConfig(8, 3, 2.0), LayerConfig(6, 3, 2.0)]
    net = unsupervised_init(configs, imgs, patches_per_layer=300, seed=0, kmeans_iters=10)
    assert [l.filters_out for l in net.layers] == [8, 6]
    for layer in net.layers:
        np.testing.assert_allclose(np.linalg.norm(layer.Z, axis=0), 1.0, atol=1e-12)
    again = unsupervised_init(configs, imgs, patches_per_layer=300, seed=0, kmeans_iters=10)
    for a, b in zip(net.layers, again.layers):
        np.testing.assert_array_equal(a.Z, b.Z)


def test_unsupervised_init_constant_image():
    imgs = np.zeros((1, 1, 6, 6))
    with pytest.raises(DataError):
        unsupervised_init([LayerConfig(4, 3)], imgs, patches_per_layer=20)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2 ** 31), gamma=st.floats(0.01, 100.0))
def test_encode_homogeneity_property(seed, gamma):
    r = np.random.default_rng(seed)
    layer = LayerParams(unit_columns(r, 9, 4))
    x = r.standard_normal(9)
    np.testing.assert_allclose(encode_patch(layer, gamma * x), gamma * encode_patch(layer, x),
                               rtol=1e-11, atol=1e-300)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2 ** 31))
def test_contraction_property(seed):
    r = np.random.default_rng(seed)
    layer = LayerParams(unit_columns(r, 12, 6), alpha=r.uniform(0.5, 8.0), epsilon=0.0)
    x = unit_columns(r, 12, 1)[:, 0]
    assert np.linalg.norm(encode_patch(layer, x)) <= 1 + 1e-10
