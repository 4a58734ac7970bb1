import networkx as nx
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from graphfolio import tensor as T
from graphfolio.graph_conv import (AssetGraph, GCNLayer, GraphError, build_graph, cheb_apply, cheb_conv,
                                   correlation_matrix, gcn_layer, graph_fourier, hop_distances,
                                   inverse_graph_fourier, jacobi_eigh, k_locality_check)
from graphfolio.market_data import build_panel
from graphfolio.synth import SynthSpec, generate
from oracles import dense_spectral_filter, grad_check


def random_graph(rng, m, density=1.0):
    w = rng.uniform(0.0, 2.0, (m, m))
    w = np.triu(w, 1)
    w[rng.uniform(size=w.shape) > density] = 0.0
    w = w + w.T
    if not w.any():
        w[0, 1] = w[1, 0] = 1.0
    return w


def test_jacobi_matches_numpy():
    rng = np.random.default_rng(0)
    for m in (1, 2, 5, 12):
        a = rng.normal(size=(m, m))
        a = a + a.T
        w, v = jacobi_eigh(a)
        assert np.allclose(w, np.linalg.eigvalsh(a), atol=1e-12)
        assert np.allclose(v.T @ v, np.eye(m), atol=1e-12)
        assert np.allclose(a @ v, v * w, atol=1e-11)


def test_jacobi_rejects_asymmetric():
    with pytest.raises(GraphError):
        jacobi_eigh(np.array([[0.0, 1.0], [0.0, 0.0]]))


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 12), st.integers(0, 10_000), st.floats(0.3, 1.0))
def test_laplacian_properties(m, seed, density):
    rng = np.random.default_rng(seed)
    g = AssetGraph(random_graph(rng, m, density))
    assert np.allclose(g.laplacian.sum(axis=1), 0.0, atol=1e-9)
    lam = g.eigenvalues
    assert lam.min() >= -1e-9 and lam.max() <= 2 + 1e-9
    phi = g.eigenvectors
    assert np.allclose(phi.T @ phi, np.eye(m), atol=1e-9)
    x = rng.normal(size=m)
    xt = graph_fourier(x, g)
    assert np.allclose(inverse_graph_fourier(xt, g), x, atol=1e-8)
    assert abs(np.dot(x, x) - np.dot(xt, xt)) < 1e-8


def test_invalid_weights():
    with pytest.raises(GraphError):
        AssetGraph(np.array([[0.0, 1.0], [2.0, 0.0]]))
    with pytest.raises(GraphError):
        AssetGraph(np.array([[1.0, 1.0], [1.0, 0.0]]))
    with pytest.raises(GraphError):
        AssetGraph(np.array([[0.0, -1.0], [-1.0, 0.0]]))
    with pytest.raises(GraphError):
        AssetGraph(np.zeros((3, 3))).scaled_laplacian


def test_chebyshev_equals_dense_spectral_filter():
    rng = np.random.default_rng(1)
    worst = 0.0
    for _ in range(100):
        m = int(rng.integers(2, 13))
        K = int(rng.integers(1, 9))
        w = random_graph(rng, m, rng.uniform(0.3, 1.0))
        theta = rng.normal(size=K)
        x = rng.normal(size=m)
        got = cheb_apply(AssetGraph(w), x, theta)
        worst = max(worst, np.abs(got - dense_spectral_filter(w, x, theta)).max())
    assert worst < 1e-8


def test_correlation_graph_from_closes():
    panel = build_panel(generate(SynthSpec(assets=4, days=60, correlation=0.5), seed=2))
    g = build_graph(panel, 40, n_corr=10)
    corr = np.corrcoef(panel.close[:, 31:41])
    expected = 1 - corr
    np.fill_diagonal(expected, 0)
    assert np.allclose(g.weights, expected, atol=1e-12)


def test_constant_asset_gets_zero_correlation_and_warning():
    x = np.vstack([np.arange(10.0), np.full(10, 3.0), np.arange(10.0) ** 2])
    corr, flat = correlation_matrix(x)
    assert flat == [1]
    assert corr[1, 0] == corr[0, 1] == 0.0 and corr[1, 1] == 1.0


def test_correlation_window_bounds():
    panel = build_panel(generate(SynthSpec(assets=3, days=30), seed=2))
    with pytest.raises(GraphError):
        build_graph(panel, 5, n_corr=10)


def test_hop_distances_match_networkx():
    rng = np.random.default_rng(3)
    for _ in range(20):
        m = int(rng.integers(2, 12))
        w = random_graph(rng, m, 0.25)
        ref = dict(nx.all_pairs_shortest_path_length(nx.from_numpy_array(w)))
        d = hop_distances(w, 1e-12)
        for i in range(m):
            for j in range(m):
                assert d[i, j] == ref[i].get(j, -1)


def test_k_locality_on_sparse_graphs():
    rng = np.random.default_rng(4)
    for _ in range(50):
        m = int(rng.integers(3, 12))
        w = random_graph(rng, m, 0.3)
        K = int(rng.integers(1, 6))
        rep = k_locality_check(AssetGraph(w), K, theta=rng.normal(size=K))
        assert rep.passed, rep


def test_k_locality_detects_leak_on_path():
    # on a path, order 3 reaches exactly 2 hops
    w = np.zeros((5, 5))
    for i in range(4):
        w[i, i + 1] = w[i + 1, i] = 1.0
    g = AssetGraph(w)
    e = np.zeros(5)
    e[0] = 1.0
    y = cheb_apply(g, e, [0.0, 0.0, 1.0])
    assert abs(y[2]) > 1e-3 and np.all(np.abs(y[3:]) < 1e-12)


def test_cheb_conv_sums_input_channels():
    rng = np.random.default_rng(5)
    w = random_graph(rng, 4)
    g = AssetGraph(w)
    x = rng.normal(size=(2, 4, 3))
    theta = rng.normal(size=(2, 3, 3))
    out = cheb_conv(T.Tensor(x), g, T.Tensor(theta)).data
    for o in range(3):
        ref = sum(cheb_apply(g, x[i], theta[i, o]) for i in range(2))
        assert np.allclose(out[o], ref, atol=1e-12)


def test_gcn_layer_gradients():
    rng = np.random.default_rng(6)
    g = AssetGraph(random_graph(rng, 4))
    layer = GCNLayer(3, 3, 3, rng)
    x = T.Tensor(rng.normal(size=(3, 4, 5)), requires_grad=True)
    weights = T.Tensor(rng.normal(size=(3, 4, 5)))
    loss = lambda: (layer(x, g) * weights).sum()
    assert grad_check(loss, [layer.params]) < 1e-4
    store = T.ParamStore()
    store._params["x"] = x
    assert grad_check(loss, [store]) < 1e-4


def test_gcn_layer_two_dimensional_input():
    rng = np.random.default_rng(7)
    g = AssetGraph(random_graph(rng, 3))
    theta = T.Tensor(rng.normal(size=(2, 4, 2)))
    y = gcn_layer(T.Tensor(rng.normal(size=(2, 3))), g, theta)
    assert y.shape == (4, 3) and np.all((y.data > 0) & (y.data < 1))
