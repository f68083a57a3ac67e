import networkx as nx
import numpy as np
import pytest

from graphbridge import autograd as ag
from graphbridge.backbones import gcn_norm
from graphbridge.errors import DanglingEdgeError
from graphbridge.gradcheck import all_passed, grad_check
from graphbridge.graph_data import symmetric_adj
from graphbridge.sparse import SparseAdj, segment_softmax, spmm


def test_self_loop_aggregation_is_identity(rng):
    x = rng.normal(size=(4, 3))
    adj = SparseAdj.from_edges(4, [(i, i) for i in range(4)])
    np.testing.assert_array_equal(spmm(adj, ag.constant(x)).numpy(), x)


def test_single_message():
    adj = SparseAdj.from_edges(2, [(0, 1)])
    out = spmm(adj, ag.constant([[5.0], [7.0]])).numpy()
    np.testing.assert_array_equal(out, [[0.0], [5.0]])


def test_normalized_path():
    adj = gcn_norm(symmetric_adj(2, [(0, 1)]))
    out = spmm(adj, ag.constant([[2.0], [4.0]])).numpy()
    np.testing.assert_allclose(out, [[3.0], [3.0]], atol=1e-15)


def test_dangling_edge_rejected():
    with pytest.raises(DanglingEdgeError):
        SparseAdj.from_edges(3, [(5, 0)])


def test_regular_graph_preserves_ones():
    graph = nx.random_regular_graph(3, 10, seed=2)
    adj = gcn_norm(symmetric_adj(10, graph.edges()))
    out = spmm(adj, ag.constant(np.ones((10, 1)))).numpy()
    np.testing.assert_allclose(out, 1.0, atol=1e-12)


def test_csr_matches_dense_product(rng):
    edges = [(0, 1), (1, 2), (2, 0), (2, 1), (3, 3)]
    weights = rng.uniform(size=len(edges))
    adj = SparseAdj.from_edges(4, edges, weights)
    dense = np.zeros((4, 4))
    for (s, d), w in zip(edges, weights):
        dense[d, s] += w
    x = rng.normal(size=(4, 2))
    np.testing.assert_allclose(spmm(adj, ag.constant(x)).numpy(), dense @ x, atol=1e-14)


def test_spmm_gradients(rng):
    adj = SparseAdj.from_edges(5, [(0, 1), (1, 0), (1, 2), (3, 4), (4, 4), (2, 3)])
    params = {"x": rng.normal(size=(5, 3)), "w": rng.uniform(0.5, 1.5, size=(6, 1))}
    readout = ag.constant(rng.normal(size=(3, 1)))

    def forward(p):
        h = spmm(adj, p["x"], weights=p["w"])
        return ag.sum_rows(ag.mul(ag.matmul(h, readout), ag.matmul(h, readout)), axis=None)

    assert all_passed(grad_check(forward, params))


def test_segment_softmax_examples():
    np.testing.assert_allclose(segment_softmax(ag.constant([0.0, 0.0]), [0, 0]).numpy(), [0.5, 0.5])
    dominant = segment_softmax(ag.constant([1000.0, 0.0]), [0, 0]).numpy()
    np.testing.assert_allclose(dominant, [1.0, 0.0], atol=1e-9)
    grouped = segment_softmax(ag.constant([0.0, 0.0, 0.0, 0.0]), [0, 1, 1, 1]).numpy()
    np.testing.assert_allclose(grouped, [1.0, 1 / 3, 1 / 3, 1 / 3], atol=1e-15)


def test_segment_softmax_empty():
    assert segment_softmax(ag.constant(np.zeros(0)), np.zeros(0, dtype=np.int64)).size == 0


def test_segment_softmax_sums_to_one(rng):
    segments = np.sort(rng.integers(0, 6, size=40))
    out = segment_softmax(ag.constant(rng.normal(scale=5.0, size=40)), segments).numpy()
    assert np.all(out > 0) and np.all(out <= 1)
    np.testing.assert_allclose(np.bincount(segments, weights=out)[np.unique(segments)], 1.0, atol=1e-12)


def test_segment_softmax_gradients(rng):
    segments = np.array([0, 0, 1, 1, 1, 2])
    weights = ag.constant(rng.normal(size=6))

    def forward(p):
        return ag.sum_rows(ag.mul(segment_softmax(p["z"], segments), weights), axis=None)

    assert all_passed(grad_check(forward, {"z": rng.normal(size=6)}))
