import math

import numpy as np
import pytest

from graphbridge import autograd as ag
from graphbridge.bridges import (AdapterSpec, HeadContext, HeadSpec, head_forward, head_logits, head_loss,
                                 input_adapt, knn_graph, knn_neighbors, sample_edge_task)
from graphbridge.errors import ConfigError, DataError, DimensionError, ScenarioError
from graphbridge.graph_data import undirected_pairs

from .conftest import ring_graph


def test_identity_adapter_passes_through(rng):
    x = rng.normal(size=(3, 4))
    np.testing.assert_array_equal(input_adapt(x, AdapterSpec.auto(4, 4)).numpy(), x)


def test_identity_adapter_needs_equal_dims():
    with pytest.raises(DimensionError):
        input_adapt(np.zeros((2, 3)), AdapterSpec("identity", 3, 5))


def test_pad_and_truncate():
    out = input_adapt(np.array([[1.0, 2.0, 3.0]]), AdapterSpec.auto(3, 5))
    np.testing.assert_array_equal(out.numpy(), [[1, 2, 3, 0, 0]])
    cut = input_adapt(np.array([[1.0, 2.0, 3.0]]), AdapterSpec("pad_truncate", 3, 2))
    np.testing.assert_array_equal(cut.numpy(), [[1, 2]])


def test_padding_is_injective(rng):
    x = rng.normal(size=(6, 3))
    out = input_adapt(x, AdapterSpec("pad_truncate", 3, 7)).numpy()
    np.testing.assert_array_equal(out[:, :3], x)


def test_random_projection_is_seeded(rng):
    x = rng.normal(size=(4, 6))
    spec = AdapterSpec("rand_project", 6, 3, seed=11)
    np.testing.assert_array_equal(input_adapt(x, spec).numpy(), input_adapt(x, spec).numpy())
    assert not AdapterSpec("rand_project", 6, 3).trainable


def test_trainable_adapter_has_params():
    spec = AdapterSpec("linear_trainable", 3, 5)
    assert spec.param_count() == 3 * 5 + 5
    assert input_adapt(np.ones((2, 3)), spec).shape == (2, 5)


def test_adapter_rejects_wrong_width():
    with pytest.raises(DimensionError):
        input_adapt(np.zeros((2, 4)), AdapterSpec.auto(3, 3))


def test_pooling_of_identical_rows():
    spec = HeadSpec("graph_cls", 2, 2)
    params = {"head.weight": ag.constant(np.eye(2)), "head.bias": ag.constant(np.zeros((1, 2)))}
    z = ag.constant([[1.0, -2.0]] * 3)
    out = head_forward(spec, z, HeadContext(graph_id=np.zeros(3, dtype=np.int64), num_graphs=1), params)
    np.testing.assert_allclose(out.numpy(), [[1.0, -2.0]])


def test_pooled_head_needs_context():
    spec = HeadSpec("ptcld_cls", 2, 3)
    params = {k: ag.constant(v) for k, v in spec.init_params(0).items()}
    with pytest.raises(ScenarioError):
        head_forward(spec, ag.constant(np.ones((3, 2))), HeadContext(), params)


def test_edge_score_is_logistic_dot():
    spec = HeadSpec("edge_pred", 2)
    z = ag.constant([[1.0, 0.0], [1.0, 0.0]])
    out = head_forward(spec, z, HeadContext(pairs=np.array([[0, 1]])), {})
    assert out.numpy()[0, 0] == pytest.approx(0.731059, abs=1e-6)


def test_zero_node_head_gives_ln_c():
    spec = HeadSpec("node_cls", 4, 3)
    params = {"head.weight": ag.constant(np.zeros((4, 3))), "head.bias": ag.constant(np.zeros((1, 3)))}
    logits = head_logits(spec, ag.constant(np.ones((5, 4))), HeadContext(), params)
    assert head_loss(spec, logits, [0, 1, 2, 0, 1]).item() == pytest.approx(math.log(3))


def test_head_spec_validation():
    with pytest.raises(ConfigError):
        HeadSpec("node_cls", 4, 1)
    with pytest.raises(ConfigError):
        HeadSpec("regression", 4, 2)
    assert HeadSpec("edge_pred", 4).param_count() == 0


def test_knn_two_points():
    graph = knn_graph(np.array([[0.0, 0, 0], [1.0, 0, 0]]), k=1)
    assert undirected_pairs(graph.adj) == [(0, 1)]


def test_knn_collinear():
    points = np.array([[0.0, 0, 0], [1.0, 0, 0], [3.0, 0, 0]])
    graph = knn_graph(points, k=1)
    assert undirected_pairs(graph.adj) == [(0, 1), (1, 2)]
    np.testing.assert_array_equal(graph.features, points)


def test_knn_ties_prefer_lower_index():
    points = np.array([[0.0, 0, 0], [-1.0, 0, 0], [1.0, 0, 0]])
    np.testing.assert_array_equal(knn_neighbors(points, 1)[0], [1])


def test_knn_out_degree_is_k(rng):
    assert knn_neighbors(rng.normal(size=(20, 3)), 5).shape == (20, 5)


def test_knn_duplicates_rank_first():
    points = np.array([[0.0, 0, 0], [0.0, 0, 0], [5.0, 0, 0]])
    np.testing.assert_array_equal(knn_neighbors(points, 1)[:, 0], [1, 0, 0])


def test_knn_rejects_bad_k(rng):
    with pytest.raises(ConfigError):
        knn_graph(rng.normal(size=(3, 3)), k=3)


def test_knn_permutation_gives_isomorphic_graph(rng):
    points = rng.normal(size=(15, 3))
    perm = rng.permutation(15)
    base = set(undirected_pairs(knn_graph(points, 3).adj))
    permuted = undirected_pairs(knn_graph(points[perm], 3).adj)
    mapped = {tuple(sorted((int(perm[u]), int(perm[v])))) for u, v in permuted}
    assert mapped == base


def test_minimal_edge_task():
    graph = ring_graph(6)
    task = sample_edge_task(graph, ratio=0.01, seed=0)
    assert len(task.pairs) == 2
    np.testing.assert_array_equal(task.labels, [1, 0])


def test_edge_task_holdout_contract():
    graph = ring_graph(12)
    original = set(undirected_pairs(graph.adj))
    task = sample_edge_task(graph, ratio=0.25, seed=3)
    kept = set(undirected_pairs(task.graph.adj))
    positives = {tuple(p) for p, y in zip(task.pairs.tolist(), task.labels) if y == 1}
    negatives = {tuple(p) for p, y in zip(task.pairs.tolist(), task.labels) if y == 0}
    assert len(positives) == 3
    assert positives <= original
    assert not positives & kept
    assert not negatives & original
    assert int(task.labels.sum()) * 2 == len(task.labels)


def test_edge_task_is_seeded():
    graph = ring_graph(10)
    a = sample_edge_task(graph, 0.2, seed=7)
    b = sample_edge_task(graph, 0.2, seed=7)
    np.testing.assert_array_equal(a.pairs, b.pairs)


def test_edge_task_cannot_remove_all_edges():
    with pytest.raises(DataError):
        sample_edge_task(ring_graph(3), ratio=1.0)
