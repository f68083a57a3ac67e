import numpy as np
import pytest

from graphbridge import autograd as ag
from graphbridge.errors import LabelRangeError, SchemaError, SplitError
from graphbridge.graph_data import (Graph, GraphSet, batch_graphs, induced_subgraph, make_splits,
                                    split_indices, symmetric_adj, undirected_pairs)

from .conftest import ring_graph


def test_symmetric_adj_stores_both_directions():
    adj = symmetric_adj(3, [(0, 1), (1, 0), (2, 1)])
    assert adj.num_edges == 4
    assert adj.is_symmetric()
    assert undirected_pairs(adj) == [(0, 1), (1, 2)]


def test_feature_rows_must_match_nodes():
    with pytest.raises(SchemaError):
        Graph(np.zeros((2, 3)), symmetric_adj(3, []))


def test_label_out_of_range():
    graph = Graph(np.zeros((2, 1)), symmetric_adj(2, [(0, 1)]), node_labels=[0, 4])
    with pytest.raises(LabelRangeError) as excinfo:
        GraphSet("node_task", [graph], num_classes=2, feature_dim=1)
    assert "graphs[0].node_labels[1]" in str(excinfo.value)


def test_node_task_holds_one_graph():
    with pytest.raises(SchemaError):
        GraphSet("node_task", [ring_graph(3), ring_graph(3)], num_classes=2, feature_dim=4)


def test_batch_offsets_and_owner_ids():
    batch = batch_graphs([ring_graph(2), ring_graph(3)])
    assert batch.num_nodes == 5
    np.testing.assert_array_equal(batch.graph_id, [0, 0, 1, 1, 1])
    np.testing.assert_array_equal(batch.offsets, [0, 2])
    owner_src = batch.graph_id[batch.adj.src]
    owner_dst = batch.graph_id[batch.adj.dst]
    np.testing.assert_array_equal(owner_src, owner_dst)


def test_single_graph_batch_is_identity():
    graph = ring_graph(4)
    assert batch_graphs([graph]).as_graph() == graph


def test_batch_preserves_degrees():
    graphs = [ring_graph(3), ring_graph(5, seed=1), ring_graph(4, seed=2)]
    batch = batch_graphs(graphs)
    expected = np.concatenate([g.adj.in_degrees() for g in graphs])
    np.testing.assert_array_equal(batch.adj.in_degrees(), expected)


def test_batch_rejects_mixed_widths():
    with pytest.raises(SchemaError):
        batch_graphs([ring_graph(3, feature_dim=2), ring_graph(3, feature_dim=3)])


def test_pooled_readout_matches_per_graph():
    graphs = [ring_graph(3), ring_graph(5, seed=1), ring_graph(4, seed=2)]
    batch = batch_graphs(graphs)
    pooled = ag.mean_rows(ag.constant(batch.features), batch.graph_id, batch.num_graphs).numpy()
    for i, graph in enumerate(graphs):
        np.testing.assert_allclose(pooled[i], graph.features.mean(axis=0), atol=1e-15)


def test_split_sizes_and_determinism():
    splits = split_indices(10, (0.6, 0.2, 0.2), seed=3)
    assert [len(splits[k]) for k in ("train", "val", "test")] == [6, 2, 2]
    again = split_indices(10, (0.6, 0.2, 0.2), seed=3)
    for name in splits:
        np.testing.assert_array_equal(splits[name], again[name])
    assert sorted(np.concatenate(list(splits.values())).tolist()) == list(range(10))


def test_split_rejects_empty_parts():
    with pytest.raises(SplitError):
        split_indices(3, (0.6, 0.2, 0.2))
    with pytest.raises(SplitError):
        split_indices(10, (0.5, 0.2, 0.2))


def test_existing_splits_are_kept(node_set):
    fixed = node_set.with_splits({"train": [0, 1], "val": [2], "test": [3]})
    assert make_splits(fixed, seed=9) is fixed


def test_overlapping_splits_rejected(node_set):
    with pytest.raises(SchemaError):
        node_set.with_splits({"train": [0, 1], "val": [1], "test": [3]})


def test_induced_subgraph_reindexes():
    graph = ring_graph(5)
    sub = induced_subgraph(graph, [1, 2, 4])
    assert sub.num_nodes == 3
    assert undirected_pairs(sub.adj) == [(0, 1)]
    np.testing.assert_array_equal(sub.features, graph.features[[1, 2, 4]])
