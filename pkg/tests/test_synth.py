import networkx as nx
import numpy as np
import pytest

from graphbridge.errors import ConfigError
from graphbridge.graph_data import undirected_pairs
from graphbridge.synth import MOTIFS, synth, synth_mol, synth_ptcld, synth_sbm


def _nx(graph) -> nx.Graph:
    g = nx.Graph()
    g.add_nodes_from(range(graph.num_nodes))
    g.add_edges_from(undirected_pairs(graph.adj))
    return g


def test_degenerate_sbm_gives_two_cliques():
    graph_set = synth_sbm(block_sizes=(2, 2), p_in=1.0, p_out=0.0, feature_dim=3, seed=0)
    graph = graph_set.graphs[0]
    assert undirected_pairs(graph.adj) == [(0, 1), (2, 3)]
    np.testing.assert_array_equal(graph.node_labels, [0, 0, 1, 1])
    assert graph_set.num_classes == 2


def test_sbm_rejects_bad_probability():
    with pytest.raises(ConfigError):
        synth_sbm(p_in=1.5)


@pytest.mark.parametrize("kind", ["sbm", "mol", "ptcld"])
def test_synth_is_deterministic(kind):
    params = {"block_sizes": [6, 6]} if kind == "sbm" else {"count": 10}
    assert synth(kind, params, seed=4) == synth(kind, params, seed=4)


def test_synth_rejects_unknown_parameters():
    with pytest.raises(ConfigError):
        synth("mol", {"atoms": 3})
    with pytest.raises(ConfigError):
        synth("lattice")


def test_mol_labels_follow_planted_motifs():
    graph_set = synth_mol(count=12, motifs_per_graph=1, seed=2)
    triangle = nx.Graph(MOTIFS[0])
    for graph in graph_set.graphs:
        g = _nx(graph)
        has_triangle = sum(nx.triangles(g).values()) > 0
        assert has_triangle == (graph.graph_label == 0)
        assert nx.number_of_edges(g) - g.number_of_nodes() + 1 == 1
        assert nx.is_connected(g)
    assert triangle.number_of_edges() == 3
    assert sorted(graph_set.labels().tolist()) == [0] * 6 + [1] * 6


def test_mol_features_are_one_hot():
    graph_set = synth_mol(count=4, num_atom_types=5, seed=1)
    for graph in graph_set.graphs:
        np.testing.assert_array_equal(graph.features.sum(axis=1), 1.0)
        assert graph.feature_dim == 5


def test_ptcld_shapes_and_degrees():
    graph_set = synth_ptcld(count=6, points=32, k=4, seed=0)
    assert graph_set.feature_dim == 3
    assert graph_set.num_classes == 3
    for graph in graph_set.graphs:
        assert graph.num_nodes == 32
        assert graph.adj.in_degrees().min() >= 4


def test_two_cluster_clouds_cluster_more_than_balls():
    graph_set = synth_ptcld(count=30, points=64, k=8, seed=5)
    coeff = {0: [], 2: []}
    for graph in graph_set.graphs:
        if graph.graph_label in coeff:
            coeff[graph.graph_label].append(nx.average_clustering(_nx(graph)))
    assert np.mean(coeff[2]) > np.mean(coeff[0])


def test_mol_atom_types_do_not_reveal_label():
    graph_set = synth_mol(count=40, seed=3)
    type_zero = {0: [], 1: []}
    for graph in graph_set.graphs:
        type_zero[graph.graph_label].append(int(graph.features[:, 0].sum()))
    assert max(type_zero[0]) >= min(type_zero[1])
    assert max(type_zero[1]) >= min(type_zero[0])
