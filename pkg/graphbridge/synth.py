#!/usr/bin/env python3
"""
Seeded synthetic datasets
Stochastic block models, motif-labelled molecules and point-cloud shapes
"""

import inspect
import logging
from typing import Any, Dict, List, Mapping, Optional, Sequence

import networkx as nx
import numpy as np

from .bridges import knn_graph
from .errors import ConfigError
from .graph_data import Graph, GraphSet, symmetric_adj

logger = logging.getLogger(__name__)

SYNTH_KINDS = ("sbm", "mol", "ptcld")

MOTIFS = {
    0: [(0, 1), (1, 2), (2, 0)],          # triangle
    1: [(0, 1), (1, 2), (2, 3), (3, 0)],  # 4-cycle
}


def _check_probability(name: str, value: float):
    if not 0.0 <= value <= 1.0:
        raise ConfigError(f"{name}={value} outside [0, 1]")


def synth_sbm(
        block_sizes: Sequence[int] = (40, 40, 40),
        p_in: float = 0.1,
        p_out: float = 0.01,
        feature_dim: int = 16,
        feature_signal: float = 1.0,
        seed: int = 0
) -> GraphSet:
    """
    Stochastic block model node task

    Args:
        block_sizes: Nodes per community
        p_in: Edge probability inside a community
        p_out: Edge probability across communities
        feature_dim: Width of the Gaussian node features
        feature_signal: Spread of the per-community feature centres
        seed: Generator seed

    Returns:
        node_task GraphSet labelled by community, without splits
    """
    _check_probability("p_in", p_in)
    _check_probability("p_out", p_out)
    if not block_sizes or min(block_sizes) < 1:
        raise ConfigError("block sizes must be positive")
    k = len(block_sizes)
    probs = [[p_in if a == b else p_out for b in range(k)] for a in range(k)]
    nx_graph = nx.stochastic_block_model(list(block_sizes), probs, seed=seed)

    rng = np.random.default_rng(seed)
    labels = np.repeat(np.arange(k), block_sizes)
    centres = rng.normal(scale=feature_signal, size=(k, feature_dim))
    features = centres[labels] + rng.normal(size=(len(labels), feature_dim))

    adj = symmetric_adj(len(labels), nx_graph.edges())
    graph = Graph(features, adj, node_labels=labels)
    logger.info("sbm: %d nodes, %d undirected edges", len(labels), nx_graph.number_of_edges())
    return GraphSet("node_task", (graph,), k, feature_dim)


def _random_tree(rng: np.random.Generator, n: int) -> List[tuple]:
    return [(int(rng.integers(0, i)), i) for i in range(1, n)]


def synth_mol(
        count: int = 60,
        min_nodes: int = 8,
        max_nodes: int = 16,
        num_atom_types: int = 8,
        motifs_per_graph: int = 2,
        seed: int = 0
) -> GraphSet:
    """
    Tree-shaped molecules whose label is the motif planted in them

    Label 0 graphs carry triangles, label 1 graphs carry 4-cycles. Every atom,
    motif or backbone, draws its type from the full pool, so the label is only
    recoverable from structure. Features are one-hot atom types.
    """
    if count < 2 or min_nodes < 1 or max_nodes < min_nodes:
        raise ConfigError("mol synth needs count >= 2 and 1 <= min_nodes <= max_nodes")
    if num_atom_types < 2 or motifs_per_graph < 1:
        raise ConfigError("mol synth needs num_atom_types >= 2 and motifs_per_graph >= 1")

    rng = np.random.default_rng(seed)
    labels = rng.permutation(np.arange(count) % 2)
    graphs = []
    for label in labels.tolist():
        n_tree = int(rng.integers(min_nodes, max_nodes + 1))
        edges = _random_tree(rng, n_tree)
        types = rng.integers(0, num_atom_types, size=n_tree).tolist()
        n = n_tree
        for _ in range(motifs_per_graph):
            motif = MOTIFS[label]
            size = max(max(e) for e in motif) + 1
            edges.extend((n + u, n + v) for u, v in motif)
            edges.append((int(rng.integers(0, n_tree)), n))
            types.extend(rng.integers(0, num_atom_types, size=size).tolist())
            n += size
        features = np.eye(num_atom_types)[types]
        graphs.append(Graph(features, symmetric_adj(n, edges), graph_label=label))

    logger.info("mol: %d graphs", count)
    return GraphSet("graph_task", tuple(graphs), 2, num_atom_types)


def _ball(rng: np.random.Generator, m: int) -> np.ndarray:
    direction = rng.normal(size=(m, 3))
    direction /= np.linalg.norm(direction, axis=1, keepdims=True)
    return direction * rng.uniform(size=(m, 1)) ** (1.0 / 3.0)


def _cube_surface(rng: np.random.Generator, m: int) -> np.ndarray:
    points = rng.uniform(-1.0, 1.0, size=(m, 3))
    face = rng.integers(0, 3, size=m)
    points[np.arange(m), face] = rng.choice([-1.0, 1.0], size=m)
    return points


def _elongated_pair(rng: np.random.Generator, m: int) -> np.ndarray:
    half = m // 2
    spread = np.array([0.6, 0.05, 0.05])
    first = rng.normal(size=(half, 3)) * spread + np.array([0.0, 0.5, 0.0])
    second = rng.normal(size=(m - half, 3)) * spread - np.array([0.0, 0.5, 0.0])
    return np.concatenate([first, second])


SHAPES = (_ball, _cube_surface, _elongated_pair)


def synth_ptcld(count: int = 60, points: int = 64, k: int = 8, jitter: float = 0.02,
                seed: int = 0) -> GraphSet:
    """
    Three-class point clouds turned into kNN graphs

    Classes are a filled ball, a cube surface and two elongated clusters; each
    object gets a random scale in [0.8, 1.2] and Gaussian jitter.
    """
    if count < 3:
        raise ConfigError("ptcld synth needs count >= 3")
    rng = np.random.default_rng(seed)
    labels = rng.permutation(np.arange(count) % len(SHAPES))
    graphs = []
    for label in labels.tolist():
        cloud = SHAPES[label](rng, points) * rng.uniform(0.8, 1.2)
        cloud = cloud + rng.normal(scale=jitter, size=cloud.shape)
        graph = knn_graph(cloud, k)
        graphs.append(Graph(graph.features, graph.adj, graph_label=label))

    logger.info("ptcld: %d clouds of %d points", count, points)
    return GraphSet("pointcloud_task", tuple(graphs), len(SHAPES), 3)


def synth(kind: str, params: Optional[Mapping[str, Any]] = None, seed: int = 0) -> GraphSet:
    """Dispatch to a generator by name"""
    generators = {"sbm": synth_sbm, "mol": synth_mol, "ptcld": synth_ptcld}
    if kind not in generators:
        raise ConfigError(f"unknown synth kind '{kind}', expected one of {SYNTH_KINDS}")
    params: Dict[str, Any] = dict(params or {})
    accepted = set(inspect.signature(generators[kind]).parameters) - {"seed"}
    unknown = sorted(set(params) - accepted)
    if unknown:
        raise ConfigError(f"unknown {kind} parameters {unknown}, expected some of {sorted(accepted)}")
    return generators[kind](seed=seed, **params)
