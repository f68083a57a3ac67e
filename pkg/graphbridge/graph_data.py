#!/usr/bin/env python3
"""
Graph containers for GraphBridge
Single graphs, validated graph sets, disjoint-union batches and splits
"""

from dataclasses import dataclass, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .errors import LabelRangeError, SchemaError, SplitError
from .sparse import SparseAdj

KINDS = ("node_task", "graph_task", "edge_task", "pointcloud_task")
SPLIT_NAMES = ("train", "val", "test")
DEFAULT_FRACTIONS = (0.6, 0.2, 0.2)


@dataclass(frozen=True, eq=False)
class Graph:
    """Node features, adjacency and optional labels of one graph"""

    features: np.ndarray
    adj: SparseAdj
    node_labels: Optional[np.ndarray] = None
    graph_label: Optional[int] = None

    def __post_init__(self):
        features = np.array(self.features, dtype=np.float64)
        if features.ndim != 2:
            raise SchemaError("features", f"expected a 2-D array, got shape {features.shape}")
        if features.shape[0] != self.adj.num_nodes:
            raise SchemaError("features", f"{features.shape[0]} rows for {self.adj.num_nodes} nodes")
        features.flags.writeable = False
        object.__setattr__(self, "features", features)
        if self.node_labels is not None:
            labels = np.asarray(self.node_labels, dtype=np.int64).reshape(-1)
            if labels.shape[0] != self.adj.num_nodes:
                raise SchemaError("node_labels", f"{labels.shape[0]} labels for {self.adj.num_nodes} nodes")
            labels.flags.writeable = False
            object.__setattr__(self, "node_labels", labels)
        if self.graph_label is not None:
            object.__setattr__(self, "graph_label", int(self.graph_label))

    @property
    def num_nodes(self) -> int:
        return self.adj.num_nodes

    @property
    def feature_dim(self) -> int:
        return self.features.shape[1]

    def with_features(self, features: np.ndarray) -> "Graph":
        return replace(self, features=features)

    def with_adj(self, adj: SparseAdj) -> "Graph":
        return replace(self, adj=adj)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Graph):
            return NotImplemented
        same_labels = (
            (self.node_labels is None and other.node_labels is None)
            or (self.node_labels is not None and other.node_labels is not None
                and np.array_equal(self.node_labels, other.node_labels))
        )
        return (
            self.features.shape == other.features.shape
            and np.array_equal(self.features, other.features)
            and np.array_equal(self.adj.edge_list(), other.adj.edge_list())
            and np.array_equal(self.adj.weights, other.adj.weights)
            and self.adj.undirected == other.adj.undirected
            and same_labels
            and self.graph_label == other.graph_label
        )

    __hash__ = None


@dataclass(frozen=True, eq=False)
class GraphSet:
    """A downstream or pre-training dataset"""

    kind: str
    graphs: Tuple[Graph, ...]
    num_classes: int
    feature_dim: int
    splits: Optional[Dict[str, np.ndarray]] = None

    def __post_init__(self):
        object.__setattr__(self, "graphs", tuple(self.graphs))
        if self.kind not in KINDS:
            raise SchemaError("kind", f"unknown kind '{self.kind}', expected one of {KINDS}")
        if self.num_classes < 1:
            raise SchemaError("num_classes", "must be >= 1")
        if self.feature_dim < 1:
            raise SchemaError("feature_dim", "must be >= 1")
        if self.kind in ("node_task", "edge_task") and len(self.graphs) != 1:
            raise SchemaError("graphs", f"{self.kind} holds exactly one graph, got {len(self.graphs)}")

        for i, graph in enumerate(self.graphs):
            if graph.feature_dim != self.feature_dim and graph.num_nodes > 0:
                raise SchemaError(f"graphs[{i}].features",
                                  f"width {graph.feature_dim} != feature_dim {self.feature_dim}")
            if graph.node_labels is not None and graph.node_labels.size:
                bad = np.flatnonzero((graph.node_labels < 0) | (graph.node_labels >= self.num_classes))
                if bad.size:
                    raise LabelRangeError(f"graphs[{i}].node_labels[{int(bad[0])}]",
                                          f"label {int(graph.node_labels[bad[0]])} outside [0, {self.num_classes})")
            if graph.graph_label is not None and not 0 <= graph.graph_label < self.num_classes:
                raise LabelRangeError(f"graphs[{i}].graph_label",
                                      f"label {graph.graph_label} outside [0, {self.num_classes})")

        if self.splits is not None:
            object.__setattr__(self, "splits", self._validated_splits(self.splits))

    def split_universe(self) -> Optional[int]:
        """Number of splittable items, or None when splits index run-time pairs"""
        if self.kind == "node_task":
            return self.graphs[0].num_nodes
        if self.kind == "edge_task":
            return None
        return len(self.graphs)

    def _validated_splits(self, splits: Dict[str, Sequence[int]]) -> Dict[str, np.ndarray]:
        out = {}
        seen: Dict[int, str] = {}
        limit = self.split_universe()
        for name in SPLIT_NAMES:
            if name not in splits:
                raise SchemaError(f"splits.{name}", "missing")
            idx = np.asarray(splits[name], dtype=np.int64).reshape(-1)
            for j, value in enumerate(idx.tolist()):
                if value < 0 or (limit is not None and value >= limit):
                    raise SchemaError(f"splits.{name}[{j}]", f"index {value} out of range")
                if value in seen:
                    raise SchemaError(f"splits.{name}[{j}]", f"index {value} also in {seen[value]}")
                seen[value] = name
            idx.flags.writeable = False
            out[name] = idx
        return out

    def with_splits(self, splits: Dict[str, Sequence[int]]) -> "GraphSet":
        return replace(self, splits=splits)

    def labels(self) -> np.ndarray:
        """Node labels for node tasks, graph labels otherwise"""
        if self.kind in ("node_task", "edge_task"):
            labels = self.graphs[0].node_labels
            return labels if labels is not None else np.zeros(0, dtype=np.int64)
        return np.array([g.graph_label if g.graph_label is not None else -1 for g in self.graphs],
                        dtype=np.int64)

    def __eq__(self, other) -> bool:
        if not isinstance(other, GraphSet):
            return NotImplemented
        if (self.kind, self.num_classes, self.feature_dim, len(self.graphs)) != \
                (other.kind, other.num_classes, other.feature_dim, len(other.graphs)):
            return False
        if (self.splits is None) != (other.splits is None):
            return False
        if self.splits is not None and any(
                not np.array_equal(self.splits[k], other.splits[k]) for k in SPLIT_NAMES):
            return False
        return all(a == b for a, b in zip(self.graphs, other.graphs))

    __hash__ = None


@dataclass(frozen=True, eq=False)
class Batch:
    """Disjoint union of k graphs"""

    features: np.ndarray
    adj: SparseAdj
    graph_id: np.ndarray
    offsets: np.ndarray
    node_labels: Optional[np.ndarray] = None
    graph_labels: Optional[np.ndarray] = None

    @property
    def num_graphs(self) -> int:
        return len(self.offsets)

    @property
    def num_nodes(self) -> int:
        return self.adj.num_nodes

    def as_graph(self) -> Graph:
        return Graph(self.features, self.adj, self.node_labels)


def batch_graphs(graphs: Sequence[Graph]) -> Batch:
    """
    Merge graphs into one block-diagonal graph

    Args:
        graphs: Graphs sharing one feature width

    Returns:
        Batch whose edges are offset by cumulative node counts
    """
    if not graphs:
        raise SchemaError("graphs", "cannot batch an empty list")
    width = graphs[0].feature_dim
    for i, graph in enumerate(graphs):
        if graph.feature_dim != width:
            raise SchemaError(f"graphs[{i}].features", f"width {graph.feature_dim} != {width}")

    sizes = np.array([g.num_nodes for g in graphs], dtype=np.int64)
    offsets = np.concatenate([[0], np.cumsum(sizes)[:-1]]).astype(np.int64)
    total = int(sizes.sum())

    adj = SparseAdj(
        total,
        np.concatenate([g.adj.src + off for g, off in zip(graphs, offsets)]),
        np.concatenate([g.adj.dst + off for g, off in zip(graphs, offsets)]),
        np.concatenate([g.adj.weights for g in graphs]),
        undirected=all(g.adj.undirected for g in graphs),
    )
    features = np.concatenate([g.features for g in graphs], axis=0).reshape(total, width)
    graph_id = np.repeat(np.arange(len(graphs), dtype=np.int64), sizes)

    node_labels = None
    if all(g.node_labels is not None for g in graphs):
        node_labels = np.concatenate([g.node_labels for g in graphs])
    graph_labels = None
    if all(g.graph_label is not None for g in graphs):
        graph_labels = np.array([g.graph_label for g in graphs], dtype=np.int64)

    return Batch(features, adj, graph_id, offsets, node_labels, graph_labels)


def split_indices(count: int, fractions: Sequence[float] = DEFAULT_FRACTIONS,
                  seed: int = 0) -> Dict[str, np.ndarray]:
    """Seeded shuffle split of range(count) into train/val/test"""
    if len(fractions) != 3 or any(f < 0 for f in fractions):
        raise SplitError(f"expected three non-negative fractions, got {list(fractions)}")
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise SplitError(f"fractions sum to {sum(fractions)}, expected 1")
    n_train = int(np.floor(fractions[0] * count + 1e-9))
    n_val = int(np.floor(fractions[1] * count + 1e-9))
    n_test = count - n_train - n_val
    if min(n_train, n_val, n_test) <= 0:
        raise SplitError(f"split of {count} items by {list(fractions)} leaves an empty split")
    perm = np.random.default_rng(seed).permutation(count)
    return {
        "train": np.sort(perm[:n_train]),
        "val": np.sort(perm[n_train:n_train + n_val]),
        "test": np.sort(perm[n_train + n_val:]),
    }


def make_splits(graph_set: GraphSet, fractions: Sequence[float] = DEFAULT_FRACTIONS,
                seed: int = 0) -> GraphSet:
    """Attach a seeded split unless the set already carries one"""
    if graph_set.splits is not None:
        return graph_set
    count = graph_set.split_universe()
    if count is None:
        raise SplitError("edge tasks split their sampled pairs at run time")
    return graph_set.with_splits(split_indices(count, fractions, seed))


def induced_subgraph(graph: Graph, keep: Sequence[int]) -> Graph:
    """Subgraph on `keep` (in the given order), nodes reindexed"""
    keep = np.asarray(keep, dtype=np.int64)
    remap = np.full(graph.num_nodes, -1, dtype=np.int64)
    remap[keep] = np.arange(len(keep))
    mask = (remap[graph.adj.src] >= 0) & (remap[graph.adj.dst] >= 0)
    adj = SparseAdj(len(keep), remap[graph.adj.src[mask]], remap[graph.adj.dst[mask]],
                    graph.adj.weights[mask], graph.adj.undirected)
    labels = graph.node_labels[keep] if graph.node_labels is not None else None
    return Graph(graph.features[keep], adj, labels, graph.graph_label)


def undirected_pairs(adj: SparseAdj) -> List[Tuple[int, int]]:
    """Unique unordered pairs (u < v) of an undirected adjacency, self-loops dropped"""
    pairs = {(min(u, v), max(u, v)) for u, v in zip(adj.src.tolist(), adj.dst.tolist()) if u != v}
    return sorted(pairs)


def symmetric_adj(num_nodes: int, pairs) -> SparseAdj:
    """Undirected adjacency holding both directions of each pair"""
    edges = []
    for u, v in sorted({(min(u, v), max(u, v)) for u, v in pairs}):
        edges.append((u, v))
        if u != v:
            edges.append((v, u))
    return SparseAdj.from_edges(num_nodes, sorted(edges), undirected=True)
