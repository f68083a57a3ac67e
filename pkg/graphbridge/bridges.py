#!/usr/bin/env python3
"""
Input and output bridges
Feature-dimension adapters, task heads, point-cloud graphs and edge tasks
"""

import logging
import math
from dataclasses import dataclass
from typing import Dict, Mapping, Optional, Tuple

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .backbones import glorot_uniform, linear_count
from .errors import ConfigError, DataError, DimensionError, ScenarioError
from .graph_data import Graph, symmetric_adj, undirected_pairs

logger = logging.getLogger(__name__)

ADAPTER_KINDS = ("identity", "pad_truncate", "rand_project", "linear_trainable")
HEAD_KINDS = ("graph_cls", "node_cls", "edge_pred", "ptcld_cls")
POOLED_HEADS = ("graph_cls", "ptcld_cls")


@dataclass(frozen=True)
class AdapterSpec:
    kind: str
    src_dim: int
    dst_dim: int
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ADAPTER_KINDS:
            raise ConfigError(f"adapter kind '{self.kind}' not in {ADAPTER_KINDS}")
        if self.src_dim < 1 or self.dst_dim < 1:
            raise ConfigError("adapter dims must be >= 1")

    @classmethod
    def auto(cls, src_dim: int, dst_dim: int, kind: Optional[str] = None, seed: int = 0) -> "AdapterSpec":
        """Identity when dims agree, otherwise `kind` (default pad_truncate)"""
        if kind is None:
            kind = "identity" if src_dim == dst_dim else "pad_truncate"
        return cls(kind, src_dim, dst_dim, seed)

    @property
    def trainable(self) -> bool:
        return self.kind == "linear_trainable"

    def param_shapes(self) -> Dict[str, Tuple[int, int]]:
        if not self.trainable:
            return {}
        return {"adapter.weight": (self.src_dim, self.dst_dim), "adapter.bias": (1, self.dst_dim)}

    def param_count(self) -> int:
        return linear_count(self.src_dim, self.dst_dim) if self.trainable else 0

    def init_params(self) -> Dict[str, np.ndarray]:
        if not self.trainable:
            return {}
        rng = np.random.default_rng(self.seed)
        return {"adapter.weight": glorot_uniform(rng, self.src_dim, self.dst_dim),
                "adapter.bias": np.zeros((1, self.dst_dim))}

    def projection(self) -> np.ndarray:
        rng = np.random.default_rng(self.seed)
        return rng.normal(size=(self.src_dim, self.dst_dim)) / math.sqrt(self.src_dim)


@dataclass(frozen=True)
class HeadSpec:
    kind: str
    in_dim: int
    num_classes: int = 2

    def __post_init__(self):
        if self.kind not in HEAD_KINDS:
            raise ConfigError(f"head kind '{self.kind}' not in {HEAD_KINDS}")
        if self.in_dim < 1:
            raise ConfigError("head in_dim must be >= 1")
        if self.kind != "edge_pred" and self.num_classes < 2:
            raise ConfigError("classification heads need num_classes >= 2")

    def param_shapes(self) -> Dict[str, Tuple[int, int]]:
        if self.kind == "edge_pred":
            return {}
        return {"head.weight": (self.in_dim, self.num_classes), "head.bias": (1, self.num_classes)}

    def param_count(self) -> int:
        return 0 if self.kind == "edge_pred" else linear_count(self.in_dim, self.num_classes)

    def init_params(self, seed: int) -> Dict[str, np.ndarray]:
        if self.kind == "edge_pred":
            return {}
        rng = np.random.default_rng(seed)
        return {"head.weight": glorot_uniform(rng, self.in_dim, self.num_classes),
                "head.bias": np.zeros((1, self.num_classes))}


@dataclass(frozen=True)
class HeadContext:
    """Batch context a head may need"""

    graph_id: Optional[np.ndarray] = None
    num_graphs: Optional[int] = None
    pairs: Optional[np.ndarray] = None


def input_adapt(x, spec: AdapterSpec, params: Optional[Mapping[str, Tensor]] = None) -> Tensor:
    """
    Map node features from src_dim to dst_dim

    Args:
        x: Features [n x src_dim] (array or tensor)
        spec: Adapter description
        params: Tensors for linear_trainable ('adapter.weight', 'adapter.bias')

    Returns:
        Features [n x dst_dim]
    """
    x = ag.constant(x)
    if x.shape[1] != spec.src_dim:
        raise DimensionError(f"adapter expects {spec.src_dim} columns, got {x.shape[1]}")

    if spec.kind == "identity":
        if spec.src_dim != spec.dst_dim:
            raise DimensionError(f"identity adapter cannot map {spec.src_dim} -> {spec.dst_dim}")
        return x
    if spec.kind == "pad_truncate":
        data = x.numpy()
        if spec.dst_dim <= spec.src_dim:
            return Tensor(data[:, :spec.dst_dim])
        return Tensor(np.pad(data, ((0, 0), (0, spec.dst_dim - spec.src_dim))))
    if spec.kind == "rand_project":
        return Tensor(x.numpy() @ spec.projection())

    if params is None:
        params = {name: ag.constant(value) for name, value in spec.init_params().items()}
    return ag.linear(x, params["adapter.weight"], params["adapter.bias"])


def head_logits(spec: HeadSpec, z: Tensor, context: HeadContext,
                params: Mapping[str, Tensor]) -> Tensor:
    """Raw head outputs: class logits, or dot-product logits for edge_pred"""
    if z.shape[1] != spec.in_dim:
        raise DimensionError(f"head expects width {spec.in_dim}, got {z.shape[1]}")

    if spec.kind in POOLED_HEADS:
        if context.graph_id is None:
            raise ScenarioError(f"{spec.kind} head needs graph_id batch context")
        num_graphs = context.num_graphs
        if num_graphs is None:
            num_graphs = int(np.max(context.graph_id)) + 1
        pooled = ag.mean_rows(z, context.graph_id, num_graphs)
        return ag.linear(pooled, params["head.weight"], params["head.bias"])

    if spec.kind == "node_cls":
        return ag.linear(z, params["head.weight"], params["head.bias"])

    if context.pairs is None:
        raise ScenarioError("edge_pred head needs candidate pairs")
    pairs = np.asarray(context.pairs, dtype=np.int64).reshape(-1, 2)
    prod = ag.mul(ag.row_select(z, pairs[:, 0]), ag.row_select(z, pairs[:, 1]))
    return ag.sum_rows(prod, axis=1)


def head_forward(spec: HeadSpec, z: Tensor, context: HeadContext,
                 params: Mapping[str, Tensor]) -> Tensor:
    """
    Output Bridge

    Pooled heads mean-pool node representations per graph then apply a
    linear map; node_cls is linear per node; edge_pred scores each pair with
    sigmoid(z_u . z_v).
    """
    logits = head_logits(spec, z, context, params)
    if spec.kind == "edge_pred":
        return ag.sigmoid(logits)
    return logits


def head_loss(spec: HeadSpec, logits: Tensor, targets) -> Tensor:
    if spec.kind == "edge_pred":
        return ag.bce_logits(logits, targets)
    return ag.cross_entropy(ag.log_softmax(logits), targets)


# ----------------------------------------------------------------------------
# point clouds

def knn_neighbors(points: np.ndarray, k: int) -> np.ndarray:
    """Directed kNN lists [m x k]; ties broken by lower index"""
    points = np.asarray(points, dtype=np.float64)
    m = points.shape[0]
    if not 1 <= k < m:
        raise ConfigError(f"knn needs 1 <= k < {m}, got k={k}")
    diff = points[:, None, :] - points[None, :, :]
    dist = np.sqrt((diff * diff).sum(axis=2))
    np.fill_diagonal(dist, np.inf)
    return np.argsort(dist, axis=1, kind="stable")[:, :k]


def knn_graph(points, k: int = 8) -> Graph:
    """
    Symmetrized k-nearest-neighbour graph of a point cloud

    Args:
        points: Coordinates [m x 3]
        k: Neighbours per point before symmetrization

    Returns:
        Graph whose features are the raw coordinates
    """
    points = np.asarray(points, dtype=np.float64)
    neighbors = knn_neighbors(points, k)
    pairs = [(i, int(j)) for i in range(points.shape[0]) for j in neighbors[i]]
    return Graph(points, symmetric_adj(points.shape[0], pairs))


# ----------------------------------------------------------------------------
# edge tasks

@dataclass(frozen=True, eq=False)
class EdgeTask:
    """Held-out positive edges, sampled negatives and the remaining graph"""

    graph: Graph
    pairs: np.ndarray
    labels: np.ndarray


def sample_edge_task(graph: Graph, ratio: float = 0.1, seed: int = 0) -> EdgeTask:
    """
    Hold out ceil(ratio * e) undirected edges and sample as many non-edges

    Args:
        graph: Undirected graph
        ratio: Fraction of undirected edges held out as positives
        seed: Sampling seed

    Returns:
        EdgeTask with positives first, then negatives
    """
    existing = undirected_pairs(graph.adj)
    e = len(existing)
    n = graph.num_nodes
    if e == 0:
        raise DataError("edge task needs at least one edge")
    n_pos = max(1, math.ceil(ratio * e))
    if n_pos >= e:
        raise DataError(f"holding out {n_pos} of {e} edges would remove all edges")
    possible = n * (n - 1) // 2
    if possible - e < n_pos:
        raise DataError(f"only {possible - e} non-edges for {n_pos} negatives")

    rng = np.random.default_rng(seed)
    held = np.sort(rng.choice(e, size=n_pos, replace=False))
    held_set = set(held.tolist())
    positives = [existing[i] for i in held]
    remaining = [pair for i, pair in enumerate(existing) if i not in held_set]

    taken = set(existing)
    negatives = []
    attempts = 0
    while len(negatives) < n_pos and attempts < 100:
        attempts += 1
        draws = rng.integers(0, n, size=(4 * n_pos, 2))
        for u, v in draws.tolist():
            pair = (min(u, v), max(u, v))
            if u == v or pair in taken:
                continue
            taken.add(pair)
            negatives.append(pair)
            if len(negatives) == n_pos:
                break
    if len(negatives) < n_pos:
        free = [(u, v) for u in range(n) for v in range(u + 1, n) if (u, v) not in taken]
        picks = rng.choice(len(free), size=n_pos - len(negatives), replace=False)
        negatives.extend(free[i] for i in np.sort(picks))

    pairs = np.array(positives + negatives, dtype=np.int64)
    labels = np.concatenate([np.ones(n_pos, dtype=np.int64), np.zeros(n_pos, dtype=np.int64)])
    reduced = graph.with_adj(symmetric_adj(n, remaining))
    logger.info("edge task: %d positives, %d negatives, %d edges kept", n_pos, n_pos, len(remaining))
    return EdgeTask(reduced, pairs, labels)
