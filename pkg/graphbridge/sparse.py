#!/usr/bin/env python3
"""
Sparse adjacency and graph message-passing primitives

Edges are stored as (src, dst) pairs; aggregation sends x[src] to dst.
Undirected graphs keep both directions explicitly.
"""

from dataclasses import dataclass
from functools import cached_property
from typing import Iterable, Optional, Tuple

import numpy as np
import scipy.sparse as sp

from .autograd import Tensor, primitive, tensor_eval
from .errors import DanglingEdgeError, DimensionError


@dataclass(frozen=True, eq=False)
class SparseAdj:
    """Weighted directed edge list over num_nodes nodes"""

    num_nodes: int
    src: np.ndarray
    dst: np.ndarray
    weights: np.ndarray
    undirected: bool = False

    def __post_init__(self):
        src = np.asarray(self.src, dtype=np.int64).reshape(-1)
        dst = np.asarray(self.dst, dtype=np.int64).reshape(-1)
        weights = np.asarray(self.weights, dtype=np.float64).reshape(-1)
        if not (len(src) == len(dst) == len(weights)):
            raise DimensionError(
                f"adjacency: {len(src)} sources, {len(dst)} targets, {len(weights)} weights"
            )
        for name, idx in (("src", src), ("dst", dst)):
            if idx.size and (idx.min() < 0 or idx.max() >= self.num_nodes):
                bad = int(np.flatnonzero((idx < 0) | (idx >= self.num_nodes))[0])
                raise DanglingEdgeError(
                    f"edges[{bad}]",
                    f"{name} index {int(idx[bad])} out of range for {self.num_nodes} nodes",
                )
        for arr in (src, dst, weights):
            arr.flags.writeable = False
        object.__setattr__(self, "src", src)
        object.__setattr__(self, "dst", dst)
        object.__setattr__(self, "weights", weights)

    @classmethod
    def from_edges(cls, num_nodes: int, edges: Iterable[Tuple[int, int]],
                   weights: Optional[Iterable[float]] = None,
                   undirected: bool = False) -> "SparseAdj":
        edges = np.asarray(list(edges), dtype=np.int64).reshape(-1, 2)
        if weights is None:
            weights = np.ones(len(edges))
        return cls(num_nodes, edges[:, 0], edges[:, 1], np.asarray(list(weights), dtype=np.float64),
                   undirected=undirected)

    @property
    def num_edges(self) -> int:
        return len(self.src)

    def edge_list(self) -> np.ndarray:
        return np.stack([self.src, self.dst], axis=1)

    def with_weights(self, weights) -> "SparseAdj":
        return SparseAdj(self.num_nodes, self.src, self.dst, weights, self.undirected)

    def with_self_loops(self, weight: float = 1.0) -> "SparseAdj":
        loops = np.arange(self.num_nodes)
        return SparseAdj(
            self.num_nodes,
            np.concatenate([self.src, loops]),
            np.concatenate([self.dst, loops]),
            np.concatenate([self.weights, np.full(self.num_nodes, weight)]),
            self.undirected,
        )

    def is_symmetric(self) -> bool:
        fwd = sorted(zip(self.src.tolist(), self.dst.tolist()))
        bwd = sorted(zip(self.dst.tolist(), self.src.tolist()))
        return fwd == bwd

    def in_degrees(self) -> np.ndarray:
        return np.bincount(self.dst, minlength=self.num_nodes)

    @cached_property
    def _csr_layout(self) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        order = np.lexsort((self.src, self.dst))
        indptr = np.zeros(self.num_nodes + 1, dtype=np.int64)
        np.cumsum(np.bincount(self.dst, minlength=self.num_nodes), out=indptr[1:])
        return order, self.src[order], indptr

    def to_csr(self, weights: Optional[np.ndarray] = None) -> sp.csr_matrix:
        """Row = destination, column = source"""
        order, indices, indptr = self._csr_layout
        w = self.weights if weights is None else np.asarray(weights).reshape(-1)
        return sp.csr_matrix((w[order], indices, indptr), shape=(self.num_nodes, self.num_nodes))


def _spmm_vjp(g, inputs, out, saved, attrs):
    adj: SparseAdj = attrs["adj"]
    x = inputs[0]
    grads = [saved["matrix"].T @ g]
    if len(inputs) > 1:
        gw = (g[adj.dst] * x[adj.src]).sum(axis=1)
        grads.append(gw.reshape(inputs[1].shape))
    return grads


@primitive("spmm", _spmm_vjp)
def _spmm(inputs, adj: SparseAdj):
    x = inputs[0]
    if x.ndim != 2 or x.shape[0] != adj.num_nodes:
        raise DimensionError(f"spmm: x of shape {x.shape} for {adj.num_nodes} nodes")
    weights = None
    if len(inputs) > 1:
        weights = inputs[1]
        if weights.size != adj.num_edges:
            raise DimensionError(f"spmm: {weights.size} weights for {adj.num_edges} edges")
    matrix = adj.to_csr(weights)
    return np.asarray(matrix @ x), {"matrix": matrix}


def spmm(adj: SparseAdj, x: Tensor, weights: Optional[Tensor] = None) -> Tensor:
    """
    out[i] = sum over edges (j -> i) of weight(j, i) * x[j]

    Args:
        adj: Edge structure (and default weights)
        x: Node features [n x d]
        weights: Optional per-edge weight tensor overriding adj.weights,
            differentiable like x
    """
    inputs = [x] if weights is None else [x, weights]
    return tensor_eval("spmm", inputs, adj=adj)


def _segment_softmax_vjp(g, inputs, out, saved, attrs):
    segments = attrs["segments"]
    k = saved["num_segments"]
    flat_g = g.reshape(-1)
    flat_y = out.reshape(-1)
    dot = np.bincount(segments, weights=flat_g * flat_y, minlength=k)
    return [(flat_y * (flat_g - dot[segments])).reshape(inputs[0].shape)]


@primitive("segment_softmax", _segment_softmax_vjp)
def _segment_softmax(inputs, segments, num_segments: Optional[int] = None):
    logits = inputs[0]
    flat = logits.reshape(-1)
    segments = np.asarray(segments, dtype=np.int64)
    if segments.shape != flat.shape:
        raise DimensionError(f"segment_softmax: {segments.size} segment ids for {flat.size} logits")
    if flat.size == 0:
        return logits.copy(), {"num_segments": 0}
    k = int(num_segments if num_segments is not None else segments.max() + 1)
    seg_max = np.full(k, -np.inf)
    np.maximum.at(seg_max, segments, flat)
    exp = np.exp(flat - seg_max[segments])
    totals = np.bincount(segments, weights=exp, minlength=k)
    return (exp / totals[segments]).reshape(logits.shape), {"num_segments": k}


def segment_softmax(logits: Tensor, segments, num_segments: Optional[int] = None) -> Tensor:
    """Softmax of logits within each segment"""
    return tensor_eval("segment_softmax", [logits],
                       segments=np.asarray(segments, dtype=np.int64),
                       num_segments=num_segments)
