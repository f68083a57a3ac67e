#!/usr/bin/env python3
"""
Contrastive pre-training of the base model
View augmentation, encoder weight perturbation and the NT-Xent objective
"""

import logging
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Dict, List, Mapping, Sequence, Union

import numpy as np
import pandas as pd
from tqdm import tqdm

from . import autograd as ag
from .autograd import Tape, Tensor
from .backbones import BackboneConfig, Checkpoint, GNNBackbone, as_constants, init_params
from .errors import (AugmentError, BridgeRequiredError, ConfigError, DataError,
                     InsufficientNegativesError, NonFiniteLossError)
from .graph_data import (Graph, GraphSet, batch_graphs, induced_subgraph,
                         symmetric_adj, undirected_pairs)
from .optim import Adam
from .sparse import SparseAdj

logger = logging.getLogger(__name__)

AUGMENT_KINDS = ("node_drop", "edge_perturb", "attr_mask", "subgraph")
METHODS = ("graphcl", "simgrace")
GRAPHCL_VIEWS = (("node_drop", 0.2), ("edge_perturb", 0.2))
CHUNK_SIZE = 50


@dataclass(frozen=True)
class AugmentSpec:
    kind: str
    ratio: float
    seed: int = 0

    def __post_init__(self):
        if self.kind not in AUGMENT_KINDS:
            raise ConfigError(f"augmentation '{self.kind}' not in {AUGMENT_KINDS}")
        if not 0.0 <= self.ratio <= 1.0:
            raise ConfigError(f"augmentation ratio {self.ratio} outside [0, 1]")


@dataclass(frozen=True)
class PretrainConfig:
    method: str = "graphcl"
    temperature: float = 0.5
    epochs: int = 20
    batch_size: int = 64
    lr: float = 1e-3
    eta: float = 1.0
    weight_decay: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigError(f"pre-training method '{self.method}' not in {METHODS}")
        if self.temperature <= 0:
            raise ConfigError("temperature must be > 0")
        if self.eta < 0:
            raise ConfigError("perturbation magnitude eta must be >= 0")
        if self.epochs < 0 or self.batch_size < 2:
            raise ConfigError("epochs must be >= 0 and batch_size >= 2")


# ----------------------------------------------------------------------------
# augmentations

def _drop_nodes(graph: Graph, ratio: float, rng: np.random.Generator) -> Graph:
    """Drop ceil(ratio * n) nodes one uniform draw at a time, never isolating a neighbour"""
    n = graph.num_nodes
    drop = math.ceil(ratio * n)
    if drop >= n:
        raise AugmentError(f"node_drop ratio {ratio} would remove all {n} nodes")
    neighbours: Dict[int, set] = {v: set() for v in range(n)}
    for u, v in zip(graph.adj.src.tolist(), graph.adj.dst.tolist()):
        if u != v:
            neighbours[u].add(v)
            neighbours[v].add(u)

    alive = set(range(n))
    for _ in range(drop):
        candidates = [v for v in sorted(alive) if all(len(neighbours[u]) > 1 for u in neighbours[v])]
        if not candidates:
            raise AugmentError(f"node_drop: no node of the remaining {len(alive)} can go without isolating another")
        v = candidates[int(rng.integers(len(candidates)))]
        alive.discard(v)
        for u in neighbours.pop(v):
            neighbours[u].discard(v)
    return induced_subgraph(graph, np.array(sorted(alive), dtype=np.int64))


def _perturb_edges(graph: Graph, ratio: float, rng: np.random.Generator) -> Graph:
    n = graph.num_nodes
    adj = graph.adj
    if adj.undirected:
        existing = undirected_pairs(adj)
    else:
        existing = sorted({(u, v) for u, v in adj.edge_list().tolist() if u != v})
    count = math.ceil(ratio * len(existing))
    if count == 0:
        return graph

    removed = set(rng.choice(len(existing), size=count, replace=False).tolist())
    kept = [pair for i, pair in enumerate(existing) if i not in removed]

    taken = set(existing)
    if adj.undirected:
        free = [(u, v) for u in range(n) for v in range(u + 1, n) if (u, v) not in taken]
    else:
        free = [(u, v) for u in range(n) for v in range(n) if u != v and (u, v) not in taken]
    if len(free) < count:
        raise AugmentError(f"edge_perturb needs {count} non-edges, graph has {len(free)}")
    added = [free[i] for i in np.sort(rng.choice(len(free), size=count, replace=False))]

    if adj.undirected:
        return graph.with_adj(symmetric_adj(n, kept + added))
    return graph.with_adj(SparseAdj.from_edges(n, sorted(kept + added)))


def _mask_attributes(graph: Graph, ratio: float, rng: np.random.Generator) -> Graph:
    n = graph.num_nodes
    rows = rng.choice(n, size=min(n, math.ceil(ratio * n)), replace=False)
    features = graph.features.copy()
    features[rows] = 0.0
    return graph.with_features(features)


def _random_walk_subgraph(graph: Graph, ratio: float, rng: np.random.Generator) -> Graph:
    n = graph.num_nodes
    size = math.ceil((1.0 - ratio) * n)
    if size == 0:
        raise AugmentError(f"subgraph ratio {ratio} would keep no nodes")
    keep = _walk_nodes(graph.adj, size, rng, set())
    return induced_subgraph(graph, np.sort(np.array(keep, dtype=np.int64)))


def _walk_nodes(adj: SparseAdj, size: int, rng: np.random.Generator, excluded: set) -> List[int]:
    """Grow a node set by repeatedly stepping to a random frontier neighbour"""
    neighbours: Dict[int, List[int]] = {}
    for u, v in zip(adj.src.tolist(), adj.dst.tolist()):
        neighbours.setdefault(u, []).append(v)
        neighbours.setdefault(v, []).append(u)

    available = [i for i in range(adj.num_nodes) if i not in excluded]
    visited = [int(rng.choice(available))]
    seen = set(visited) | excluded
    frontier = sorted({v for v in neighbours.get(visited[0], []) if v not in seen})
    while len(visited) < size:
        if frontier:
            nxt = frontier[int(rng.integers(len(frontier)))]
        else:
            # disconnected remainder: restart the walk elsewhere
            rest = [i for i in available if i not in seen]
            nxt = rest[int(rng.integers(len(rest)))]
        visited.append(nxt)
        seen.add(nxt)
        frontier = sorted((set(frontier) | set(neighbours.get(nxt, []))) - seen)
    return visited


AUGMENTERS = {
    "node_drop": _drop_nodes,
    "edge_perturb": _perturb_edges,
    "attr_mask": _mask_attributes,
    "subgraph": _random_walk_subgraph,
}


def augment(graph: Graph, spec: AugmentSpec) -> Graph:
    """
    Build one contrastive view of a graph

    Args:
        graph: Source graph
        spec: Augmentation kind, ratio and seed

    Returns:
        Augmented graph; the input itself when ratio is 0
    """
    if spec.ratio == 0.0 or graph.num_nodes == 0:
        return graph
    rng = np.random.default_rng(spec.seed)
    return AUGMENTERS[spec.kind](graph, spec.ratio, rng)


def chunk_graph(graph: Graph, size: int = CHUNK_SIZE, seed: int = 0) -> List[Graph]:
    """Partition a large graph into random-walk pseudo-graphs of about `size` nodes"""
    rng = np.random.default_rng(seed)
    assigned: set = set()
    chunks = []
    while len(assigned) < graph.num_nodes:
        want = min(size, graph.num_nodes - len(assigned))
        nodes = _walk_nodes(graph.adj, want, rng, assigned)
        assigned.update(nodes)
        sub = induced_subgraph(graph, np.sort(np.array(nodes, dtype=np.int64)))
        chunks.append(Graph(sub.features, sub.adj))
    return chunks


# ----------------------------------------------------------------------------
# objectives

def _weight_noise(params: Mapping[str, np.ndarray], eta: float,
                  rng: np.random.Generator) -> Dict[str, np.ndarray]:
    noise = {}
    for name in sorted(params):
        value = np.asarray(params[name], dtype=np.float64)
        draw = rng.normal(size=value.shape)
        noise[name] = eta * draw * value.std()
    return noise


def perturb_weights(source: Union[Checkpoint, Mapping[str, np.ndarray]], eta: float,
                    seed: int = 0) -> Dict[str, np.ndarray]:
    """
    Encoder perturbation w' = w + eta * eps * std(w)

    Arrays with zero spread (and every array when eta is 0) come back as
    exact copies.
    """
    if eta < 0:
        raise ConfigError("perturbation magnitude eta must be >= 0")
    params = source.params if isinstance(source, Checkpoint) else source
    noise = _weight_noise(params, eta, np.random.default_rng(seed))
    out = {}
    for name, value in params.items():
        value = np.array(value, dtype=np.float64)
        out[name] = value if eta == 0 or value.std() == 0 else value + noise[name]
    return out


def ntxent_loss(za: Tensor, zb: Tensor, temperature: float = 0.5) -> Tensor:
    """
    Normalized-temperature cross entropy over two views

    Args:
        za: Embeddings of view A [N x h]
        zb: Embeddings of view B [N x h], row i pairs with za row i
        temperature: Softmax temperature

    Returns:
        Mean loss over the 2N anchors
    """
    n = za.shape[0]
    if n < 2:
        raise InsufficientNegativesError(f"NT-Xent needs at least 2 graphs per batch, got {n}")
    z = ag.l2_norm(ag.concat([za, zb], axis=0))
    sim = ag.scale(ag.matmul(z, ag.transpose(z)), 1.0 / temperature)
    logp = ag.log_softmax(sim, mask=np.eye(2 * n, dtype=bool))
    targets = np.concatenate([np.arange(n, 2 * n), np.arange(n)])
    return ag.cross_entropy(logp, targets)


# ----------------------------------------------------------------------------
# training loop

def _corpus(dataset: GraphSet, seed: int) -> List[Graph]:
    if not dataset.graphs or all(g.num_nodes == 0 for g in dataset.graphs):
        raise DataError("pre-training dataset is empty")
    if dataset.kind in ("node_task", "edge_task"):
        chunks = chunk_graph(dataset.graphs[0], CHUNK_SIZE, seed)
        logger.info("chunked %d nodes into %d pseudo-graphs", dataset.graphs[0].num_nodes, len(chunks))
        return chunks
    return [g for g in dataset.graphs if g.num_nodes > 0]


def _batches(count: int, batch_size: int, rng: np.random.Generator) -> List[np.ndarray]:
    order = rng.permutation(count)
    batches = [order[i:i + batch_size] for i in range(0, count, batch_size)]
    if len(batches) > 1 and len(batches[-1]) < 2:
        batches[-2] = np.concatenate([batches[-2], batches.pop()])
    return batches


def _view(graph: Graph, kind: str, ratio: float, seed: int) -> Graph:
    try:
        return augment(graph, AugmentSpec(kind, ratio, seed))
    except AugmentError as e:
        logger.debug("%s view fell back to the original graph: %s", kind, e)
        return graph


def _encode(backbone: GNNBackbone, params: Mapping[str, Tensor], graphs: Sequence[Graph]) -> Tensor:
    batch = batch_graphs(graphs)
    h, _ = backbone.forward(params, ag.constant(batch.features), batch.adj)
    return ag.mean_rows(h, batch.graph_id, batch.num_graphs)


def write_trajectory(path: Union[str, Path], losses: Sequence[float]):
    """Loss trajectory as an (epoch, loss) CSV"""
    frame = pd.DataFrame({"epoch": np.arange(len(losses)), "loss": list(losses)})
    frame.to_csv(path, index=False, float_format="%.12g")


def _batch_loss(cfg: PretrainConfig, encoder: GNNBackbone, tensors: Mapping[str, Tensor],
                params: Mapping[str, np.ndarray], members: List[Graph], rng: np.random.Generator) -> Tensor:
    if cfg.method == "graphcl":
        (kind_a, ratio_a), (kind_b, ratio_b) = GRAPHCL_VIEWS
        seeds = rng.integers(0, 2 ** 31, size=(len(members), 2))
        view_a = [_view(g, kind_a, ratio_a, int(s[0])) for g, s in zip(members, seeds)]
        view_b = [_view(g, kind_b, ratio_b, int(s[1])) for g, s in zip(members, seeds)]
        za = _encode(encoder, tensors, view_a)
        zb = _encode(encoder, tensors, view_b)
    else:
        noise = _weight_noise(params, cfg.eta, rng)
        perturbed = {name: ag.add(t, ag.constant(noise[name])) for name, t in tensors.items()}
        za = _encode(encoder, tensors, members)
        zb = _encode(encoder, perturbed, members)
    return ntxent_loss(za, zb, cfg.temperature)


def _initial_loss(cfg: PretrainConfig, encoder: GNNBackbone, params: Mapping[str, np.ndarray],
                  graphs: List[Graph]) -> float:
    """Mean loss of the untrained encoder, drawn from its own stream"""
    rng = np.random.default_rng(cfg.seed + 2)
    tensors = as_constants(params)
    losses = []
    for idx in _batches(len(graphs), cfg.batch_size, rng):
        value = _batch_loss(cfg, encoder, tensors, params, [graphs[i] for i in idx], rng).item()
        if not np.isfinite(value):
            raise NonFiniteLossError("epoch 0")
        losses.append(value)
    return float(np.mean(losses))


def pretrain(dataset: GraphSet, backbone: BackboneConfig, cfg: PretrainConfig,
             progress: bool = False) -> Checkpoint:
    """
    Contrastive pre-training

    Args:
        dataset: graph_task corpus, or a node_task graph chunked into
            random-walk pseudo-graphs
        backbone: Architecture to pre-train
        cfg: Method and optimisation settings
        progress: Show a tqdm bar over epochs

    Returns:
        Checkpoint whose provenance records the run, including the per-epoch
        mean loss under 'loss_trajectory'; entry 0 is the untrained loss
    """
    if dataset.feature_dim != backbone.in_dim:
        raise BridgeRequiredError(dataset.feature_dim, backbone.in_dim)
    graphs = _corpus(dataset, cfg.seed)
    if len(graphs) < 2:
        raise InsufficientNegativesError("pre-training needs at least 2 graphs")

    params = init_params(backbone, cfg.seed)
    encoder = GNNBackbone(backbone)
    optimizer = Adam(lr=cfg.lr, weight_decay=cfg.weight_decay)
    rng = np.random.default_rng(cfg.seed + 1)
    trajectory = [_initial_loss(cfg, encoder, params, graphs)]
    logger.info("pretrain epoch 0: loss %.6f", trajectory[0])

    for epoch in tqdm(range(1, cfg.epochs + 1), desc="pretrain", disable=not progress):
        losses = []
        for b, idx in enumerate(_batches(len(graphs), cfg.batch_size, rng)):
            members = [graphs[i] for i in idx]
            tape = Tape()
            watched = {name: tape.watch(value, name=name) for name, value in params.items()}
            loss = _batch_loss(cfg, encoder, watched, params, members, rng)
            value = loss.item()
            if not np.isfinite(value):
                raise NonFiniteLossError(f"epoch {epoch} batch {b}")
            grads = tape.backward(loss)
            params = optimizer.step(params, {name: grads[t.node_id] for name, t in watched.items()})
            losses.append(value)
            logger.debug("pretrain epoch %d batch %d: loss %.6f", epoch, b, value)

        trajectory.append(float(np.mean(losses)))
        logger.info("pretrain epoch %d: loss %.6f", epoch, trajectory[-1])

    provenance = {
        "method": cfg.method,
        "seed": cfg.seed,
        "pretrain": asdict(cfg),
        "dataset_kind": dataset.kind,
        "corpus_graphs": len(graphs),
        "chunking": f"random-walk pseudo-graphs of {CHUNK_SIZE} nodes"
        if dataset.kind in ("node_task", "edge_task") else None,
        "graphcl_views": [list(v) for v in GRAPHCL_VIEWS] if cfg.method == "graphcl" else None,
        "loss_trajectory": trajectory,
    }
    return Checkpoint(backbone, params, provenance)
