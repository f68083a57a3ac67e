#!/usr/bin/env python3
"""
GNN backbones for GraphBridge
GCN, GAT and GIN stacks with per-layer activation capture and checkpoints
"""

import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Tuple, Union

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .errors import BridgeRequiredError, CheckpointError, ConfigError, SchemaError
from .graph_io import read_json, write_canonical
from .sparse import SparseAdj, segment_softmax, spmm

logger = logging.getLogger(__name__)

BACKBONE_KINDS = ("gcn", "gat", "gin")
CHECKPOINT_VERSION = 1


def glorot_uniform(rng: np.random.Generator, fan_in: int, fan_out: int,
                   shape: Optional[Tuple[int, ...]] = None) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape or (fan_in, fan_out))


@dataclass(frozen=True)
class BackboneConfig:
    kind: str = "gcn"
    layers: int = 2
    in_dim: int = 8
    hidden_dim: int = 100
    gat_heads: int = 1
    gat_slope: float = 0.2

    def __post_init__(self):
        if self.kind not in BACKBONE_KINDS:
            raise ConfigError(f"backbone kind '{self.kind}' not in {BACKBONE_KINDS}")
        if self.layers < 1:
            raise ConfigError("backbone layers must be >= 1")
        if self.in_dim < 1 or self.hidden_dim < 1 or self.gat_heads < 1:
            raise ConfigError("backbone dims and head count must be >= 1")

    def to_dict(self) -> Dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Mapping) -> "BackboneConfig":
        return cls(**{k: data[k] for k in cls.__dataclass_fields__ if k in data})


@dataclass(frozen=True)
class Checkpoint:
    """Pre-trained backbone parameters with their architecture"""

    config: BackboneConfig
    params: Dict[str, np.ndarray]
    provenance: Dict = field(default_factory=dict)

    def __post_init__(self):
        expected = param_shapes(self.config)
        if set(expected) != set(self.params):
            extra = sorted(set(self.params) - set(expected))
            missing = sorted(set(expected) - set(self.params))
            raise CheckpointError(
                f"parameters do not match {self.config.kind} with {self.config.layers} layers "
                f"(unexpected {extra}, missing {missing})"
            )
        frozen = {}
        for name, shape in expected.items():
            value = np.array(self.params[name], dtype=np.float64)
            if value.shape != shape:
                raise CheckpointError(f"{name}: shape {value.shape} != expected {shape}")
            value.flags.writeable = False
            frozen[name] = value
        object.__setattr__(self, "params", frozen)


def _layer_dims(config: BackboneConfig, i: int) -> Tuple[int, int]:
    return (config.in_dim if i == 0 else config.hidden_dim), config.hidden_dim


def param_shapes(config: BackboneConfig) -> Dict[str, Tuple[int, ...]]:
    """Name -> shape of every backbone parameter"""
    shapes = {}
    for i in range(config.layers):
        d_in, d_out = _layer_dims(config, i)
        prefix = f"layers.{i}"
        if config.kind == "gcn":
            shapes[f"{prefix}.weight"] = (d_in, d_out)
            shapes[f"{prefix}.bias"] = (1, d_out)
        elif config.kind == "gat":
            for h in range(config.gat_heads):
                shapes[f"{prefix}.head{h}.weight"] = (d_in, d_out)
                shapes[f"{prefix}.head{h}.att_src"] = (d_out, 1)
                shapes[f"{prefix}.head{h}.att_dst"] = (d_out, 1)
            shapes[f"{prefix}.bias"] = (1, d_out)
        else:
            shapes[f"{prefix}.mlp0.weight"] = (d_in, d_out)
            shapes[f"{prefix}.mlp0.bias"] = (1, d_out)
            shapes[f"{prefix}.mlp1.weight"] = (d_out, d_out)
            shapes[f"{prefix}.mlp1.bias"] = (1, d_out)
    return shapes


def init_params(config: BackboneConfig, seed: int) -> Dict[str, np.ndarray]:
    """Glorot-uniform weights and zero biases, seeded"""
    rng = np.random.default_rng(seed)
    params = {}
    for name, shape in param_shapes(config).items():
        if name.endswith("bias"):
            params[name] = np.zeros(shape)
        elif name.endswith(("att_src", "att_dst")):
            params[name] = glorot_uniform(rng, shape[0], 1, shape)
        else:
            params[name] = glorot_uniform(rng, shape[0], shape[1])
    return params


def gcn_norm(adj: SparseAdj) -> SparseAdj:
    """
    Symmetric normalization D^{-1/2}(A+I)D^{-1/2}

    Degrees are weighted in-degrees of A+I. Not idempotent: normalizing an
    already normalized adjacency changes its weights again.
    """
    looped = adj.with_self_loops(1.0)
    deg = np.bincount(looped.dst, weights=looped.weights, minlength=adj.num_nodes)
    inv_sqrt = np.where(deg > 0, 1.0 / np.sqrt(np.where(deg > 0, deg, 1.0)), 0.0)
    weights = inv_sqrt[looped.src] * looped.weights * inv_sqrt[looped.dst]
    return looped.with_weights(weights)


class GNNBackbone:
    """
    Layer stack of one backbone kind

    Forward works on tensors, so the same code runs a frozen base (constant
    parameters, nothing recorded) and a trainable one (parameters watched on
    a tape).
    """

    def __init__(self, config: BackboneConfig):
        self.config = config

    def prepare(self, adj: SparseAdj) -> Dict[str, SparseAdj]:
        """Adjacency variants the layers consume, computed once per graph"""
        if self.config.kind == "gcn":
            return {"norm": gcn_norm(adj)}
        if self.config.kind == "gat":
            return {"attn": adj.with_self_loops(1.0)}
        return {"sum": adj.with_self_loops(1.0)}

    def forward(
            self,
            params: Mapping[str, Tensor],
            x: Tensor,
            adj: SparseAdj,
            capture: bool = False,
            prepared: Optional[Dict[str, SparseAdj]] = None
    ) -> Tuple[Tensor, List[Tensor]]:
        """
        Run all layers

        Args:
            params: Tensors keyed like param_shapes
            x: Node features [n x in_dim]
            adj: Raw adjacency
            capture: Also return every layer's output b_1..b_L
            prepared: Output of prepare(adj), to skip renormalization

        Returns:
            (final output, captured activations or [])
        """
        if x.shape[1] != self.config.in_dim:
            raise BridgeRequiredError(x.shape[1], self.config.in_dim)
        prepared = prepared or self.prepare(adj)
        h = x
        acts = []
        for i in range(self.config.layers):
            h = self._layer(i, params, h, prepared)
            if i < self.config.layers - 1:
                h = ag.relu(h)
            if capture:
                acts.append(h)
        return h, acts

    def _layer(self, i: int, params: Mapping[str, Tensor], h: Tensor,
               prepared: Dict[str, SparseAdj]) -> Tensor:
        prefix = f"layers.{i}"
        kind = self.config.kind
        if kind == "gcn":
            support = ag.matmul(h, params[f"{prefix}.weight"])
            return ag.add(spmm(prepared["norm"], support), params[f"{prefix}.bias"])

        if kind == "gin":
            # eps fixed at 0: (1 + eps) * h + sum of neighbours
            agg = spmm(prepared["sum"], h)
            hidden = ag.relu(ag.linear(agg, params[f"{prefix}.mlp0.weight"], params[f"{prefix}.mlp0.bias"]))
            return ag.linear(hidden, params[f"{prefix}.mlp1.weight"], params[f"{prefix}.mlp1.bias"])

        adj = prepared["attn"]
        heads = []
        for head in range(self.config.gat_heads):
            hp = f"{prefix}.head{head}"
            wh = ag.matmul(h, params[f"{hp}.weight"])
            attention = self._attention(params, hp, wh, adj)
            heads.append(spmm(adj, wh, attention))
        out = heads[0]
        for extra in heads[1:]:
            out = ag.add(out, extra)
        if len(heads) > 1:
            out = ag.scale(out, 1.0 / len(heads))
        return ag.add(out, params[f"{prefix}.bias"])

    def _attention(self, params: Mapping[str, Tensor], hp: str, wh: Tensor,
                   adj: SparseAdj) -> Tensor:
        score_src = ag.matmul(wh, params[f"{hp}.att_src"])
        score_dst = ag.matmul(wh, params[f"{hp}.att_dst"])
        logits = ag.leaky_relu(
            ag.add(ag.row_select(score_src, adj.src), ag.row_select(score_dst, adj.dst)),
            self.config.gat_slope,
        )
        return segment_softmax(logits, adj.dst, num_segments=adj.num_nodes)

    def attention(self, params: Mapping[str, np.ndarray], x: np.ndarray, adj: SparseAdj,
                  layer: int = 0, head: int = 0) -> np.ndarray:
        """Per-edge attention of one GAT layer, edges ordered as adj plus self-loops"""
        if self.config.kind != "gat":
            raise ConfigError("attention weights exist only for gat backbones")
        tensors = as_constants(params)
        prepared = self.prepare(adj)
        h = ag.constant(x)
        for i in range(layer):
            h = ag.relu(self._layer(i, tensors, h, prepared))
        hp = f"layers.{layer}.head{head}"
        wh = ag.matmul(h, tensors[f"{hp}.weight"])
        return self._attention(tensors, hp, wh, prepared["attn"]).numpy().reshape(-1)


def as_constants(params: Mapping[str, np.ndarray]) -> Dict[str, Tensor]:
    return {name: ag.constant(value) for name, value in params.items()}


def backbone_forward(
        source: Union[Checkpoint, Tuple[BackboneConfig, Mapping[str, np.ndarray]]],
        graph,
        capture: bool = False
) -> Tuple[Tensor, List[Tensor]]:
    """
    Inference through a checkpoint (or a config with raw parameters)

    Args:
        source: Checkpoint or (config, params)
        graph: Graph or Batch with bridged features
        capture: Also return per-layer activations

    Returns:
        (final, activations)
    """
    if isinstance(source, Checkpoint):
        config, params = source.config, source.params
    else:
        config, params = source
    backbone = GNNBackbone(config)
    return backbone.forward(as_constants(params), ag.constant(graph.features), graph.adj, capture)


# ----------------------------------------------------------------------------
# parameter accounting

def linear_count(d_in: int, d_out: int, bias: bool = True) -> int:
    return d_in * d_out + (d_out if bias else 0)


def backbone_param_count(config: BackboneConfig) -> int:
    return int(sum(np.prod(shape) for shape in param_shapes(config).values()))


def side_param_count(in_dim: int, side_hidden: int, layers: int) -> int:
    return sum(linear_count(in_dim if i == 0 else side_hidden, side_hidden) for i in range(layers))


def head_param_count(kind: str, in_dim: int, num_classes: int) -> int:
    if kind == "edge_pred":
        return 0
    return linear_count(in_dim, num_classes)


def param_count(config: BackboneConfig, role: str = "backbone", side_hidden: int = 16,
                num_classes: int = 2, head_kind: str = "node_cls",
                head_in: Optional[int] = None) -> int:
    """
    Closed-form count of trainable scalars for one role

    Args:
        config: Backbone configuration (dims and depth)
        role: backbone | side | head
        side_hidden: Side network width
        num_classes: Output classes for the head
        head_kind: Head kind (edge_pred heads carry no parameters)
        head_in: Head input width; defaults to side_hidden

    Returns:
        Parameter count
    """
    if role == "backbone":
        return backbone_param_count(config)
    if role == "side":
        return side_param_count(config.in_dim, side_hidden, config.layers)
    if role == "head":
        return head_param_count(head_kind, head_in if head_in is not None else side_hidden, num_classes)
    raise ConfigError(f"unknown parameter role '{role}'")


# ----------------------------------------------------------------------------
# checkpoints

def checkpoint_to_dict(ckpt: Checkpoint) -> Dict:
    return {
        "format_version": CHECKPOINT_VERSION,
        "config": ckpt.config.to_dict(),
        "provenance": ckpt.provenance,
        "params": {name: value.tolist() for name, value in sorted(ckpt.params.items())},
    }


def checkpoint_from_dict(data: Mapping) -> Checkpoint:
    if not isinstance(data, Mapping):
        raise SchemaError("$", "expected an object")
    for key in ("format_version", "config", "params"):
        if key not in data:
            raise SchemaError(key, "missing")
    if data["format_version"] != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"checkpoint version {data['format_version']!r} unsupported, expected {CHECKPOINT_VERSION}"
        )
    config = BackboneConfig.from_dict(data["config"])
    params = {}
    for name, value in data["params"].items():
        try:
            params[name] = np.array(value, dtype=np.float64)
        except (TypeError, ValueError) as e:
            raise CheckpointError(f"{name}: not a numeric array ({e})")
    return Checkpoint(config, params, dict(data.get("provenance", {})))


def save_ckpt(ckpt: Checkpoint, path: Union[str, Path]):
    """Write a checkpoint; float repr round-trips every 64-bit value exactly"""
    write_canonical(path, checkpoint_to_dict(ckpt))
    logger.info("saved %s checkpoint to %s", ckpt.config.kind, path)


def load_ckpt(path: Union[str, Path]) -> Checkpoint:
    return checkpoint_from_dict(read_json(path))
