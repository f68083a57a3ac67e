#!/usr/bin/env python3
"""
Side-tuning of a frozen pre-trained base

Modes:
    gbst     side MLP independent of the base, one fusion at the output
    gast     gbst with the base signal merged from a frozen random backup
    gsst     layer-wise fusion of downsampled base activations into the side path
    gmst     gsst with the merged base/backup signal
    ft       full fine-tuning of the pre-trained backbone
    scratch  fresh backbone trained end to end
    notune   gsst wiring evaluated without any optimizer step
"""

import hashlib
import logging
import time
from dataclasses import asdict, dataclass, field, replace
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
from tqdm import tqdm

from . import autograd as ag
from .autograd import Tape, Tensor
from .backbones import (BackboneConfig, Checkpoint, GNNBackbone, as_constants,
                        backbone_param_count, glorot_uniform, head_param_count,
                        init_params, linear_count, side_param_count)
from .bridges import (AdapterSpec, HeadContext, HeadSpec, head_forward, head_logits, head_loss,
                      input_adapt, sample_edge_task)
from .errors import (BridgeRequiredError, ConfigError, DimensionError, FrozenParameterError,
                     NonFiniteLossError, ScenarioError, SplitError)
from .graph_data import DEFAULT_FRACTIONS, GraphSet, batch_graphs, make_splits, split_indices
from .metrics import evaluate
from .optim import Adam
from .sparse import SparseAdj

logger = logging.getLogger(__name__)

MODES = ("gbst", "gast", "gsst", "gmst", "ft", "scratch", "notune")
SIDE_MODES = ("gbst", "gast", "gsst", "gmst", "notune")
BACKUP_MODES = ("gast", "gmst")
LAYERWISE_MODES = ("gsst", "gmst", "notune")
FULL_MODES = ("ft", "scratch")

HEADS_FOR_KIND = {
    "node_task": ("node_cls", "edge_pred"),
    "graph_task": ("graph_cls",),
    "pointcloud_task": ("ptcld_cls", "graph_cls"),
    "edge_task": ("edge_pred",),
}


@dataclass(frozen=True)
class SideTuneConfig:
    mode: str = "gsst"
    side_hidden: int = 16
    alpha_init_raw: float = 0.0
    lr: float = 0.01
    epochs: int = 100
    seed: int = 0
    patience: int = 20
    weight_decay: float = 0.0
    batch_size: int = 64

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"tuning mode '{self.mode}' not in {MODES}")
        if self.side_hidden < 1:
            raise ConfigError("side_hidden must be >= 1")
        if self.epochs < 0 or self.patience < 1 or self.batch_size < 1:
            raise ConfigError("epochs must be >= 0, patience and batch_size >= 1")
        if self.lr <= 0:
            raise ConfigError("learning rate must be > 0")


@dataclass
class TrainReport:
    mode: str
    tunable_params: int
    epochs_run: int
    epochs_to_converge: int
    seconds: float
    metrics: Dict[str, float]
    history: List[Dict] = field(default_factory=list)

    def to_dict(self) -> Dict:
        return asdict(self)


# ----------------------------------------------------------------------------
# fusion

def _gate(raw) -> Tensor:
    if not isinstance(raw, Tensor):
        raw = ag.constant(np.full((1, 1), float(raw)))
    return ag.sigmoid(raw)


def blend(alpha_raw, a: Tensor, b: Tensor) -> Tensor:
    """sigmoid(alpha_raw) * a + (1 - sigmoid(alpha_raw)) * b"""
    a, b = ag.constant(a), ag.constant(b)
    if a.shape != b.shape:
        raise DimensionError(f"blend: shapes {a.shape} and {b.shape} differ")
    return ag.add(b, ag.mul(_gate(alpha_raw), ag.sub(a, b)))


def _alpha_at(alphas, i: int):
    if isinstance(alphas, Tensor):
        return ag.row_select(alphas, [i])
    return float(np.asarray(alphas, dtype=np.float64).reshape(-1)[i])


def base_merge(pre_acts: Sequence[Tensor], backup_acts: Sequence[Tensor], alpha_b_raw) -> List[Tensor]:
    """Per-layer blend of pre-trained and backup activations"""
    if len(pre_acts) != len(backup_acts):
        raise DimensionError(f"base_merge: {len(pre_acts)} vs {len(backup_acts)} layers")
    return [blend(_alpha_at(alpha_b_raw, i), a, b)
            for i, (a, b) in enumerate(zip(pre_acts, backup_acts))]


# ----------------------------------------------------------------------------
# model

def _freeze(params: Mapping[str, np.ndarray]) -> Dict[str, np.ndarray]:
    frozen = {}
    for name, value in params.items():
        value = np.asarray(value)
        if value.flags.writeable or value.dtype != np.float64:
            value = np.array(value, dtype=np.float64)
            value.flags.writeable = False
        frozen[name] = value
    return frozen


def _digest(*groups: Optional[Mapping[str, np.ndarray]]) -> str:
    h = hashlib.sha256()
    for group in groups:
        for name in sorted(group or {}):
            h.update(name.encode())
            h.update(np.ascontiguousarray(group[name]).tobytes())
    return h.hexdigest()


@dataclass(frozen=True, eq=False)
class SideTuneModel:
    """
    Frozen towers plus the trainable set

    Args:
        config: Tuning settings
        backbone: Architecture of the base (and backup) tower
        head: Output bridge
        adapter: Input bridge from dataset features to backbone in_dim
        base: Frozen pre-trained parameters (empty for ft/scratch)
        backup: Frozen random twin of the base (gast/gmst only)
        params: Trainable arrays
    """

    config: SideTuneConfig
    backbone: BackboneConfig
    head: HeadSpec
    adapter: AdapterSpec
    base: Dict[str, np.ndarray]
    backup: Optional[Dict[str, np.ndarray]]
    params: Dict[str, np.ndarray]
    frozen_digest: str = ""

    def __post_init__(self):
        object.__setattr__(self, "base", _freeze(self.base))
        if self.backup is not None:
            object.__setattr__(self, "backup", _freeze(self.backup))
        if not self.frozen_digest:
            object.__setattr__(self, "frozen_digest", _digest(self.base, self.backup))

    @property
    def mode(self) -> str:
        return self.config.mode

    def with_params(self, params: Mapping[str, np.ndarray]) -> "SideTuneModel":
        return replace(self, params=dict(params))

    def check_frozen(self):
        if _digest(self.base, self.backup) != self.frozen_digest:
            raise FrozenParameterError(f"{self.mode}: frozen base/backup parameters changed")

    def prepare(self, adj: SparseAdj) -> Dict[str, SparseAdj]:
        return GNNBackbone(self.backbone).prepare(adj)


def build_model(
        config: SideTuneConfig,
        head_kind: str,
        num_classes: int,
        feature_dim: int,
        checkpoint: Optional[Checkpoint] = None,
        backbone: Optional[BackboneConfig] = None,
        adapter_kind: Optional[str] = None
) -> SideTuneModel:
    """
    Assemble a model for one tuning mode

    Args:
        config: Tuning settings (mode, side width, seed)
        head_kind: graph_cls | node_cls | edge_pred | ptcld_cls
        num_classes: Downstream classes
        feature_dim: Width of the downstream node features
        checkpoint: Pre-trained base; required except for scratch
        backbone: Architecture for scratch runs without a checkpoint
        adapter_kind: Input bridge kind; identity/pad_truncate when omitted

    Returns:
        SideTuneModel with freshly initialised trainable parameters
    """
    mode = config.mode
    if checkpoint is None and mode != "scratch":
        raise ScenarioError(f"mode '{mode}' needs a pre-trained checkpoint")
    bc = checkpoint.config if checkpoint is not None else backbone
    if bc is None:
        raise ScenarioError("scratch mode needs a checkpoint or a backbone configuration")

    adapter = AdapterSpec.auto(feature_dim, bc.in_dim, adapter_kind, seed=config.seed)
    if adapter.kind == "identity" and feature_dim != bc.in_dim:
        raise BridgeRequiredError(feature_dim, bc.in_dim)

    rng = np.random.default_rng(config.seed)
    params: Dict[str, np.ndarray] = dict(adapter.init_params())
    base: Dict[str, np.ndarray] = {}
    backup = None
    side = config.side_hidden
    layers = bc.layers

    if mode in FULL_MODES:
        head = HeadSpec(head_kind, bc.hidden_dim, num_classes)
        source = checkpoint.params if mode == "ft" else init_params(bc, int(rng.integers(2 ** 31)))
        params.update({f"backbone.{name}": np.array(v) for name, v in source.items()})
    else:
        head = HeadSpec(head_kind, side, num_classes)
        base = dict(checkpoint.params)
        for i in range(layers):
            d_in = bc.in_dim if i == 0 else side
            params[f"side.{i}.weight"] = glorot_uniform(rng, d_in, side)
            params[f"side.{i}.bias"] = np.zeros((1, side))
        fused = range(layers) if mode in LAYERWISE_MODES else [layers - 1]
        for i in fused:
            params[f"down.{i}.weight"] = glorot_uniform(rng, bc.hidden_dim, side)
            params[f"down.{i}.bias"] = np.zeros((1, side))
        params["alpha_s"] = np.full((len(fused), 1), config.alpha_init_raw)
        backup_seed = int(rng.integers(2 ** 31))
        if mode in BACKUP_MODES:
            params["alpha_b"] = np.full((layers, 1), config.alpha_init_raw)
            backup = init_params(bc, backup_seed)

    params.update(head.init_params(int(rng.integers(2 ** 31))))
    model = SideTuneModel(config, bc, head, adapter, base, backup, params)
    logger.info("%s model: %d tunable parameters", mode, count_tunables(model))
    return model


def _side_layer(params: Mapping[str, Tensor], i: int, z: Tensor, layers: int) -> Tensor:
    out = ag.linear(z, params[f"side.{i}.weight"], params[f"side.{i}.bias"])
    return ag.relu(out) if i < layers - 1 else out


def _down(params: Mapping[str, Tensor], i: int, act: Tensor) -> Tensor:
    return ag.linear(act, params[f"down.{i}.weight"], params[f"down.{i}.bias"])


def sidetune_forward(model: SideTuneModel, params: Mapping[str, Tensor], features,
                     adj: SparseAdj, prepared: Optional[Dict[str, SparseAdj]] = None) -> Tensor:
    """
    Fused node representations z_L for one (batched) graph

    Args:
        model: Model whose frozen towers are used
        params: Tensors for the trainable set (watched or constant)
        features: Raw downstream features, bridged by model.adapter
        adj: Adjacency
        prepared: Cached GNNBackbone.prepare(adj)

    Returns:
        [n x side_hidden] for side modes, [n x hidden_dim] for ft/scratch
    """
    mode = model.mode
    encoder = GNNBackbone(model.backbone)
    prepared = prepared or encoder.prepare(adj)
    x = input_adapt(features, model.adapter, params)

    if mode in FULL_MODES:
        tower = {name[len("backbone."):]: t for name, t in params.items() if name.startswith("backbone.")}
        h, _ = encoder.forward(tower, x, adj, prepared=prepared)
        return h

    _, acts = encoder.forward(as_constants(model.base), x, adj, capture=True, prepared=prepared)
    if mode in BACKUP_MODES:
        if model.backup is None:
            raise ScenarioError(f"mode '{mode}' needs a backup tower")
        _, backup_acts = encoder.forward(as_constants(model.backup), x, adj, capture=True, prepared=prepared)
        acts = base_merge(acts, backup_acts, params["alpha_b"])

    layers = len(acts)
    if mode in LAYERWISE_MODES:
        z = x
        for i in range(layers):
            z = blend(_alpha_at(params["alpha_s"], i), _down(params, i, acts[i]), _side_layer(params, i, z, layers))
        return z

    s = x
    for i in range(layers):
        s = _side_layer(params, i, s, layers)
    return blend(_alpha_at(params["alpha_s"], 0), _down(params, layers - 1, acts[-1]), s)


# ----------------------------------------------------------------------------
# objectives

@dataclass(frozen=True, eq=False)
class Step:
    """One forward unit: a (batched) graph, head context and the supervised rows"""

    features: np.ndarray
    adj: SparseAdj
    prepared: Dict[str, SparseAdj]
    context: HeadContext
    rows: Optional[np.ndarray]
    targets: np.ndarray


def model_loss(model: SideTuneModel, params: Mapping[str, Tensor], step: Step) -> Tensor:
    """Head loss of one step; the closure gradient checks differentiate"""
    z = sidetune_forward(model, params, step.features, step.adj, step.prepared)
    logits = head_logits(model.head, z, step.context, params)
    if step.rows is not None:
        logits = ag.row_select(logits, step.rows)
    return head_loss(model.head, logits, step.targets)


def model_scores(model: SideTuneModel, params: Mapping[str, np.ndarray], step: Step) -> np.ndarray:
    """Class probabilities [m x C], or pair probabilities [m] for edge heads"""
    tensors = as_constants(params)
    z = sidetune_forward(model, tensors, step.features, step.adj, step.prepared)
    out = head_forward(model.head, z, step.context, tensors).numpy()
    if step.rows is not None:
        out = out[step.rows]
    if model.head.kind == "edge_pred":
        return out.reshape(-1)
    shifted = np.exp(out - out.max(axis=1, keepdims=True))
    return shifted / shifted.sum(axis=1, keepdims=True)


def _stratified_split(labels: np.ndarray, fractions: Sequence[float], seed: int) -> Dict[str, np.ndarray]:
    parts: Dict[str, List[np.ndarray]] = {"train": [], "val": [], "test": []}
    for c in np.unique(labels):
        members = np.flatnonzero(labels == c)
        for name, idx in split_indices(len(members), fractions, seed).items():
            parts[name].append(members[idx])
    return {name: np.sort(np.concatenate(chunks)) for name, chunks in parts.items()}


class NodeObjective:
    """Full-batch node classification on one graph"""

    def __init__(self, model: SideTuneModel, dataset: GraphSet, fractions: Sequence[float], seed: int):
        dataset = make_splits(dataset, fractions, seed)
        graph = dataset.graphs[0]
        if graph.node_labels is None:
            raise SplitError("node task graph carries no node labels")
        prepared = model.prepare(graph.adj)
        self.steps = {
            name: Step(graph.features, graph.adj, prepared, HeadContext(), idx, graph.node_labels[idx])
            for name, idx in dataset.splits.items()
        }

    def train_steps(self, rng: np.random.Generator) -> List[Step]:
        return [self.steps["train"]]

    def eval_steps(self, split: str) -> List[Step]:
        return [self.steps[split]]


class GraphObjective:
    """Mini-batched graph classification over disjoint-union batches"""

    def __init__(self, model: SideTuneModel, dataset: GraphSet, fractions: Sequence[float],
                 seed: int, batch_size: int):
        labels = dataset.labels()
        if np.any(labels < 0):
            raise SplitError("graph task with unlabelled graphs")
        if dataset.splits is None:
            try:
                dataset = dataset.with_splits(_stratified_split(labels, fractions, seed))
            except SplitError as e:
                logger.warning("per-class split failed (%s), splitting graphs unstratified", e)
                dataset = make_splits(dataset, fractions, seed)
        self.model = model
        self.graphs = dataset.graphs
        self.labels = labels
        self.splits = dataset.splits
        self.batch_size = batch_size
        self._eval = {name: self._steps(idx) for name, idx in self.splits.items()}

    def _steps(self, idx: np.ndarray) -> List[Step]:
        steps = []
        for start in range(0, len(idx), self.batch_size):
            chunk = idx[start:start + self.batch_size]
            batch = batch_graphs([self.graphs[i] for i in chunk])
            context = HeadContext(graph_id=batch.graph_id, num_graphs=batch.num_graphs)
            steps.append(Step(batch.features, batch.adj, self.model.prepare(batch.adj), context,
                              None, self.labels[chunk]))
        return steps

    def train_steps(self, rng: np.random.Generator) -> List[Step]:
        return self._steps(rng.permutation(self.splits["train"]))

    def eval_steps(self, split: str) -> List[Step]:
        return self._eval[split]


class LinkObjective:
    """Held-out edge prediction on one graph, pairs split per class"""

    def __init__(self, model: SideTuneModel, dataset: GraphSet, fractions: Sequence[float],
                 seed: int, edge_ratio: float):
        task = sample_edge_task(dataset.graphs[0], edge_ratio, seed)
        if dataset.kind == "edge_task" and dataset.splits is not None:
            splits = dataset.splits
            for name, idx in splits.items():
                if idx.size and idx.max() >= len(task.pairs):
                    raise SplitError(f"splits.{name}: index beyond {len(task.pairs)} sampled pairs")
        else:
            splits = _stratified_split(task.labels, fractions, seed)
        graph = task.graph
        prepared = model.prepare(graph.adj)
        self.steps = {
            name: Step(graph.features, graph.adj, prepared, HeadContext(pairs=task.pairs[idx]),
                       None, task.labels[idx])
            for name, idx in splits.items()
        }

    def train_steps(self, rng: np.random.Generator) -> List[Step]:
        return [self.steps["train"]]

    def eval_steps(self, split: str) -> List[Step]:
        return [self.steps[split]]


def make_objective(model: SideTuneModel, dataset: GraphSet, fractions: Sequence[float] = DEFAULT_FRACTIONS,
                   edge_ratio: float = 0.1):
    seed = model.config.seed
    if model.head.kind == "edge_pred":
        return LinkObjective(model, dataset, fractions, seed, edge_ratio)
    if dataset.kind == "node_task":
        return NodeObjective(model, dataset, fractions, seed)
    return GraphObjective(model, dataset, fractions, seed, model.config.batch_size)


def _score(objective, model: SideTuneModel, params: Mapping[str, np.ndarray], split: str,
           metric: str) -> float:
    steps = objective.eval_steps(split)
    scores = np.concatenate([model_scores(model, params, s) for s in steps])
    labels = np.concatenate([s.targets for s in steps])
    return evaluate(metric, scores, labels)


# ----------------------------------------------------------------------------
# training

def _check_head(head_kind: str, dataset_kind: str):
    allowed = HEADS_FOR_KIND[dataset_kind]
    if head_kind not in allowed:
        raise ScenarioError(f"head '{head_kind}' does not fit a {dataset_kind} dataset (expected {allowed})")


def _train_step(model: SideTuneModel, params: Dict[str, np.ndarray], step: Step,
                optimizer: Adam, where: str) -> Tuple[Dict[str, np.ndarray], float]:
    tape = Tape()
    watched = {name: tape.watch(value, name=name) for name, value in params.items()}
    loss = model_loss(model, watched, step)
    value = loss.item()
    if not np.isfinite(value):
        raise NonFiniteLossError(where)
    grads = tape.backward(loss)
    return optimizer.step(params, {name: grads[t.node_id] for name, t in watched.items()}), value


def tune(
        model: SideTuneModel,
        dataset: GraphSet,
        metric: str = "accuracy",
        edge_ratio: float = 0.1,
        fractions: Sequence[float] = DEFAULT_FRACTIONS,
        progress: bool = False
) -> Tuple[SideTuneModel, TrainReport]:
    """
    Optimise the trainable set with early stopping on the validation metric

    Args:
        model: Model from build_model
        dataset: Downstream GraphSet; splits are drawn from the model seed
            when the set carries none
        metric: accuracy | roc_auc
        edge_ratio: Held-out edge fraction for edge heads
        fractions: Train/val/test fractions
        progress: Show a tqdm bar over epochs

    Returns:
        (model holding the best-validation parameters, TrainReport)
    """
    cfg = model.config
    _check_head(model.head.kind, dataset.kind)
    if dataset.feature_dim != model.adapter.src_dim:
        raise BridgeRequiredError(dataset.feature_dim, model.adapter.src_dim)
    objective = make_objective(model, dataset, fractions, edge_ratio)
    model.check_frozen()

    epochs = 0 if cfg.mode == "notune" else cfg.epochs
    optimizer = Adam(lr=cfg.lr, weight_decay=cfg.weight_decay)
    rng = np.random.default_rng(cfg.seed)
    params = dict(model.params)

    best_val = _score(objective, model, params, "val", metric)
    best_epoch, best_params, best_seconds = 0, params, 0.0
    history = [{"epoch": 0, "loss": None, "val": best_val}]
    elapsed = 0.0
    epochs_run = 0

    for epoch in tqdm(range(1, epochs + 1), desc=cfg.mode, disable=not progress):
        losses = []
        for s, step in enumerate(objective.train_steps(rng)):
            start = time.perf_counter()
            params, value = _train_step(model, params, step, optimizer, f"epoch {epoch} step {s}")
            elapsed += time.perf_counter() - start
            losses.append(value)
        epochs_run = epoch
        val = _score(objective, model, params, "val", metric)
        history.append({"epoch": epoch, "loss": float(np.mean(losses)), "val": val})
        logger.info("%s epoch %d: loss %.6f val %.4f", cfg.mode, epoch, history[-1]["loss"], val)

        if val > best_val:
            best_val, best_epoch, best_params, best_seconds = val, epoch, params, elapsed
        elif epoch - best_epoch >= cfg.patience:
            logger.info("%s: early stop at epoch %d (best %d)", cfg.mode, epoch, best_epoch)
            break

    model.check_frozen()
    metrics = {split: _score(objective, model, best_params, split, metric)
               for split in ("train", "val", "test")}
    report = TrainReport(
        mode=cfg.mode,
        tunable_params=count_tunables(model),
        epochs_run=epochs_run,
        epochs_to_converge=best_epoch,
        seconds=best_seconds,
        metrics=metrics,
        history=history,
    )
    return model.with_params(best_params), report


# ----------------------------------------------------------------------------
# parameter accounting

def count_tunables(model: SideTuneModel, mode: Optional[str] = None) -> int:
    """Trainable scalars of the model; notune trains nothing"""
    if (mode or model.mode) == "notune":
        return 0
    return int(sum(np.asarray(v).size for v in model.params.values()))


def tunable_count(mode: str, backbone: BackboneConfig, side_hidden: int = 16,
                  head_kind: str = "node_cls", num_classes: int = 2) -> int:
    """Closed-form count_tunables for a model built without a trainable adapter"""
    if mode not in MODES:
        raise ConfigError(f"tuning mode '{mode}' not in {MODES}")
    if mode == "notune":
        return 0
    if mode in FULL_MODES:
        return backbone_param_count(backbone) + head_param_count(head_kind, backbone.hidden_dim, num_classes)
    fused = backbone.layers if mode in LAYERWISE_MODES else 1
    count = side_param_count(backbone.in_dim, side_hidden, backbone.layers)
    count += fused * (linear_count(backbone.hidden_dim, side_hidden) + 1)
    if mode in BACKUP_MODES:
        count += backbone.layers
    return count + head_param_count(head_kind, side_hidden, num_classes)


def predict(model: SideTuneModel, dataset: GraphSet, split: str = "test", metric: str = "accuracy",
            edge_ratio: float = 0.1, fractions: Sequence[float] = DEFAULT_FRACTIONS) -> Dict:
    """Scores and labels of one split, in the layout the eval command reads"""
    objective = make_objective(model, dataset, fractions, edge_ratio)
    steps = objective.eval_steps(split)
    scores = np.concatenate([model_scores(model, model.params, s) for s in steps])
    labels = np.concatenate([s.targets for s in steps])
    num_classes = 2 if model.head.kind == "edge_pred" else model.head.num_classes
    return {"kind": metric, "scores": scores.tolist(), "labels": labels.tolist(),
            "num_classes": num_classes}
