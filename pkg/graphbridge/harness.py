#!/usr/bin/env python3
"""
Scenario harness
Seed sweeps over the transfer scenarios, aggregate reports, speed-up and
parameter audits
"""

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from itertools import repeat
from typing import Any, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import networkx as nx
import numpy as np
import pandas as pd

from .backbones import BACKBONE_KINDS, BackboneConfig, Checkpoint, init_params, load_ckpt
from .bridges import HeadContext
from .errors import ConfigError, ScenarioError, UndefinedMetricError
from .gradcheck import all_passed, grad_check
from .graph_data import DEFAULT_FRACTIONS, Graph, GraphSet, symmetric_adj
from .graph_io import load_container
from .side_tune import (MODES, SideTuneConfig, Step, build_model, model_loss, predict,
                        tunable_count, tune)

logger = logging.getLogger(__name__)

SCENARIOS = ("graph2graph", "node2node", "graph2node", "node2graph", "graph2edge", "graph2ptcld")

SCENARIO_HEADS = {
    "graph2graph": "graph_cls",
    "node2node": "node_cls",
    "graph2node": "node_cls",
    "node2graph": "graph_cls",
    "graph2edge": "edge_pred",
    "graph2ptcld": "ptcld_cls",
}

SCENARIO_KINDS = {
    "graph2graph": ("graph_task",),
    "node2node": ("node_task",),
    "graph2node": ("node_task",),
    "node2graph": ("graph_task",),
    "graph2edge": ("edge_task", "node_task"),
    "graph2ptcld": ("pointcloud_task",),
}

ROC_AUC_SCENARIOS = ("graph2graph", "graph2edge")
TIMING_FIELDS = ("seconds", "speedup_vs_scratch")
FRACTION_BOUND = 0.20
FULL_SUITE_MODES = ("gbst", "gast", "gsst", "gmst", "ft", "scratch")


@dataclass(frozen=True)
class ScenarioConfig:
    scenario: str
    mode: str = "gsst"
    downstream: Optional[str] = None
    checkpoint: Optional[str] = None
    adapter: Optional[str] = None
    head: Optional[str] = None
    seeds: Tuple[int, ...] = (0, 1, 2, 3, 4)
    side_hidden: int = 16
    epochs: int = 100
    lr: float = 0.01
    patience: int = 20
    weight_decay: float = 5e-4
    batch_size: int = 64
    edge_ratio: float = 0.1
    split: Tuple[float, ...] = DEFAULT_FRACTIONS
    backbone: str = "gcn"
    layers: int = 2
    hidden_dim: int = 100

    def __post_init__(self):
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
        object.__setattr__(self, "split", tuple(float(f) for f in self.split))
        if self.scenario not in SCENARIOS:
            raise ConfigError(f"scenario '{self.scenario}' not in {SCENARIOS}")
        if self.mode not in MODES:
            raise ConfigError(f"tuning mode '{self.mode}' not in {MODES}")
        if self.head is not None and self.head != SCENARIO_HEADS[self.scenario]:
            raise ScenarioError(
                f"{self.scenario} uses a {SCENARIO_HEADS[self.scenario]} head, not {self.head}"
            )
        if not self.seeds:
            raise ConfigError("at least one seed is required")
        if len(set(self.seeds)) != len(self.seeds):
            raise ConfigError(f"duplicate seeds {list(self.seeds)}")
        if self.backbone not in BACKBONE_KINDS:
            raise ConfigError(f"backbone '{self.backbone}' not in {BACKBONE_KINDS}")

    @property
    def head_kind(self) -> str:
        return SCENARIO_HEADS[self.scenario]

    @property
    def metric(self) -> str:
        return "roc_auc" if self.scenario in ROC_AUC_SCENARIOS else "accuracy"

    def tune_config(self, seed: int) -> SideTuneConfig:
        return SideTuneConfig(
            mode=self.mode, side_hidden=self.side_hidden, lr=self.lr, epochs=self.epochs,
            seed=seed, patience=self.patience, weight_decay=self.weight_decay,
            batch_size=self.batch_size,
        )

    def to_dict(self) -> Dict:
        data = asdict(self)
        data["seeds"] = list(self.seeds)
        data["split"] = list(self.split)
        data["head"] = self.head_kind
        return data


@dataclass
class Report:
    config: Dict
    metric: str
    backbone: Dict
    per_seed: List[Dict]
    aggregate: Dict
    tunable_params: int
    tunable_fraction_vs_ft: float
    provenance: Dict = field(default_factory=dict)
    speedup_vs_scratch: Optional[float] = None
    predictions: Dict[int, Dict] = field(default_factory=dict, repr=False)

    def to_dict(self) -> Dict:
        data = asdict(self)
        del data["predictions"]
        return data


def _mean_std(values: Sequence[float]) -> Dict[str, float]:
    arr = np.asarray(values, dtype=np.float64)
    return {"mean": float(arr.mean()), "std": float(arr.std())}


def aggregate(per_seed: Sequence[Mapping]) -> Dict:
    """Mean and population std of every per-seed metric"""
    out = {split: _mean_std([r["metrics"][split] for r in per_seed]) for split in ("train", "val", "test")}
    out["epochs_to_converge"] = _mean_std([r["epochs_to_converge"] for r in per_seed])
    out["seconds"] = _mean_std([r["seconds"] for r in per_seed])
    return out


def _resolve_backbone(cfg: ScenarioConfig, dataset: GraphSet,
                      checkpoint: Optional[Checkpoint]) -> BackboneConfig:
    if checkpoint is not None:
        return checkpoint.config
    return BackboneConfig(kind=cfg.backbone, layers=cfg.layers, in_dim=dataset.feature_dim,
                          hidden_dim=cfg.hidden_dim)


def _adapter_kind(cfg: ScenarioConfig, dataset: GraphSet, backbone: BackboneConfig) -> Optional[str]:
    if cfg.adapter is not None:
        return cfg.adapter
    if cfg.scenario == "graph2ptcld" and dataset.feature_dim != backbone.in_dim:
        return "linear_trainable"
    return None


def _run_seed(cfg: ScenarioConfig, seed: int, dataset: GraphSet, checkpoint: Optional[Checkpoint],
              progress: bool = False, with_predictions: bool = False) -> Dict:
    backbone = _resolve_backbone(cfg, dataset, checkpoint)
    num_classes = max(dataset.num_classes, 2)
    model = build_model(cfg.tune_config(seed), cfg.head_kind, num_classes, dataset.feature_dim,
                        checkpoint=checkpoint if cfg.mode != "scratch" else None,
                        backbone=backbone, adapter_kind=_adapter_kind(cfg, dataset, backbone))
    tuned, report = tune(model, dataset, metric=cfg.metric, edge_ratio=cfg.edge_ratio,
                         fractions=cfg.split, progress=progress)
    logger.info("%s/%s seed %d: test %s %.4f", cfg.scenario, cfg.mode, seed, cfg.metric,
                report.metrics["test"])
    entry = {"seed": seed, **report.to_dict()}
    if with_predictions:
        entry["predictions"] = predict(tuned, dataset, "test", cfg.metric, cfg.edge_ratio, cfg.split)
    return entry


def run_scenario(
        cfg: ScenarioConfig,
        dataset: Optional[GraphSet] = None,
        checkpoint: Optional[Checkpoint] = None,
        workers: int = 1,
        progress: bool = False,
        with_predictions: bool = False,
        scratch: Optional[Union[Report, Mapping]] = None
) -> Report:
    """
    Tune one mode on one scenario for every seed

    Args:
        cfg: Scenario description
        dataset: Downstream set; loaded from cfg.downstream when omitted
        checkpoint: Pre-trained base; loaded from cfg.checkpoint when omitted
        workers: Worker processes for the seed sweep (1 runs in-process)
        progress: Show per-seed epoch bars
        with_predictions: Keep each seed's test-split scores on the report
        scratch: Scratch report on the same seeds; fills speedup_vs_scratch

    Returns:
        Report with per-seed entries and their aggregate
    """
    if dataset is None:
        if cfg.downstream is None:
            raise ConfigError("no downstream dataset given")
        dataset = load_container(cfg.downstream)
    if checkpoint is None and cfg.checkpoint is not None:
        checkpoint = load_ckpt(cfg.checkpoint)
    if checkpoint is None and cfg.mode != "scratch":
        raise ScenarioError(f"mode '{cfg.mode}' needs a pre-trained checkpoint")
    if dataset.kind not in SCENARIO_KINDS[cfg.scenario]:
        raise ScenarioError(
            f"{cfg.scenario} expects a {' or '.join(SCENARIO_KINDS[cfg.scenario])} dataset, got {dataset.kind}"
        )
    if checkpoint is not None:
        source = checkpoint.provenance.get("dataset_kind")
        expected = "node_task" if cfg.scenario.startswith("node2") else "graph_task"
        if source is not None and source != expected:
            logger.warning("%s checkpoint was pre-trained on a %s corpus", cfg.scenario, source)

    if workers > 1 and len(cfg.seeds) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            per_seed = list(pool.map(_run_seed, repeat(cfg), cfg.seeds, repeat(dataset), repeat(checkpoint),
                                     repeat(False), repeat(with_predictions)))
    else:
        per_seed = [_run_seed(cfg, seed, dataset, checkpoint, progress, with_predictions)
                    for seed in cfg.seeds]
    predictions = {entry["seed"]: entry.pop("predictions") for entry in per_seed if "predictions" in entry}

    backbone = _resolve_backbone(cfg, dataset, checkpoint)
    num_classes = max(dataset.num_classes, 2)
    tunable = per_seed[0]["tunable_params"]
    ft = tunable_count("ft", backbone, cfg.side_hidden, cfg.head_kind, num_classes)
    report = Report(
        config=cfg.to_dict(),
        metric=cfg.metric,
        backbone=backbone.to_dict(),
        per_seed=per_seed,
        aggregate=aggregate(per_seed),
        tunable_params=tunable,
        tunable_fraction_vs_ft=tunable / ft,
        provenance=dict(checkpoint.provenance) if checkpoint is not None else {},
        predictions=predictions,
    )
    if scratch is not None:
        try:
            report.speedup_vs_scratch = speedup(report, scratch)
        except UndefinedMetricError as e:
            logger.warning("speed-up versus scratch left undefined: %s", e)
    return report


def _as_dict(report: Union[Report, Mapping]) -> Mapping:
    return report.to_dict() if isinstance(report, Report) else report


def speedup(method: Union[Report, Mapping], scratch: Union[Report, Mapping]) -> float:
    """
    Relative reduction of mean convergence time versus scratch training

    Returns:
        (t_scratch - t_method) / t_scratch * 100
    """
    method, scratch = _as_dict(method), _as_dict(scratch)
    seeds_m = sorted(r["seed"] for r in method["per_seed"])
    seeds_s = sorted(r["seed"] for r in scratch["per_seed"])
    if seeds_m != seeds_s:
        raise ScenarioError(f"seed sets differ: {seeds_m} vs {seeds_s}")
    if any(r["seconds"] is None for r in [*method["per_seed"], *scratch["per_seed"]]):
        raise UndefinedMetricError("timing was masked out of one of the reports")
    t_method = float(np.mean([r["seconds"] for r in method["per_seed"]]))
    t_scratch = float(np.mean([r["seconds"] for r in scratch["per_seed"]]))
    if t_scratch <= 0:
        raise UndefinedMetricError("scratch run recorded no training time")
    return (t_scratch - t_method) / t_scratch * 100.0


def mask_timing(data: Any) -> Any:
    """Copy of a report with wall-clock fields blanked"""
    if isinstance(data, Mapping):
        return {k: (None if k in TIMING_FIELDS else mask_timing(v)) for k, v in data.items()}
    if isinstance(data, list):
        return [mask_timing(v) for v in data]
    return data


# ----------------------------------------------------------------------------
# comparisons

def compare(cfg: ScenarioConfig, dataset: Optional[GraphSet] = None,
            checkpoint: Optional[Checkpoint] = None, workers: int = 1) -> Dict:
    """GSST and GMST on the same scenario and seeds, side by side"""
    reports = {}
    for mode in ("gsst", "gmst"):
        reports[mode] = run_scenario(_with_mode(cfg, mode), dataset, checkpoint, workers).to_dict()
    return {
        "scenario": cfg.scenario,
        "metric": cfg.metric,
        "seeds": list(cfg.seeds),
        "aggregate": {mode: r["aggregate"] for mode, r in reports.items()},
        "reports": reports,
    }


def _with_mode(cfg: ScenarioConfig, mode: str) -> ScenarioConfig:
    data = asdict(cfg)
    data["mode"] = mode
    return ScenarioConfig(**data)


def speedup_table(cfg: ScenarioConfig, modes: Sequence[str], checkpoints: Sequence[Checkpoint],
                  dataset: Optional[GraphSet] = None, workers: int = 1) -> List[Dict]:
    """
    Speed-up of each mode versus scratch, one row per (backbone, mode)

    Scratch runs reuse each checkpoint's architecture.
    """
    rows = []
    for checkpoint in checkpoints:
        scratch = run_scenario(_with_mode(cfg, "scratch"), dataset, checkpoint, workers)
        for mode in modes:
            report = run_scenario(_with_mode(cfg, mode), dataset, checkpoint, workers, scratch=scratch)
            rows.append({
                "backbone": checkpoint.config.kind,
                "mode": mode,
                "seconds": report.aggregate["seconds"]["mean"],
                "scratch_seconds": scratch.aggregate["seconds"]["mean"],
                "speedup_pct": report.speedup_vs_scratch,
                "test_mean": report.aggregate["test"]["mean"],
            })
    return rows


def audit_params(
        grid: Iterable[Tuple[str, str]],
        in_dim: int = 8,
        hidden_dim: int = 100,
        side_hidden: int = 16,
        layers: int = 5,
        head_kind: str = "graph_cls",
        num_classes: int = 2
) -> List[Dict]:
    """
    Tunable parameter counts per (mode, backbone)

    Args:
        grid: (mode, backbone kind) pairs
        in_dim, hidden_dim, side_hidden, layers: Shared dimensions
        head_kind, num_classes: Output head

    Returns:
        Rows with the count, the ft count and their ratio
    """
    rows = []
    for mode, kind in grid:
        backbone = BackboneConfig(kind=kind, layers=layers, in_dim=in_dim, hidden_dim=hidden_dim)
        count = tunable_count(mode, backbone, side_hidden, head_kind, num_classes)
        ft = tunable_count("ft", backbone, side_hidden, head_kind, num_classes)
        rows.append({"mode": mode, "backbone": kind, "layers": layers, "tunable": count,
                     "ft": ft, "fraction": count / ft})
    return rows


def default_grid() -> List[Tuple[str, str]]:
    return [(mode, kind) for mode in ("gbst", "gast", "gsst", "gmst", "ft") for kind in BACKBONE_KINDS]


def audit_findings(rows: Sequence[Mapping]) -> List[str]:
    """Constancy breaks and side-mode fractions above the bound"""
    findings = []
    by_mode: Dict[str, set] = {}
    for row in rows:
        by_mode.setdefault(row["mode"], set()).add(row["tunable"])
        if row["mode"] in ("gsst", "gmst") and row["fraction"] > FRACTION_BOUND:
            findings.append(f"{row['mode']}/{row['backbone']}: fraction {row['fraction']:.3f} "
                            f"above {FRACTION_BOUND:.2f}")
    for mode in ("gsst", "gmst"):
        if len(by_mode.get(mode, ())) > 1:
            findings.append(f"{mode}: counts differ across backbones {sorted(by_mode[mode])}")
    return findings


def write_table(rows: Sequence[Mapping], path) -> None:
    pd.DataFrame(list(rows)).to_csv(path, index=False)


# ----------------------------------------------------------------------------
# gradient suite

def random_graph(num_nodes: int, feature_dim: int, num_classes: int, seed: int,
                 edge_prob: float = 0.3) -> Graph:
    """Undirected Erdos-Renyi graph with Gaussian features and random labels"""
    rng = np.random.default_rng(seed)
    nx_graph = nx.gnp_random_graph(num_nodes, edge_prob, seed=seed)
    features = rng.normal(size=(num_nodes, feature_dim))
    labels = rng.integers(0, num_classes, size=num_nodes)
    return Graph(features, symmetric_adj(num_nodes, nx_graph.edges()), node_labels=labels)


def gradient_suite(
        modes: Sequence[str] = FULL_SUITE_MODES,
        backbones: Sequence[str] = BACKBONE_KINDS,
        seed: int = 0,
        tol: float = 1e-4,
        num_nodes: int = 10
) -> List[Dict]:
    """
    Finite-difference check of every trainable parameter through
    sidetune_forward, the node head and the loss

    Returns:
        One row per (mode, backbone, parameter)
    """
    rows = []
    graph = random_graph(num_nodes, feature_dim=4, num_classes=3, seed=seed)
    for kind in backbones:
        backbone = BackboneConfig(kind=kind, layers=2, in_dim=4, hidden_dim=6, gat_heads=2)
        checkpoint = Checkpoint(backbone, init_params(backbone, seed))
        for mode in modes:
            config = SideTuneConfig(mode=mode, side_hidden=5, seed=seed)
            model = build_model(config, "node_cls", 3, 4, checkpoint=checkpoint, backbone=backbone)
            step = Step(graph.features, graph.adj, model.prepare(graph.adj), HeadContext(),
                        None, graph.node_labels)
            results = grad_check(lambda tensors: model_loss(model, tensors, step), model.params, tol=tol)
            for name, check in sorted(results.items()):
                rows.append({"mode": mode, "backbone": kind, "param": name,
                             "max_error": check.max_error, "passed": check.passed})
            logger.info("gradcheck %s/%s: %s", mode, kind, "ok" if all_passed(results) else "FAILED")
    return rows
