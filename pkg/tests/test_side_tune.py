import dataclasses

import numpy as np
import pytest

from graphbridge import autograd as ag
from graphbridge.backbones import BackboneConfig, Checkpoint, init_params
from graphbridge.bridges import HeadContext
from graphbridge.errors import BridgeRequiredError, ConfigError, DimensionError, FrozenParameterError, ScenarioError
from graphbridge.gradcheck import autodiff_grads
from graphbridge.graph_data import make_splits
from graphbridge.harness import random_graph
from graphbridge.side_tune import (MODES, SideTuneConfig, Step, base_merge, blend, build_model, count_tunables,
                                   make_objective, model_loss, predict, sidetune_forward, tune, tunable_count)
from graphbridge.synth import synth_mol, synth_sbm


def _checkpoint(kind="gcn", layers=2, in_dim=4, hidden_dim=6, seed=0):
    config = BackboneConfig(kind, layers=layers, in_dim=in_dim, hidden_dim=hidden_dim, gat_heads=2)
    return Checkpoint(config, init_params(config, seed))


def _forward(model, graph, params=None):
    params = ag_params(params if params is not None else model.params)
    return sidetune_forward(model, params, graph.features, graph.adj).numpy()


def ag_params(params):
    return {name: ag.constant(value) for name, value in params.items()}


def test_blend_examples():
    assert blend(0.0, ag.constant([2.0]), ag.constant([0.0])).numpy()[0] == pytest.approx(1.0)
    a, b = ag.constant([[3.0, -1.0]]), ag.constant([[7.0, 5.0]])
    np.testing.assert_allclose(blend(40.0, a, b).numpy(), a.numpy(), atol=1e-12)
    np.testing.assert_allclose(blend(-40.0, a, b).numpy(), b.numpy(), atol=1e-12)


def test_blend_shape_mismatch():
    with pytest.raises(DimensionError):
        blend(0.0, ag.constant([[1.0, 2.0]]), ag.constant([[1.0]]))


def test_base_merge_examples():
    pre = [ag.constant([[2.0]]), ag.constant([[2.0]])]
    backup = [ag.constant([[4.0]]), ag.constant([[4.0]])]
    mid = base_merge(pre, backup, np.zeros((2, 1)))
    assert [m.numpy()[0, 0] for m in mid] == [3.0, 3.0]
    high = base_merge(pre, backup, np.full((2, 1), 40.0))
    assert all(abs(m.numpy()[0, 0] - 2.0) < 1e-12 for m in high)
    low = base_merge(pre, backup, np.full((2, 1), -40.0))
    assert all(abs(m.numpy()[0, 0] - 4.0) < 1e-12 for m in low)
    with pytest.raises(DimensionError):
        base_merge(pre, backup[:1], np.zeros((2, 1)))


@pytest.mark.parametrize("kind", ["gcn", "gat", "gin"])
def test_saturated_backup_gate_reduces_gmst_to_gsst(kind, rng):
    for trial in range(50):
        layers = 1 + trial % 3
        ckpt = _checkpoint(kind, layers=layers, seed=trial)
        graph = random_graph(int(rng.integers(3, 12)), 4, 2, seed=trial)
        cfg = SideTuneConfig(mode="gsst", side_hidden=5, seed=trial)
        gsst = build_model(cfg, "node_cls", 2, 4, checkpoint=ckpt)
        gmst = build_model(dataclasses.replace(cfg, mode="gmst"), "node_cls", 2, 4, checkpoint=ckpt)
        params = dict(gmst.params, alpha_b=np.full((layers, 1), 40.0))
        np.testing.assert_allclose(_forward(gmst, graph, params), _forward(gsst, graph), atol=1e-12)


@pytest.mark.parametrize("pair", [("gbst", "gsst"), ("gast", "gmst")])
def test_single_layer_block_equals_scaffold(pair, rng):
    block, scaffold = pair
    for trial in range(20):
        ckpt = _checkpoint(("gcn", "gat", "gin")[trial % 3], layers=1, seed=trial)
        graph = random_graph(8, 4, 2, seed=trial)
        a = build_model(SideTuneConfig(mode=block, side_hidden=5, seed=trial), "node_cls", 2, 4, checkpoint=ckpt)
        b = build_model(SideTuneConfig(mode=scaffold, side_hidden=5, seed=trial), "node_cls", 2, 4, checkpoint=ckpt)
        assert set(a.params) == set(b.params)
        np.testing.assert_allclose(_forward(a, graph), _forward(b, graph), atol=1e-12)


def test_saturated_side_gate_cuts_side_gradients():
    ckpt = _checkpoint("gcn", layers=2)
    graph = random_graph(10, 4, 3, seed=1)
    model = build_model(SideTuneConfig(mode="gsst", side_hidden=5, alpha_init_raw=40.0), "node_cls", 3, 4,
                        checkpoint=ckpt)
    step = Step(graph.features, graph.adj, model.prepare(graph.adj), HeadContext(), None, graph.node_labels)
    grads = autodiff_grads(lambda p: model_loss(model, p, step), model.params)
    for name, grad in grads.items():
        if name.startswith("side."):
            assert np.abs(grad).max() < 1e-10
    assert np.abs(grads["down.1.weight"]).max() > 1e-6


def test_output_widths():
    ckpt = _checkpoint("gin", layers=2)
    graph = random_graph(7, 4, 2, seed=0)
    for mode in MODES:
        model = build_model(SideTuneConfig(mode=mode, side_hidden=5), "node_cls", 2, 4, checkpoint=ckpt)
        width = 6 if mode in ("ft", "scratch") else 5
        assert _forward(model, graph).shape == (7, width)


def test_side_modes_need_checkpoint():
    with pytest.raises(ScenarioError):
        build_model(SideTuneConfig(mode="gsst"), "node_cls", 2, 4)
    scratch = build_model(SideTuneConfig(mode="scratch"), "node_cls", 2, 4,
                          backbone=BackboneConfig("gcn", in_dim=4, hidden_dim=6))
    assert scratch.base == {}


def test_identity_adapter_requires_matching_width():
    with pytest.raises(BridgeRequiredError):
        build_model(SideTuneConfig(), "node_cls", 2, 3, checkpoint=_checkpoint(), adapter_kind="identity")
    padded = build_model(SideTuneConfig(), "node_cls", 2, 3, checkpoint=_checkpoint())
    assert padded.adapter.kind == "pad_truncate"


def test_config_validation():
    with pytest.raises(ConfigError):
        SideTuneConfig(mode="lora")
    with pytest.raises(ConfigError):
        SideTuneConfig(side_hidden=0)


def test_tunable_count_examples():
    backbone = BackboneConfig("gcn", layers=2, in_dim=8, hidden_dim=100)
    assert tunable_count("gsst", backbone, 16, "node_cls", 3) == 3701
    assert tunable_count("gmst", backbone, 16, "node_cls", 3) == 3703
    assert tunable_count("ft", backbone, 16, "node_cls", 3) == 11_303
    assert tunable_count("notune", backbone) == 0


@pytest.mark.parametrize("mode", MODES)
def test_built_models_match_closed_form(mode):
    ckpt = _checkpoint("gat", layers=3, in_dim=8, hidden_dim=10)
    model = build_model(SideTuneConfig(mode=mode, side_hidden=4), "graph_cls", 3, 8, checkpoint=ckpt)
    assert count_tunables(model) == tunable_count(mode, ckpt.config, 4, "graph_cls", 3)


def test_gsst_count_constant_across_backbones():
    counts = {tunable_count("gsst", BackboneConfig(kind, layers=5, in_dim=8, hidden_dim=100))
              for kind in ("gcn", "gat", "gin")}
    assert len(counts) == 1


def _node_dataset(seed=0):
    dataset = synth_sbm(block_sizes=(30, 30, 30), p_in=0.2, p_out=0.01, feature_dim=4, seed=seed)
    return make_splits(dataset, seed=seed)


@pytest.mark.parametrize("mode", ["gbst", "gast", "gsst", "gmst"])
def test_frozen_towers_survive_tuning(mode):
    ckpt = _checkpoint("gcn", layers=2)
    model = build_model(SideTuneConfig(mode=mode, side_hidden=5, epochs=100, patience=1000), "node_cls", 3, 4,
                        checkpoint=ckpt)
    backup = {k: v.tobytes() for k, v in (model.backup or {}).items()}
    tuned, report = tune(model, _node_dataset())
    assert report.epochs_run == 100
    for name, value in ckpt.params.items():
        assert tuned.base[name].tobytes() == value.tobytes()
    assert {k: v.tobytes() for k, v in (tuned.backup or {}).items()} == backup


def test_frozen_mutation_detected():
    model = build_model(SideTuneConfig(mode="gsst"), "node_cls", 3, 4, checkpoint=_checkpoint())
    base = {name: value + 1.0 for name, value in model.base.items()}
    tampered = dataclasses.replace(model, base=base)
    with pytest.raises(FrozenParameterError):
        tampered.check_frozen()
    with pytest.raises(ValueError):
        next(iter(model.base.values()))[0, 0] = 0.0


def test_zero_epochs_leave_model_unchanged():
    model = build_model(SideTuneConfig(mode="gsst", epochs=0), "node_cls", 3, 4, checkpoint=_checkpoint())
    tuned, report = tune(model, _node_dataset())
    for name, value in model.params.items():
        np.testing.assert_array_equal(tuned.params[name], value)
    assert report.epochs_run == 0
    assert report.epochs_to_converge == 0
    assert [h["epoch"] for h in report.history] == [0]


def test_notune_runs_no_steps():
    model = build_model(SideTuneConfig(mode="notune", epochs=50), "node_cls", 3, 4, checkpoint=_checkpoint())
    tuned, report = tune(model, _node_dataset())
    assert report.epochs_run == 0
    assert report.tunable_params == 0
    assert set(report.metrics) == {"train", "val", "test"}


def test_head_must_fit_dataset():
    model = build_model(SideTuneConfig(), "graph_cls", 3, 4, checkpoint=_checkpoint())
    with pytest.raises(ScenarioError):
        tune(model, _node_dataset())


def test_gsst_beats_majority_on_sbm():
    dataset = _node_dataset(seed=3)
    ckpt = _checkpoint("gcn", layers=2, hidden_dim=16, seed=3)
    model = build_model(SideTuneConfig(mode="gsst", epochs=100, seed=3), "node_cls", 3, 4, checkpoint=ckpt)
    _, report = tune(model, dataset)
    labels = dataset.labels()[dataset.splits["test"]]
    majority = np.bincount(labels).max() / len(labels)
    assert report.metrics["test"] > majority
    assert 0.0 <= report.metrics["test"] <= 1.0


def test_tuning_is_deterministic():
    dataset = _node_dataset(seed=1)
    ckpt = _checkpoint("gat", layers=2, seed=1)
    cfg = SideTuneConfig(mode="gmst", epochs=10, seed=1)
    a = tune(build_model(cfg, "node_cls", 3, 4, checkpoint=ckpt), dataset)[1]
    b = tune(build_model(cfg, "node_cls", 3, 4, checkpoint=ckpt), dataset)[1]
    assert a.metrics == b.metrics
    assert a.history == b.history


def test_graph_task_minibatches():
    dataset = synth_mol(count=40, seed=0)
    ckpt = _checkpoint("gin", layers=2, in_dim=8, hidden_dim=6)
    model = build_model(SideTuneConfig(mode="gsst", epochs=3, batch_size=4), "graph_cls", 2, 8, checkpoint=ckpt)
    _, report = tune(model, dataset)
    assert report.epochs_run == 3
    assert all(0.0 <= v <= 1.0 for v in report.metrics.values())


def test_edge_prediction_on_node_graph():
    dataset = synth_sbm(block_sizes=(20, 20), p_in=0.3, p_out=0.02, feature_dim=4, seed=2)
    model = build_model(SideTuneConfig(mode="gsst", epochs=5, seed=2), "edge_pred", 2, 4, checkpoint=_checkpoint())
    tuned, report = tune(model, dataset, metric="roc_auc", edge_ratio=0.2)
    assert report.tunable_params == tunable_count("gsst", model.backbone, 16, "edge_pred")
    out = predict(tuned, dataset, "test", "roc_auc", edge_ratio=0.2)
    assert out["kind"] == "roc_auc"
    assert len(out["scores"]) == len(out["labels"])
    assert all(0.0 < s < 1.0 for s in out["scores"])


def test_predict_layout():
    dataset = _node_dataset()
    model = build_model(SideTuneConfig(mode="ft", epochs=2), "node_cls", 3, 4, checkpoint=_checkpoint())
    out = predict(model, dataset, "val")
    assert out["num_classes"] == 3
    assert len(out["scores"]) == len(dataset.splits["val"])
    np.testing.assert_allclose(np.sum(out["scores"], axis=1), 1.0)


def test_graph_splits_are_per_class():
    dataset = synth_mol(count=20, seed=5)
    model = build_model(SideTuneConfig(mode="scratch", seed=5), "graph_cls", 2, 8,
                        backbone=BackboneConfig("gin", in_dim=8, hidden_dim=6))
    objective = make_objective(model, dataset)
    labels = dataset.labels()
    for name, size in (("train", 6), ("val", 2), ("test", 2)):
        assert np.bincount(labels[objective.splits[name]], minlength=2).tolist() == [size, size]


def test_tiny_graph_sets_fall_back_to_a_plain_split(caplog):
    dataset = synth_mol(count=6, seed=5)
    model = build_model(SideTuneConfig(mode="scratch", seed=5), "graph_cls", 2, 8,
                        backbone=BackboneConfig("gin", in_dim=8, hidden_dim=6))
    objective = make_objective(model, dataset)
    assert sorted(len(objective.splits[name]) for name in ("train", "val", "test")) == [1, 2, 3]
    assert "per-class split failed" in caplog.text
