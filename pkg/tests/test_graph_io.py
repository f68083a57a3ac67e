import json

import numpy as np
import pytest

from graphbridge.errors import ContainerParseError, DanglingEdgeError, DataError, LabelRangeError, SchemaError
from graphbridge.graph_data import make_splits
from graphbridge.graph_io import (FORMAT_VERSION, container_from_dict, convert_edgelist, load_container,
                                  save_container)
from graphbridge.synth import synth


def _minimal(**overrides):
    data = {
        "format_version": FORMAT_VERSION,
        "kind": "node_task",
        "num_classes": 2,
        "feature_dim": 2,
        "graphs": [{
            "num_nodes": 3,
            "features": [[0.0, 1.0], [1.0, 0.0], [0.5, 0.5]],
            "edges": [[0, 1], [1, 0]],
            "undirected": True,
            "node_labels": [0, 1, 1],
        }],
    }
    data.update(overrides)
    return data


def test_minimal_container(tmp_path):
    path = tmp_path / "g.json"
    path.write_text(json.dumps(_minimal()))
    graph_set = load_container(path)
    assert len(graph_set.graphs) == 1
    assert graph_set.graphs[0].num_nodes == 3


def test_dangling_edge_names_field():
    data = _minimal()
    data["graphs"][0]["edges"] = [[5, 0]]
    data["graphs"][0]["undirected"] = False
    with pytest.raises(DanglingEdgeError) as excinfo:
        container_from_dict(data)
    assert "graphs[0].edges[0]" in str(excinfo.value)


def test_label_range_checked():
    data = _minimal()
    data["graphs"][0]["node_labels"] = [0, 1, 2]
    with pytest.raises(LabelRangeError):
        container_from_dict(data)


def test_asymmetric_undirected_rejected():
    data = _minimal()
    data["graphs"][0]["edges"] = [[0, 1]]
    with pytest.raises(SchemaError):
        container_from_dict(data)


def test_version_checked():
    with pytest.raises(SchemaError):
        container_from_dict(_minimal(format_version=2))


def test_truncated_file_reports_offset(tmp_path):
    path = tmp_path / "g.json"
    text = json.dumps(_minimal())
    path.write_text(text[:40])
    with pytest.raises(ContainerParseError) as excinfo:
        load_container(path)
    assert excinfo.value.exit_code == 3
    assert 0 <= excinfo.value.offset <= 40


def test_invalid_utf8_reports_offset(tmp_path):
    path = tmp_path / "g.json"
    path.write_bytes(b'{"format_version": 1, "\xff": 0}')
    with pytest.raises(ContainerParseError) as excinfo:
        load_container(path)
    assert excinfo.value.offset == 23


def test_missing_file_is_a_data_error(tmp_path):
    with pytest.raises(DataError) as excinfo:
        load_container(tmp_path / "absent.json")
    assert excinfo.value.exit_code == 3


@pytest.mark.parametrize("kind", ["sbm", "mol", "ptcld"])
def test_save_load_round_trip(tmp_path, kind):
    params = {"count": 6} if kind != "sbm" else {"block_sizes": [5, 5]}
    graph_set = make_splits(synth(kind, params, seed=1), seed=1)
    path = tmp_path / "c.json"
    save_container(graph_set, path)
    first = path.read_bytes()
    loaded = load_container(path)
    assert loaded == graph_set
    save_container(loaded, path)
    assert path.read_bytes() == first


def _write(path, text):
    path.write_text(text)
    return path


def test_convert_deduplicates_undirected_edges(tmp_path):
    edges = _write(tmp_path / "e.csv", "0,1\n1,0\n")
    feats = _write(tmp_path / "f.csv", "1,0\n0,1\n")
    labels = _write(tmp_path / "l.csv", "0\n1\n")
    graph_set = convert_edgelist(edges, feats, labels)
    adj = graph_set.graphs[0].adj
    assert adj.edge_list().tolist() == [[0, 1], [1, 0]]
    assert graph_set.num_classes == 2


def test_convert_empty_edges_gives_isolated_nodes(tmp_path):
    edges = _write(tmp_path / "e.csv", "")
    feats = _write(tmp_path / "f.csv", "1,0\n0,1\n1,1\n")
    labels = _write(tmp_path / "l.csv", "0\n1\n0\n")
    graph_set = convert_edgelist(edges, feats, labels)
    assert graph_set.graphs[0].adj.num_edges == 0
    assert graph_set.graphs[0].num_nodes == 3


def test_convert_rejects_ragged_features(tmp_path):
    edges = _write(tmp_path / "e.csv", "0,1\n")
    feats = _write(tmp_path / "f.csv", "1,0\n0\n")
    labels = _write(tmp_path / "l.csv", "0\n1\n")
    with pytest.raises(SchemaError):
        convert_edgelist(edges, feats, labels)


def test_convert_rejects_non_integer_labels(tmp_path):
    edges = _write(tmp_path / "e.csv", "0,1\n")
    feats = _write(tmp_path / "f.csv", "1,0\n0,1\n")
    labels = _write(tmp_path / "l.csv", "0\ncat\n")
    with pytest.raises(LabelRangeError):
        convert_edgelist(edges, feats, labels)


def test_convert_rejects_dangling_edges(tmp_path):
    edges = _write(tmp_path / "e.csv", "0,7\n")
    feats = _write(tmp_path / "f.csv", "1,0\n0,1\n")
    labels = _write(tmp_path / "l.csv", "0\n1\n")
    with pytest.raises(DanglingEdgeError):
        convert_edgelist(edges, feats, labels)


def test_convert_keeps_float_features(tmp_path):
    edges = _write(tmp_path / "e.csv", "0,1\n1,2\n")
    feats = _write(tmp_path / "f.csv", "0.25,1\n2,3.5\n-1,0\n")
    labels = _write(tmp_path / "l.csv", "2\n0\n1\n")
    graph_set = convert_edgelist(edges, feats, labels)
    np.testing.assert_array_equal(graph_set.graphs[0].features, [[0.25, 1], [2, 3.5], [-1, 0]])
    assert graph_set.num_classes == 3
