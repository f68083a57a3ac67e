#!/usr/bin/env python3
"""
Container ingestion for GraphBridge
Reads and writes the canonical JSON container and converts CSV exports
"""

import json
import logging
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

import numpy as np
import pandas as pd

from .errors import ContainerParseError, DanglingEdgeError, DataError, LabelRangeError, SchemaError
from .graph_data import KINDS, SPLIT_NAMES, Graph, GraphSet, symmetric_adj
from .sparse import SparseAdj

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1

PathLike = Union[str, Path]


def dumps_canonical(data: Any, indent: Optional[int] = None) -> str:
    """Sorted-key JSON; compact unless an indent is given"""
    if indent is None:
        return json.dumps(data, sort_keys=True, separators=(",", ":"))
    return json.dumps(data, sort_keys=True, indent=indent)


def write_canonical(path: PathLike, data: Any, indent: Optional[int] = None):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dumps_canonical(data, indent) + "\n", encoding="utf-8")


def read_json(path: PathLike) -> Any:
    """Parse a JSON file, reporting the byte offset of any syntax error"""
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as e:
        raise DataError(f"{path}: cannot read ({e.strerror or e})")
    try:
        text = raw.decode("utf-8")
    except UnicodeDecodeError as e:
        raise ContainerParseError(str(path), e.start, "invalid UTF-8")
    try:
        return json.loads(text)
    except json.JSONDecodeError as e:
        raise ContainerParseError(str(path), e.pos, e.msg)


# ----------------------------------------------------------------------------
# JSON container

def _require(cond: bool, path: str, message: str):
    if not cond:
        raise SchemaError(path, message)


def _is_int(value) -> bool:
    return isinstance(value, int) and not isinstance(value, bool)


def _graph_from_dict(entry: Dict, i: int, feature_dim: int, num_classes: int) -> Graph:
    base = f"graphs[{i}]"
    _require(isinstance(entry, dict), base, "expected an object")
    for key in ("num_nodes", "features", "edges", "undirected"):
        _require(key in entry, f"{base}.{key}", "missing")
    n = entry["num_nodes"]
    _require(_is_int(n) and n >= 0, f"{base}.num_nodes", "expected a non-negative integer")
    _require(isinstance(entry["undirected"], bool), f"{base}.undirected", "expected a boolean")

    rows = entry["features"]
    _require(isinstance(rows, list) and len(rows) == n, f"{base}.features",
             f"expected {n} rows")
    for j, row in enumerate(rows):
        _require(isinstance(row, list) and len(row) == feature_dim, f"{base}.features[{j}]",
                 f"expected {feature_dim} values")
    features = np.array(rows, dtype=np.float64).reshape(n, feature_dim)
    _require(bool(np.all(np.isfinite(features))), f"{base}.features", "non-finite value")

    edges = entry["edges"]
    _require(isinstance(edges, list), f"{base}.edges", "expected a list")
    for j, edge in enumerate(edges):
        _require(isinstance(edge, list) and len(edge) == 2 and all(_is_int(v) for v in edge),
                 f"{base}.edges[{j}]", "expected [src, dst] integers")
        if not (0 <= edge[0] < n and 0 <= edge[1] < n):
            raise DanglingEdgeError(f"{base}.edges[{j}]",
                                    f"edge ({edge[0]}, {edge[1]}) dangles on a {n}-node graph")
    adj = SparseAdj.from_edges(n, edges, undirected=entry["undirected"])
    if entry["undirected"]:
        _require(adj.is_symmetric(), f"{base}.edges", "undirected graph with asymmetric edges")

    node_labels = entry.get("node_labels")
    if node_labels is not None:
        _require(isinstance(node_labels, list) and len(node_labels) == n, f"{base}.node_labels",
                 f"expected {n} labels")
        for j, label in enumerate(node_labels):
            _require(_is_int(label), f"{base}.node_labels[{j}]", "expected an integer")
            if not 0 <= label < num_classes:
                raise LabelRangeError(f"{base}.node_labels[{j}]",
                                      f"label {label} outside [0, {num_classes})")

    graph_label = entry.get("graph_label")
    if graph_label is not None:
        _require(_is_int(graph_label), f"{base}.graph_label", "expected an integer")
        if not 0 <= graph_label < num_classes:
            raise LabelRangeError(f"{base}.graph_label", f"label {graph_label} outside [0, {num_classes})")

    return Graph(features, adj, node_labels, graph_label)


def container_from_dict(data: Dict) -> GraphSet:
    """
    Validate a parsed container and build the GraphSet

    Args:
        data: Parsed JSON container

    Returns:
        GraphSet; violations raise SchemaError naming the field path
    """
    _require(isinstance(data, dict), "$", "expected an object")
    for key in ("format_version", "kind", "num_classes", "feature_dim", "graphs"):
        _require(key in data, key, "missing")
    _require(data["format_version"] == FORMAT_VERSION, "format_version",
             f"unsupported version {data['format_version']!r}, expected {FORMAT_VERSION}")
    _require(data["kind"] in KINDS, "kind", f"expected one of {KINDS}")
    _require(_is_int(data["num_classes"]) and data["num_classes"] >= 1, "num_classes",
             "expected a positive integer")
    _require(_is_int(data["feature_dim"]) and data["feature_dim"] >= 1, "feature_dim",
             "expected a positive integer")
    _require(isinstance(data["graphs"], list) and data["graphs"], "graphs", "expected a non-empty list")

    graphs = [_graph_from_dict(entry, i, data["feature_dim"], data["num_classes"])
              for i, entry in enumerate(data["graphs"])]

    splits = data.get("splits")
    if splits is not None:
        _require(isinstance(splits, dict), "splits", "expected an object")
        for name in SPLIT_NAMES:
            _require(isinstance(splits.get(name), list), f"splits.{name}", "expected a list")
            for j, value in enumerate(splits[name]):
                _require(_is_int(value), f"splits.{name}[{j}]", "expected an integer")

    return GraphSet(data["kind"], tuple(graphs), data["num_classes"], data["feature_dim"], splits)


def container_to_dict(graph_set: GraphSet) -> Dict:
    graphs = []
    for graph in graph_set.graphs:
        entry = {
            "num_nodes": graph.num_nodes,
            "features": graph.features.tolist(),
            "edges": graph.adj.edge_list().tolist(),
            "undirected": bool(graph.adj.undirected),
        }
        if graph.node_labels is not None:
            entry["node_labels"] = graph.node_labels.tolist()
        if graph.graph_label is not None:
            entry["graph_label"] = int(graph.graph_label)
        graphs.append(entry)

    data = {
        "format_version": FORMAT_VERSION,
        "kind": graph_set.kind,
        "num_classes": graph_set.num_classes,
        "feature_dim": graph_set.feature_dim,
        "graphs": graphs,
    }
    if graph_set.splits is not None:
        data["splits"] = {name: graph_set.splits[name].tolist() for name in SPLIT_NAMES}
    return data


def load_container(path: PathLike) -> GraphSet:
    """Load and validate a JSON container"""
    graph_set = container_from_dict(read_json(path))
    logger.info("loaded %s container %s: %d graphs", graph_set.kind, path, len(graph_set.graphs))
    return graph_set


def save_container(graph_set: GraphSet, path: PathLike):
    write_canonical(path, container_to_dict(graph_set))


# ----------------------------------------------------------------------------
# CSV conversion

class CSVProcessor:
    """Read the three CSV exports a graph is converted from"""

    @staticmethod
    def _frame(path: PathLike, **kwargs) -> pd.DataFrame:
        try:
            return pd.read_csv(path, header=None, skip_blank_lines=True, **kwargs)
        except OSError as e:
            raise DataError(f"{path}: cannot read ({e.strerror or e})")
        except UnicodeDecodeError as e:
            raise ContainerParseError(str(path), e.start, "invalid UTF-8")

    @staticmethod
    def read_edges(path: PathLike) -> List[List[int]]:
        try:
            frame = CSVProcessor._frame(path, dtype=np.int64)
        except pd.errors.EmptyDataError:
            return []
        except ValueError as e:
            raise SchemaError(f"{path}", f"edge rows must be 'src,dst' integers ({e})")
        if frame.shape[1] != 2:
            raise SchemaError(f"{path}", f"expected 2 columns, got {frame.shape[1]}")
        return frame.to_numpy().tolist()

    @staticmethod
    def read_features(path: PathLike) -> np.ndarray:
        try:
            frame = CSVProcessor._frame(path)
        except pd.errors.ParserError as e:
            raise SchemaError(f"{path}", f"ragged feature rows ({e})")
        except pd.errors.EmptyDataError:
            raise SchemaError(f"{path}", "no feature rows")
        ragged = np.flatnonzero(frame.isna().any(axis=1).to_numpy())
        if ragged.size:
            raise SchemaError(f"{path}[{int(ragged[0])}]", "ragged feature row")
        try:
            return frame.to_numpy(dtype=np.float64)
        except ValueError as e:
            raise SchemaError(f"{path}", f"non-numeric feature ({e})")

    @staticmethod
    def read_labels(path: PathLike) -> np.ndarray:
        try:
            frame = CSVProcessor._frame(path)
        except pd.errors.EmptyDataError:
            return np.zeros(0, dtype=np.int64)
        column = frame.iloc[:, 0]
        if frame.shape[1] != 1 or not pd.api.types.is_integer_dtype(column):
            bad = 0
            for j, value in enumerate(column.tolist()):
                if not isinstance(value, (int, np.integer)):
                    bad = j
                    break
            raise LabelRangeError(f"{path}[{bad}]", "non-integer label")
        return column.to_numpy(dtype=np.int64)


def convert_edgelist(
        edges_csv: PathLike,
        features_csv: PathLike,
        labels_csv: PathLike,
        kind: str = "node_task",
        undirected: bool = True,
        num_classes: Optional[int] = None
) -> GraphSet:
    """
    Build a single-graph container from CSV exports

    Args:
        edges_csv: One 'src,dst' pair per line, 0-based
        features_csv: One comma-separated feature row per node
        labels_csv: One integer per node (or a single graph label)
        kind: Container kind
        undirected: Symmetrize and deduplicate edges
        num_classes: Class count; defaults to max label + 1

    Returns:
        Validated GraphSet
    """
    features = CSVProcessor.read_features(features_csv)
    labels = CSVProcessor.read_labels(labels_csv)
    edges = CSVProcessor.read_edges(edges_csv)
    n = features.shape[0]

    for j, (u, v) in enumerate(edges):
        if not (0 <= u < n and 0 <= v < n):
            raise DanglingEdgeError(f"edges[{j}]", f"edge ({u}, {v}) dangles on a {n}-node graph")

    if undirected:
        adj = symmetric_adj(n, edges)
    else:
        adj = SparseAdj.from_edges(n, sorted({(u, v) for u, v in edges}), undirected=False)

    node_labels, graph_label = None, None
    if kind in ("graph_task", "pointcloud_task") and len(labels) == 1:
        graph_label = int(labels[0])
    elif len(labels) == n:
        node_labels = labels
    else:
        raise SchemaError(f"{labels_csv}", f"{len(labels)} labels for {n} nodes")

    if num_classes is None:
        num_classes = int(labels.max()) + 1 if labels.size else 1
    graph = Graph(features, adj, node_labels, graph_label)
    logger.info("converted %d nodes, %d directed edges", n, adj.num_edges)
    return GraphSet(kind, (graph,), num_classes, features.shape[1])
