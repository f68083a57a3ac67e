import os

import numpy as np
import pytest

from graphbridge.backbones import BackboneConfig
from graphbridge.graph_data import Graph, GraphSet, symmetric_adj


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: end-to-end runs that take more than a few seconds")


@pytest.fixture(autouse=True)
def config_home(tmp_path, monkeypatch):
    """Keep per-user configuration inside the test's temporary directory"""
    home = tmp_path / "gbhome"
    monkeypatch.setenv("GRAPHBRIDGE_HOME", str(home))
    return home


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def ring_graph(n: int, feature_dim: int = 4, seed: int = 0, num_classes: int = 2) -> Graph:
    rng = np.random.default_rng(seed)
    pairs = [(i, (i + 1) % n) for i in range(n)]
    return Graph(
        features=rng.normal(size=(n, feature_dim)),
        adj=symmetric_adj(n, pairs),
        node_labels=np.arange(n) % num_classes,
    )


@pytest.fixture
def small_graph() -> Graph:
    return ring_graph(6)


@pytest.fixture
def node_set() -> GraphSet:
    graph = ring_graph(10, num_classes=2)
    return GraphSet(kind="node_task", graphs=[graph], num_classes=2, feature_dim=4)


@pytest.fixture(params=["gcn", "gat", "gin"])
def tiny_backbone(request) -> BackboneConfig:
    return BackboneConfig(kind=request.param, layers=2, in_dim=4, hidden_dim=6, gat_heads=2)


skip_without_cora = pytest.mark.skipif(
    not os.environ.get("GRAPHBRIDGE_CORA"),
    reason="set GRAPHBRIDGE_CORA to a Cora container to run the reproduction check",
)
