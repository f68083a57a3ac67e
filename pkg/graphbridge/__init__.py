"""
GraphBridge - pre-train and side-tune GNNs across transfer scenarios
"""

from .version import __version__
from .errors import GraphBridgeError
from .graph_data import Graph, GraphSet
from .backbones import BackboneConfig, Checkpoint, GNNBackbone
from .side_tune import SideTuneConfig, build_model, tune
from .harness import ScenarioConfig, run_scenario

__all__ = [
    "__version__",
    "GraphBridgeError",
    "Graph",
    "GraphSet",
    "BackboneConfig",
    "Checkpoint",
    "GNNBackbone",
    "SideTuneConfig",
    "build_model",
    "tune",
    "ScenarioConfig",
    "run_scenario",
]
