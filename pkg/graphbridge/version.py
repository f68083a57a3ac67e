"""Version information for GraphBridge"""

__version__ = "0.1.0"
