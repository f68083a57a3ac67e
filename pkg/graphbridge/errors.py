"""
Exception hierarchy for GraphBridge

Every error carries the CLI exit code it maps to.
"""


class GraphBridgeError(Exception):
    """Base class for all GraphBridge errors"""

    exit_code = 1


class ConfigError(GraphBridgeError):
    """Invalid run description or CLI configuration"""

    exit_code = 2


class ScenarioError(ConfigError):
    """Scenario, head, mode or checkpoint do not fit together"""


class BridgeRequiredError(ConfigError):
    """Feature dimension does not match the backbone input without an adapter"""

    def __init__(self, got: int, expected: int):
        super().__init__(
            f"feature dim {got} does not match backbone in_dim {expected}; "
            f"configure an input adapter"
        )
        self.got = got
        self.expected = expected


class DataError(GraphBridgeError):
    """Malformed or inconsistent input data"""

    exit_code = 3


class SchemaError(DataError):
    """Container or checkpoint does not match its schema"""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


class DanglingEdgeError(SchemaError):
    """Edge endpoint outside [0, num_nodes)"""


class LabelRangeError(SchemaError):
    """Label outside [0, num_classes)"""


class ContainerParseError(DataError):
    """File is not valid JSON/CSV"""

    def __init__(self, source: str, offset: int, message: str):
        super().__init__(f"{source}: parse error at byte {offset}: {message}")
        self.offset = offset


class CheckpointError(DataError):
    """Checkpoint version or shape mismatch"""


class SplitError(DataError):
    """Split fractions are invalid or would produce an empty split"""


class UndefinedMetricError(DataError):
    """Metric is undefined for the given labels"""


class AugmentError(DataError):
    """Augmentation cannot be applied to this graph"""


class NumericalError(GraphBridgeError):
    """Numerical or autodiff contract failure"""

    exit_code = 4


class DimensionError(NumericalError):
    """Operand shapes do not conform"""


class UnsupportedOpError(NumericalError):
    """Unknown primitive kind"""


class TapeError(NumericalError):
    """Tape lifetime or backward contract violated"""


class ProbeError(NumericalError):
    """Finite-difference probe produced a non-finite loss"""

    def __init__(self, param: str, index: int):
        super().__init__(f"non-finite loss while probing {param}[{index}]")
        self.param = param
        self.index = index


class NormalizationError(NumericalError):
    """Cannot normalize a zero-norm vector"""


class InsufficientNegativesError(NumericalError):
    """Contrastive batch too small to contain negatives"""


class NonFiniteLossError(NumericalError):
    """Training loss became NaN or Inf"""

    def __init__(self, where: str):
        super().__init__(f"non-finite loss at {where}")
        self.where = where


class FrozenParameterError(NumericalError):
    """A frozen parameter changed during tuning"""
