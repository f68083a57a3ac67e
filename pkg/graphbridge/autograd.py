#!/usr/bin/env python3
"""
Dense tensors and a single-use reverse-mode tape for GraphBridge

Every differentiable computation in the package goes through the primitive
registry below. A primitive is a forward function that also returns whatever
state its vector-Jacobian product needs, plus the VJP itself.
"""

import logging
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from .errors import DimensionError, NormalizationError, TapeError, UnsupportedOpError

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class Tensor:
    """Immutable float64 array, optionally tracked by a tape"""

    data: np.ndarray
    requires_grad: bool = False
    node_id: Optional[int] = None
    tape: Optional["Tape"] = field(default=None, repr=False)

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.flags.writeable:
            data = data.copy() if data is self.data else data
            data.flags.writeable = False
        object.__setattr__(self, "data", data)

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise DimensionError(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(-1)[0])


def constant(value) -> Tensor:
    """Wrap a value as an untracked tensor"""
    if isinstance(value, Tensor):
        return value
    return Tensor(np.array(value, dtype=np.float64))


@dataclass
class TapeNode:
    kind: str
    inputs: Tuple[Tensor, ...]
    saved: Dict[str, Any]
    attrs: Dict[str, Any]
    output: Optional[np.ndarray] = None


class Tape:
    """
    Append-only record of primitive applications

    Insertion order is a topological order, so backward walks the node list in
    reverse exactly once. A tape can run backward only once.
    """

    def __init__(self):
        self.nodes: List[TapeNode] = []
        self._consumed = False

    def __len__(self) -> int:
        return len(self.nodes)

    def watch(self, value, name: Optional[str] = None) -> Tensor:
        """Register a leaf that requires gradients"""
        self._check_open()
        data = np.array(value, dtype=np.float64)
        node = TapeNode(kind="leaf", inputs=(), saved={"name": name, "shape": data.shape}, attrs={})
        self.nodes.append(node)
        return Tensor(data, requires_grad=True, node_id=len(self.nodes) - 1, tape=self)

    def _record(self, kind: str, inputs: Sequence[Tensor], out: np.ndarray,
                saved: Dict[str, Any], attrs: Dict[str, Any]) -> Tensor:
        self._check_open()
        self.nodes.append(TapeNode(kind=kind, inputs=tuple(inputs), saved=saved,
                                   attrs=attrs, output=out))
        return Tensor(out, requires_grad=True, node_id=len(self.nodes) - 1, tape=self)

    def _check_open(self):
        if self._consumed:
            raise TapeError("tape already used for backward; tapes are single-use")

    def backward(self, loss: Tensor) -> Dict[int, np.ndarray]:
        """
        Reverse pass from a scalar loss

        Args:
            loss: Scalar tensor recorded on this tape

        Returns:
            Map from leaf node id to gradient; unreachable leaves get zeros
        """
        self._check_open()
        if loss.size != 1:
            raise TapeError(f"backward needs a scalar loss, got shape {loss.shape}")
        self._consumed = True

        grads: List[Optional[np.ndarray]] = [None] * len(self.nodes)
        leaf_grads: Dict[int, np.ndarray] = {}
        if loss.requires_grad:
            if loss.tape is not self:
                raise TapeError("loss was recorded on a different tape")
            grads[loss.node_id] = np.ones_like(loss.data)

        for node_id in range(len(self.nodes) - 1, -1, -1):
            node = self.nodes[node_id]
            grad = grads[node_id]
            grads[node_id] = None
            if node.kind == "leaf":
                if grad is not None:
                    leaf_grads[node_id] = grad
                continue
            if grad is None:
                continue
            prim = PRIMITIVES[node.kind]
            input_grads = prim.vjp(grad, [t.data for t in node.inputs], node.output,
                                   node.saved, node.attrs)
            for tensor, g in zip(node.inputs, input_grads):
                if g is None or not tensor.requires_grad:
                    continue
                prev = grads[tensor.node_id]
                grads[tensor.node_id] = g if prev is None else prev + g

        return {
            node_id: leaf_grads.get(node_id, np.zeros(node.saved["shape"]))
            for node_id, node in enumerate(self.nodes)
            if node.kind == "leaf"
        }


class Primitive(NamedTuple):
    forward: Callable[..., Tuple[np.ndarray, Dict[str, Any]]]
    vjp: Callable[..., List[Optional[np.ndarray]]]


PRIMITIVES: Dict[str, Primitive] = {}


def primitive(kind: str, vjp: Callable):
    """Register a forward function under `kind` with its VJP"""

    def decorator(forward):
        PRIMITIVES[kind] = Primitive(forward=forward, vjp=vjp)
        return forward

    return decorator


def tensor_eval(kind: str, inputs: Sequence[Tensor], **attrs) -> Tensor:
    """
    Apply a primitive, recording it when any input requires gradients

    Args:
        kind: Primitive id (see PRIMITIVES)
        inputs: Operand tensors
        **attrs: Primitive attributes (slope, targets, index, ...)

    Returns:
        Output tensor, tracked on the inputs' tape when needed
    """
    prim = PRIMITIVES.get(kind)
    if prim is None:
        raise UnsupportedOpError(f"unsupported op '{kind}'")
    inputs = [constant(t) for t in inputs]
    out, saved = prim.forward([t.data for t in inputs], **attrs)
    out = np.asarray(out, dtype=np.float64)
    out.flags.writeable = False

    tapes = {id(t.tape): t.tape for t in inputs if t.requires_grad}
    if not tapes:
        return Tensor(out)
    if len(tapes) > 1:
        raise TapeError(f"{kind}: inputs recorded on different tapes")
    tape = next(iter(tapes.values()))
    return tape._record(kind, inputs, out, saved, attrs)


# ----------------------------------------------------------------------------
# broadcasting helpers

def _broadcast_shape(kind: str, a: np.ndarray, b: np.ndarray) -> Tuple[int, ...]:
    try:
        shape = np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"{kind}: shapes {a.shape} and {b.shape} do not conform")
    if shape != a.shape and shape != b.shape:
        raise DimensionError(f"{kind}: shapes {a.shape} and {b.shape} do not conform")
    return shape


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _require_2d(kind: str, x: np.ndarray):
    if x.ndim != 2:
        raise DimensionError(f"{kind}: expected a 2-D tensor, got shape {x.shape}")


# ----------------------------------------------------------------------------
# primitives

def _matmul_vjp(g, inputs, out, saved, attrs):
    a, b = inputs
    return [g @ b.T, a.T @ g]


@primitive("matmul", _matmul_vjp)
def _matmul(inputs):
    a, b = inputs
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: shapes {a.shape} and {b.shape} do not conform")
    return a @ b, {}


@primitive("transpose", lambda g, inputs, out, saved, attrs: [g.T])
def _transpose(inputs):
    _require_2d("transpose", inputs[0])
    return inputs[0].T, {}


def _add_vjp(g, inputs, out, saved, attrs):
    a, b = inputs
    return [_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)]


@primitive("add", _add_vjp)
def _add(inputs):
    a, b = inputs
    _broadcast_shape("add", a, b)
    return a + b, {}


def _mul_vjp(g, inputs, out, saved, attrs):
    a, b = inputs
    return [_unbroadcast(g * b, a.shape), _unbroadcast(g * a, b.shape)]


@primitive("mul", _mul_vjp)
def _mul(inputs):
    a, b = inputs
    _broadcast_shape("mul", a, b)
    return a * b, {}


@primitive("scale", lambda g, inputs, out, saved, attrs: [g * attrs["factor"]])
def _scale(inputs, factor: float):
    return inputs[0] * factor, {}


@primitive("relu", lambda g, inputs, out, saved, attrs: [g * (inputs[0] > 0)])
def _relu(inputs):
    return np.maximum(inputs[0], 0.0), {}


def _stable_sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


@primitive("sigmoid", lambda g, inputs, out, saved, attrs: [g * out * (1.0 - out)])
def _sigmoid(inputs):
    return _stable_sigmoid(inputs[0]), {}


def _leaky_relu_vjp(g, inputs, out, saved, attrs):
    return [g * np.where(inputs[0] > 0, 1.0, attrs["slope"])]


@primitive("leaky_relu", _leaky_relu_vjp)
def _leaky_relu(inputs, slope: float = 0.2):
    x = inputs[0]
    return np.where(x > 0, x, slope * x), {}


def _concat_vjp(g, inputs, out, saved, attrs):
    axis = attrs.get("axis", 1)
    bounds = np.cumsum([x.shape[axis] for x in inputs])[:-1]
    return np.split(g, bounds, axis=axis)


@primitive("concat", _concat_vjp)
def _concat(inputs, axis: int = 1):
    try:
        return np.concatenate(inputs, axis=axis), {}
    except ValueError as e:
        raise DimensionError(f"concat: {e}")


def _row_select_vjp(g, inputs, out, saved, attrs):
    grad = np.zeros_like(inputs[0])
    np.add.at(grad, attrs["index"], g)
    return [grad]


@primitive("row_select", _row_select_vjp)
def _row_select(inputs, index):
    x = inputs[0]
    index = np.asarray(index, dtype=np.int64)
    if index.size and (index.min() < 0 or index.max() >= x.shape[0]):
        raise DimensionError(f"row_select: index out of range for {x.shape[0]} rows")
    return x[index], {}


def _segment_counts(segments: np.ndarray, num_segments: int) -> np.ndarray:
    return np.bincount(segments, minlength=num_segments).astype(np.float64)


def _mean_rows_vjp(g, inputs, out, saved, attrs):
    x = inputs[0]
    segments = attrs.get("segments")
    if segments is None:
        return [np.broadcast_to(g / x.shape[0], x.shape).copy()]
    counts = np.maximum(saved["counts"], 1.0)
    return [(g / counts[:, None])[segments]]


@primitive("mean_rows", _mean_rows_vjp)
def _mean_rows(inputs, segments=None, num_segments: Optional[int] = None):
    x = inputs[0]
    _require_2d("mean_rows", x)
    if segments is None:
        if x.shape[0] == 0:
            raise DimensionError("mean_rows: no rows")
        return x.mean(axis=0, keepdims=True), {}
    segments = np.asarray(segments, dtype=np.int64)
    if segments.shape[0] != x.shape[0]:
        raise DimensionError(f"mean_rows: {segments.shape[0]} segment ids for {x.shape[0]} rows")
    k = int(num_segments if num_segments is not None else (segments.max() + 1 if segments.size else 0))
    counts = _segment_counts(segments, k)
    sums = np.zeros((k, x.shape[1]))
    np.add.at(sums, segments, x)
    return sums / np.maximum(counts, 1.0)[:, None], {"counts": counts}


def _sum_rows_vjp(g, inputs, out, saved, attrs):
    return [np.broadcast_to(g, inputs[0].shape).copy()]


@primitive("sum_rows", _sum_rows_vjp)
def _sum_rows(inputs, axis: Optional[int] = 0):
    x = inputs[0]
    if axis is None:
        return np.array(x.sum()).reshape((1,) * max(x.ndim, 1)), {}
    return x.sum(axis=axis, keepdims=True), {}


def _log_softmax_vjp(g, inputs, out, saved, attrs):
    probs = saved["probs"]
    mask = attrs.get("mask")
    if mask is not None:
        g = np.where(mask, 0.0, g)
    return [g - probs * g.sum(axis=1, keepdims=True)]


@primitive("log_softmax", _log_softmax_vjp)
def _log_softmax(inputs, mask=None):
    """Row-wise log-softmax; masked entries are excluded and output 0"""
    x = inputs[0]
    _require_2d("log_softmax", x)
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != x.shape:
            raise DimensionError(f"log_softmax: mask shape {mask.shape} != {x.shape}")
        work = np.where(mask, -np.inf, x)
    else:
        work = x
    shift = work.max(axis=1, keepdims=True)
    exp = np.exp(work - shift)
    total = exp.sum(axis=1, keepdims=True)
    out = work - shift - np.log(total)
    probs = exp / total
    if mask is not None:
        out = np.where(mask, 0.0, out)
    return out, {"probs": probs}


def _cross_entropy_vjp(g, inputs, out, saved, attrs):
    logp = inputs[0]
    targets = np.asarray(attrs["targets"], dtype=np.int64)
    grad = np.zeros_like(logp)
    grad[np.arange(len(targets)), targets] = -1.0 / len(targets)
    return [grad * g.reshape(-1)[0]]


@primitive("cross_entropy", _cross_entropy_vjp)
def _cross_entropy(inputs, targets):
    """Mean negative log-likelihood of integer targets under log-probabilities"""
    logp = inputs[0]
    _require_2d("cross_entropy", logp)
    targets = np.asarray(targets, dtype=np.int64)
    if targets.shape != (logp.shape[0],):
        raise DimensionError(f"cross_entropy: {targets.shape} targets for {logp.shape[0]} rows")
    if targets.size == 0:
        raise DimensionError("cross_entropy: no targets")
    if targets.min() < 0 or targets.max() >= logp.shape[1]:
        raise DimensionError("cross_entropy: target out of range")
    value = -logp[np.arange(len(targets)), targets].mean()
    return np.array([[value]]), {}


def _l2_norm_vjp(g, inputs, out, saved, attrs):
    norms = saved["norms"]
    return [(g - out * (g * out).sum(axis=1, keepdims=True)) / norms]


@primitive("l2_norm", _l2_norm_vjp)
def _l2_norm(inputs, eps: float = 1e-12):
    """Row-wise L2 normalization"""
    x = inputs[0]
    _require_2d("l2_norm", x)
    norms = np.sqrt((x * x).sum(axis=1, keepdims=True))
    if np.any(norms <= eps):
        raise NormalizationError("l2_norm: zero-norm row")
    return x / norms, {"norms": norms}


def _bce_logits_vjp(g, inputs, out, saved, attrs):
    logits = inputs[0]
    targets = np.asarray(attrs["targets"], dtype=np.float64).reshape(logits.shape)
    return [(_stable_sigmoid(logits) - targets) / logits.size * g.reshape(-1)[0]]


@primitive("bce_logits", _bce_logits_vjp)
def _bce_logits(inputs, targets):
    """Mean binary cross-entropy on logits"""
    logits = inputs[0]
    targets = np.asarray(targets, dtype=np.float64)
    if targets.size != logits.size or logits.size == 0:
        raise DimensionError(f"bce_logits: {targets.size} targets for {logits.size} logits")
    targets = targets.reshape(logits.shape)
    softplus = np.maximum(logits, 0.0) + np.log1p(np.exp(-np.abs(logits)))
    return np.array([[(softplus - targets * logits).mean()]]), {}


# ----------------------------------------------------------------------------
# functional wrappers

def matmul(a: Tensor, b: Tensor) -> Tensor:
    return tensor_eval("matmul", [a, b])


def transpose(x: Tensor) -> Tensor:
    return tensor_eval("transpose", [x])


def add(a: Tensor, b: Tensor) -> Tensor:
    return tensor_eval("add", [a, b])


def mul(a: Tensor, b: Tensor) -> Tensor:
    return tensor_eval("mul", [a, b])


def scale(a: Tensor, factor: float) -> Tensor:
    return tensor_eval("scale", [a], factor=float(factor))


def sub(a: Tensor, b: Tensor) -> Tensor:
    return add(a, scale(b, -1.0))


def relu(x: Tensor) -> Tensor:
    return tensor_eval("relu", [x])


def sigmoid(x: Tensor) -> Tensor:
    return tensor_eval("sigmoid", [x])


def leaky_relu(x: Tensor, slope: float = 0.2) -> Tensor:
    return tensor_eval("leaky_relu", [x], slope=float(slope))


def concat(tensors: Sequence[Tensor], axis: int = 1) -> Tensor:
    return tensor_eval("concat", list(tensors), axis=axis)


def row_select(x: Tensor, index) -> Tensor:
    return tensor_eval("row_select", [x], index=np.asarray(index, dtype=np.int64))


def mean_rows(x: Tensor, segments=None, num_segments: Optional[int] = None) -> Tensor:
    if segments is not None:
        segments = np.asarray(segments, dtype=np.int64)
    return tensor_eval("mean_rows", [x], segments=segments, num_segments=num_segments)


def sum_rows(x: Tensor, axis: Optional[int] = 0) -> Tensor:
    return tensor_eval("sum_rows", [x], axis=axis)


def log_softmax(x: Tensor, mask=None) -> Tensor:
    return tensor_eval("log_softmax", [x], mask=mask)


def cross_entropy(logp: Tensor, targets) -> Tensor:
    return tensor_eval("cross_entropy", [logp], targets=np.asarray(targets, dtype=np.int64))


def l2_norm(x: Tensor) -> Tensor:
    return tensor_eval("l2_norm", [x])


def bce_logits(logits: Tensor, targets) -> Tensor:
    return tensor_eval("bce_logits", [logits], targets=np.asarray(targets, dtype=np.float64))


def linear(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    out = matmul(x, weight)
    return add(out, bias) if bias is not None else out
