#!/usr/bin/env python3
"""
Finite-difference verification of tape gradients
"""

import logging
from dataclasses import dataclass
from typing import Callable, Dict, Mapping, Optional

import numpy as np

from .autograd import Tape, Tensor, constant
from .errors import ProbeError

logger = logging.getLogger(__name__)

Forward = Callable[[Dict[str, Tensor]], Tensor]


@dataclass(frozen=True)
class ParamCheck:
    name: str
    max_error: float
    probes: int
    passed: bool


def _scalar(loss: Tensor) -> float:
    return float(np.asarray(loss.data).reshape(-1)[0])


def autodiff_grads(forward: Forward, params: Mapping[str, np.ndarray]) -> Dict[str, np.ndarray]:
    """Gradients of forward's scalar output w.r.t. every named parameter"""
    tape = Tape()
    watched = {name: tape.watch(value, name=name) for name, value in params.items()}
    loss = forward(watched)
    grads = tape.backward(loss)
    return {name: grads[t.node_id].reshape(np.shape(params[name])) for name, t in watched.items()}


def grad_check(
        forward: Forward,
        params: Mapping[str, np.ndarray],
        tol: float = 1e-4,
        h: float = 1e-5,
        max_probes: Optional[int] = None,
        seed: int = 0
) -> Dict[str, ParamCheck]:
    """
    Compare tape gradients with central differences

    Args:
        forward: Deterministic closure mapping named tensors to a scalar loss
        params: Named parameter arrays
        tol: Relative tolerance, |g_ad - g_fd| / max(1, |g_fd|)
        h: Central-difference step
        max_probes: Probe at most this many entries per parameter (seeded
            subset); None probes every entry
        seed: Seed for the probe subset

    Returns:
        Per-parameter result
    """
    params = {name: np.array(value, dtype=np.float64) for name, value in params.items()}
    ad = autodiff_grads(forward, params)
    rng = np.random.default_rng(seed)
    results = {}

    for name, value in params.items():
        flat_count = value.size
        indices = np.arange(flat_count)
        if max_probes is not None and flat_count > max_probes:
            indices = np.sort(rng.choice(flat_count, size=max_probes, replace=False))

        worst = 0.0
        for index in indices:
            fd = _central_difference(forward, params, name, int(index), h)
            g_ad = ad[name].reshape(-1)[index]
            worst = max(worst, abs(g_ad - fd) / max(1.0, abs(fd)))

        results[name] = ParamCheck(name=name, max_error=float(worst),
                                   probes=len(indices), passed=bool(worst <= tol))
        logger.debug("gradcheck %s: max error %.3e over %d probes", name, worst, len(indices))

    return results


def _central_difference(forward: Forward, params: Dict[str, np.ndarray],
                        name: str, index: int, h: float) -> float:
    values = []
    for step in (h, -h):
        probe = params[name].copy()
        probe.reshape(-1)[index] += step
        tensors = {k: constant(probe if k == name else v) for k, v in params.items()}
        loss = _scalar(forward(tensors))
        if not np.isfinite(loss):
            raise ProbeError(name, index)
        values.append(loss)
    return (values[0] - values[1]) / (2.0 * h)


def all_passed(results: Mapping[str, ParamCheck]) -> bool:
    return all(r.passed for r in results.values())
