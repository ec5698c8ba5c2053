"""Central finite-difference gradient checking."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor


# Gradients whose norm is below this are indistinguishable from finite-difference
# round-off (about eps / h) and are compared on an absolute scale instead.
GRAD_FLOOR = 1e-7
# Headroom over the central-difference noise level eps * |f| / h when deriving the floor.
ROUNDOFF_SAFETY = 100.0


def roundoff_floor(value: float, h: float, probes: int, dtype=np.float64) -> float:
    """Norm a gradient must exceed to be resolvable by central differences of ``value``."""
    noise = np.finfo(dtype).eps * max(abs(value), 1.0) / h
    return max(GRAD_FLOOR, ROUNDOFF_SAFETY * np.sqrt(probes) * noise)


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = GRAD_FLOOR) -> float:
    """Norm-wise relative error ``|a - n| / max(|a|, |n|, floor)`` over all probed entries."""
    a = np.asarray(analytic, dtype=np.float64).ravel()
    n = np.asarray(numeric, dtype=np.float64).ravel()
    scale = max(np.linalg.norm(a), np.linalg.norm(n), floor)
    return float(np.linalg.norm(a - n) / scale)


def numerical_gradient(fn: Callable[[], Tensor], tensor: Tensor, indices, h: float = 1e-5) -> np.ndarray:
    out = np.empty(len(indices))
    flat = tensor.data.reshape(-1)
    for k, i in enumerate(indices):
        orig = flat[i]
        flat[i] = orig + h
        plus = float(fn().data)
        flat[i] = orig - h
        minus = float(fn().data)
        flat[i] = orig
        out[k] = (plus - minus) / (2 * h)
    return out


def gradcheck(
    fn: Callable[[], Tensor],
    inputs: Sequence[Tensor],
    h: float = 1e-5,
    max_probes: int | None = None,
    rng: np.random.Generator | None = None,
) -> float:
    """Compare backprop gradients of scalar ``fn()`` with central differences.

    ``fn`` must rebuild its graph from ``inputs`` on every call.  With
    ``max_probes`` only that many randomly chosen entries per input are probed.
    Returns the worst relative error across inputs.
    """
    rng = rng or np.random.default_rng(0)
    for t in inputs:
        t.grad = None
    out = fn()
    out.backward()
    value = float(out.data)
    worst = 0.0
    for t in inputs:
        analytic = np.zeros(t.size) if t.grad is None else t.grad.reshape(-1).copy()
        if max_probes is not None and t.size > max_probes:
            idx = np.sort(rng.choice(t.size, size=max_probes, replace=False))
        else:
            idx = np.arange(t.size)
        numeric = numerical_gradient(fn, t, idx, h)
        floor = roundoff_floor(value, h, len(idx), t.dtype)
        worst = max(worst, relative_error(analytic[idx], numeric, floor))
    for t in inputs:
        t.grad = None
    return worst
