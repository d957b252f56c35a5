"""Central finite-difference gradient checks."""

from __future__ import annotations

import numpy as np

from .tensor import Tape, Tensor


def numerical_grad(f, arrays, index: int, h: float = 1e-5) -> np.ndarray:
    """d(sum of f(*arrays))/d(arrays[index]) by central differences."""
    base = [np.array(a, dtype=float) for a in arrays]
    x = base[index]
    g = np.zeros_like(x)
    for i in np.ndindex(x.shape):
        old = x[i]
        x[i] = old + h
        fp = float(np.sum(f(*[Tensor(a) for a in base]).data))
        x[i] = old - h
        fm = float(np.sum(f(*[Tensor(a) for a in base]).data))
        x[i] = old
        g[i] = (fp - fm) / (2 * h)
    return g


def analytic_grads(f, arrays) -> list[np.ndarray]:
    inputs = [Tensor(np.array(a, dtype=float), requires_grad=True) for a in arrays]
    with Tape() as tape:
        out = f(*inputs)
        loss = out.sum()
    tape.backward(loss)
    return [t.grad if t.grad is not None else np.zeros_like(t.data) for t in inputs]


def relative_error(a, b) -> float:
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    return float(np.max(np.abs(a - b)) / max(np.max(np.abs(a)), np.max(np.abs(b)), 1e-8))


def check_gradients(f, arrays, h: float = 1e-5) -> list[float]:
    """Relative error between tape and finite-difference gradients, one per input."""
    grads = analytic_grads(f, arrays)
    return [relative_error(grads[k], numerical_grad(f, arrays, k, h)) for k in range(len(arrays))]
