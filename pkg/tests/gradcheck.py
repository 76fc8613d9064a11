"""Central finite differences for tensors and plain functions."""

import numpy as np


def relative_error(analytic, numeric, floor: float = 1e-8) -> float:
    """``|g - fd| / max(|fd|, floor)`` in the Euclidean norm of the whole array."""
    analytic = np.asarray(analytic, dtype=float)
    numeric = np.asarray(numeric, dtype=float)
    return float(np.linalg.norm(analytic - numeric) / max(np.linalg.norm(numeric), floor))


def numeric_grad(fun, x, h: float = 1e-5) -> np.ndarray:
    """Central differences of scalar ``fun`` with respect to array ``x`` (perturbed in place)."""
    grad = np.zeros_like(x, dtype=float)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + h
        up = fun()
        x[i] = old - h
        down = fun()
        x[i] = old
        grad[i] = (up - down) / (2 * h)
    return grad


def tensor_errors(params, loss_fn, h: float = 1e-5) -> dict:
    """Relative error of every parameter's backprop gradient.

    ``loss_fn()`` must rebuild the graph and return the scalar loss tensor.
    """
    from synthgen import nn

    for p in params:
        p.grad = None
    nn.backward(loss_fn())
    out = {}
    for p in params:
        analytic = np.zeros_like(p.value) if p.grad is None else p.grad.copy()
        numeric = numeric_grad(lambda: float(loss_fn().value), p.value, h)
        out[p.name] = relative_error(analytic, numeric)
    return out
