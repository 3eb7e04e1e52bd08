"""Central finite-difference checks for layers and whole models."""
from __future__ import annotations

from typing import Callable

import numpy as np

from .layers import Module, Parameter


def rel_error(a, b, floor: float = 1e-8) -> float:
    a, b = np.asarray(a, np.float64), np.asarray(b, np.float64)
    return float(np.max(np.abs(a - b) / np.maximum(np.abs(a) + np.abs(b), floor)))


def numeric_grad(f: Callable[[], float], arr: np.ndarray, idx, h: float = 1e-4) -> float:
    return _differences(f, arr, idx, h)[0]


def _central(f, arr, idx, h):
    old = arr[idx]
    arr[idx] = old + h
    fp = f()
    arr[idx] = old - h
    fm = f()
    arr[idx] = old
    return (fp - fm) / (2 * h)


def _differences(f, arr, idx, h):
    """Central difference plus a flag for a kink (e.g. ReLU hinge) inside the step.

    For a smooth function the estimates at ``h`` and ``h/10`` agree to O(h^2);
    a hinge inside the wider step breaks that agreement.
    """
    wide, narrow = _central(f, arr, idx, h), _central(f, arr, idx, h / 10)
    kink = abs(wide - narrow) > 1e-6 * (abs(wide) + abs(narrow)) + 1e-9
    return wide, kink


def check_layer(layer: Module, x: np.ndarray, seed: int = 0, h: float = 1e-4, training: bool = True) -> float:
    """Worst relative error over input and parameter gradients of ``sum(w * layer(x))``.

    Run in float64; ``layer`` must hold float64 parameters. Coordinates whose
    one-sided differences disagree straddle a hinge and are skipped.
    """
    rng = np.random.default_rng(seed)
    x = np.array(x, dtype=np.float64)
    w = rng.standard_normal(layer.forward(x, training).shape)
    snapshot = [b.copy() for _, b in layer.named_buffers()]

    def restore():
        for (name, _), b in zip(layer.named_buffers(), snapshot):
            layer.set_buffer(name, b.copy())

    def f():
        restore()
        return float(np.sum(w * layer.forward(x, training)))

    restore()
    layer.zero_grad()
    layer.forward(x, training)
    gx = layer.backward(w.copy())
    analytic = [(x, gx)] + [(p.data, p.grad) for p in layer.parameters()]
    errs = [0.0]
    for arr, g in analytic:
        for i in np.ndindex(arr.shape):
            num, kink = _differences(f, arr, i, h)
            if not kink:
                errs.append(rel_error(g[i], num))
    restore()
    return max(errs)


def check_parameters(
    loss_fn: Callable[[], float],
    backward_fn: Callable[[], None],
    params: list[Parameter],
    n_checks: int = 20,
    seed: int = 0,
    h: float = 1e-4,
) -> float:
    """Compare analytic gradients for ``n_checks`` random scalar parameters.

    ``backward_fn`` must run forward and backward once, leaving ``.grad`` set.
    """
    rng = np.random.default_rng(seed)
    backward_fn()
    grads = [p.grad.copy() for p in params]
    sizes = np.array([p.data.size for p in params])
    errs = [0.0]
    for _ in range(n_checks):
        k = int(rng.choice(len(params), p=sizes / sizes.sum()))
        idx = np.unravel_index(int(rng.integers(sizes[k])), params[k].shape)
        num, kink = _differences(loss_fn, params[k].data, idx, h)
        if not kink:
            errs.append(rel_error(grads[k][idx], num, floor=1e-6))
    return max(errs)
