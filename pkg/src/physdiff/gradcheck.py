"""Central finite-difference gradient checks."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from . import autograd as ag
from .autograd import Tensor


def numerical_grad(fn: Callable[[], Tensor], param: Tensor, h: float = 1e-5,
                   index=None) -> np.ndarray:
    """Central differences of the scalar ``fn()`` w.r.t. entries of ``param``.

    ``index`` restricts the probe to the given flat indices; other entries stay 0.
    """
    grad = np.zeros_like(param.data)
    flat = param.data.reshape(-1)
    gflat = grad.reshape(-1)
    index = range(flat.size) if index is None else index
    with ag.no_grad():
        for i in index:
            orig = flat[i]
            flat[i] = orig + h
            fp = float(fn().data)
            flat[i] = orig - h
            fm = float(fn().data)
            flat[i] = orig
            gflat[i] = (fp - fm) / (2.0 * h)
    return grad


def relative_error(auto: np.ndarray, num: np.ndarray) -> float:
    """max|auto - num| / max(max|auto|, max|num|), the max-norm relative error of one tensor."""
    scale = max(float(np.abs(auto).max(initial=0.0)), float(np.abs(num).max(initial=0.0)))
    return float(np.abs(auto - num).max(initial=0.0)) / max(scale, 1e-12)


def gradient_errors(fn: Callable[[], Tensor], params: Sequence[Tensor], h: float = 1e-5,
                    max_entries: int | None = None, seed: int = 0) -> list[float]:
    """Relative error per parameter between autodiff and finite differences.

    With ``max_entries`` each tensor is probed at that many random entries.
    """
    for p in params:
        p.grad = None
    ag.get_tape().clear()
    loss = fn()
    ag.backward(loss)
    rng = np.random.default_rng(seed)
    errors = []
    for p in params:
        auto = np.zeros_like(p.data) if p.grad is None else np.asarray(p.grad)
        idx = None
        if max_entries is not None and p.data.size > max_entries:
            idx = np.sort(rng.choice(p.data.size, size=max_entries, replace=False))
        num = numerical_grad(fn, p, h, idx)
        if idx is not None:
            auto, num = auto.reshape(-1)[idx], num.reshape(-1)[idx]
        errors.append(relative_error(auto, num))
    return errors


def finite_diff_check(net, *inputs, h: float = 1e-5, reduce: Callable | None = None,
                      params: Sequence[Tensor] | None = None, max_entries: int | None = None,
                      seed: int = 0) -> float:
    """Worst relative gradient error over the parameters of ``net``.

    The scalar objective is ``reduce(net(*inputs))``; the default reduction
    is a fixed random projection so that all output entries contribute with
    distinct weights.
    """
    params = list(params) if params is not None else net.parameters()
    if reduce is None:
        with ag.no_grad():
            shape = net(*inputs).shape
        proj = Tensor(np.random.default_rng(12345).standard_normal(shape))

        def reduce(out):
            return ag.tsum(out * proj)

    return max(gradient_errors(lambda: reduce(net(*inputs)), params, h, max_entries, seed))
