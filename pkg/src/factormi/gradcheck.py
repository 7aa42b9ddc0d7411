"""Central finite differences, independent of the tape machinery.

Only forward evaluations are used here, so these helpers serve as the
oracle for :func:`factormi.autodiff.backward`.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

from . import autodiff as ad


def numeric_grad(f: Callable[[np.ndarray], float], x: np.ndarray, rel_step: float = 1e-6) -> np.ndarray:
    """d f / d x by central differences, step ``rel_step * max(1, |x_i|)``."""
    x = np.array(x, dtype=np.float64)
    g = np.empty_like(x)
    flat, gflat = x.reshape(-1), g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        h = rel_step * max(1.0, abs(orig))
        flat[i] = orig + h
        fp = f(x)
        flat[i] = orig - h
        fm = f(x)
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * h)
    return g


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """max |a - n| / max(max |a|, max |n|), or the absolute error when both vanish."""
    diff = np.max(np.abs(analytic - numeric)) if analytic.size else 0.0
    scale = max(np.max(np.abs(analytic), initial=0.0), np.max(np.abs(numeric), initial=0.0))
    return float(diff / scale) if scale > 1e-12 else float(diff)


def check_gradients(fn: Callable[..., ad.Tensor], arrays: list[np.ndarray], rel_step: float = 1e-6) -> float:
    """Worst relative error over all inputs of the scalar function ``fn``.

    ``fn`` receives one :class:`Tensor` per array and must return a scalar.
    """
    leaves = [ad.Tensor(a, requires_grad=True) for a in arrays]
    with ad.Tape() as tape:
        out = fn(*leaves)
    ad.backward(out, tape)
    worst = 0.0
    for i, leaf in enumerate(leaves):

        def f(xi, i=i):
            args = [ad.Tensor(xi if j == i else a) for j, a in enumerate(arrays)]
            return fn(*args).item()

        num = numeric_grad(f, arrays[i], rel_step)
        ana = leaf.grad if leaf.grad is not None else np.zeros_like(num)
        worst = max(worst, relative_error(ana, num))
    return worst
