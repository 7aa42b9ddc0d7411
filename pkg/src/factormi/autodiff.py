"""Dense float64 tensors with tape-based reverse-mode differentiation.

Operations are plain functions (``conv2d``, ``linear``, ``elu`` ...). When a
:class:`Tape` is active and any input requires a gradient, the operation
appends a node holding its inputs and a closure mapping the upstream
gradient to input gradients. :func:`backward` walks the tape once in reverse.

Image-like ops accept either a single sample ``(C, H, W)`` or a batch
``(N, C, H, W)``; ``linear`` accepts ``(N_in,)`` or ``(..., N_in)``.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import ContractError, DimensionError, TapeError

_state = threading.local()


def _active_tape() -> "Tape | None":
    stack = getattr(_state, "stack", None)
    return stack[-1] if stack else None


class Tensor:
    """N-dimensional float64 array with an optional gradient buffer."""

    __slots__ = ("data", "grad", "requires_grad", "node_id", "_tape", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.array(data, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(1)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.node_id: int | None = None
        self._tape: Tape | None = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() needs a single element, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __sub__(self, other):
        return add(self, mul(as_tensor(other), -1.0))

    def __rsub__(self, other):
        return add(as_tensor(other), mul(self, -1.0))


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def detach(t: Tensor) -> Tensor:
    """Same values, no gradient path back to ``t``."""
    return Tensor(t.data)


@dataclass
class Node:
    op: str
    inputs: tuple[Tensor, ...]
    backward_fn: Callable[[np.ndarray], Sequence[np.ndarray | None]]


@dataclass
class Tape:
    """Ordered record of differentiable operations.

    Use as a context manager; nested tapes shadow the outer one.
    """

    nodes: list[Node] = field(default_factory=list)

    def __enter__(self):
        if not hasattr(_state, "stack"):
            _state.stack = []
        _state.stack.append(self)
        return self

    def __exit__(self, *exc):
        _state.stack.pop()
        return False

    def __len__(self):
        return len(self.nodes)

    def record(self, op, inputs, out_data, backward_fn) -> Tensor:
        for t in inputs:
            if t.node_id is not None and t._tape is not self:
                raise TapeError(f"{op}: input {t!r} belongs to a different tape; detach() it first")
        out = Tensor.__new__(Tensor)
        out.data = out_data
        out.grad = None
        out.requires_grad = True
        out.name = None
        out.node_id = len(self.nodes)
        out._tape = self
        self.nodes.append(Node(op, tuple(inputs), backward_fn))
        return out


def _result(op: str, inputs: Sequence[Tensor], out_data: np.ndarray, backward_fn) -> Tensor:
    tape = _active_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        return tape.record(op, inputs, out_data, backward_fn)
    return Tensor(out_data)


def backward(loss: Tensor, tape: Tape) -> None:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every leaf on ``tape``.

    Leaves are tensors created with ``requires_grad=True`` (parameters).
    Gradients add onto any existing ``.grad``; zero them between steps.
    """
    if loss.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if loss.node_id is None or loss._tape is not tape:
        raise TapeError("loss was not recorded on this tape")
    pending: dict[int, np.ndarray] = {loss.node_id: np.ones_like(loss.data)}
    for idx in range(loss.node_id, -1, -1):
        g = pending.pop(idx, None)
        if g is None:
            continue
        node = tape.nodes[idx]
        for t, gi in zip(node.inputs, node.backward_fn(g)):
            if gi is None or not t.requires_grad:
                continue
            if t.node_id is not None:
                prev = pending.get(t.node_id)
                pending[t.node_id] = gi if prev is None else prev + gi
            else:
                t.grad = gi.copy() if t.grad is None else t.grad + gi


# ---------------------------------------------------------------- elementwise


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data + b.data
    return _result("add", (a, b), out,
                   lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data * b.data
    return _result("mul", (a, b), out,
                   lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)))


def elu(x: Tensor, alpha: float = 1.0) -> Tensor:
    """x for x > 0, alpha * (exp(x) - 1) otherwise."""
    d = x.data
    neg = d <= 0
    out = d.copy()
    out[neg] = alpha * np.expm1(d[neg])

    def bw(g):
        slope = np.ones_like(d)
        slope[neg] = out[neg] + alpha
        return (g * slope,)

    return _result("elu", (x,), out, bw)


def softplus(x: Tensor) -> Tensor:
    """log(1 + exp(x)), computed without overflow."""
    d = x.data
    out = np.logaddexp(0.0, d)
    return _result("softplus", (x,), out, lambda g: (g * _sigmoid(d),))


def _sigmoid(d: np.ndarray) -> np.ndarray:
    e = np.exp(-np.abs(d))
    return np.where(d >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def sigmoid(x: Tensor) -> Tensor:
    s = _sigmoid(x.data)
    return _result("sigmoid", (x,), s, lambda g: (g * s * (1.0 - s),))


# ---------------------------------------------------------------- reductions / shape


def sum(x: Tensor) -> Tensor:  # noqa: A001 - mirrors numpy naming
    return _result("sum", (x,), np.array([x.data.sum()]),
                   lambda g: (np.broadcast_to(g.reshape(()), x.shape).copy(),))


def mean(x: Tensor, axis: int | None = None) -> Tensor:
    if axis is None:
        n = x.size
        return _result("mean", (x,), np.array([x.data.mean()]),
                       lambda g: (np.full(x.shape, g.reshape(()) / n),))
    n = x.shape[axis]
    out = x.data.mean(axis=axis)
    return _result("mean", (x,), out,
                   lambda g: (np.broadcast_to(np.expand_dims(g, axis) / n, x.shape).copy(),))


def reshape(x: Tensor, shape) -> Tensor:
    return _result("reshape", (x,), x.data.reshape(shape), lambda g: (g.reshape(x.shape),))


def flatten(x: Tensor, start: int = 0) -> Tensor:
    """Collapse axes ``start:`` into one."""
    return reshape(x, x.shape[:start] + (-1,))


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = tuple(tensors)
    out = np.concatenate([t.data for t in tensors], axis=axis)
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def bw(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _result("concat", tensors, out, bw)


def _einsum_grad(g, out_sub, other_sub, other, target_sub, target_shape):
    kept = "".join(c for c in target_sub if c in out_sub + other_sub)
    part = np.einsum(f"{out_sub},{other_sub}->{kept}", g, other, optimize=True)
    # indices summed away inside the forward pass reappear as broadcast axes
    shape = [target_shape[i] if c in kept else 1 for i, c in enumerate(target_sub)]
    return np.broadcast_to(part.reshape(shape), target_shape).copy()


def einsum(subscripts: str, a: Tensor, b: Tensor) -> Tensor:
    """Two-operand ``np.einsum`` without repeated indices inside one operand."""
    ins, out_sub = subscripts.replace(" ", "").split("->")
    sa, sb = ins.split(",")
    a, b = as_tensor(a), as_tensor(b)
    out = np.einsum(subscripts, a.data, b.data, optimize=True)
    return _result("einsum", (a, b), out,
                   lambda g: (_einsum_grad(g, out_sub, sb, b.data, sa, a.shape),
                              _einsum_grad(g, out_sub, sa, a.data, sb, b.shape)))


# ---------------------------------------------------------------- layers


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """``x @ weight.T + bias`` over the last axis of ``x``."""
    if weight.data.ndim != 2:
        raise DimensionError(f"linear weight must be 2-D, got shape {weight.shape}")
    n_out, n_in = weight.shape
    if x.shape[-1] != n_in:
        raise DimensionError(f"linear: input axis -1 has length {x.shape[-1]}, weight expects {n_in}")
    if bias is not None and bias.shape != (n_out,):
        raise DimensionError(f"linear: bias axis 0 has length {bias.shape[0]}, expected {n_out}")
    xd, w = x.data, weight.data
    out = xd @ w.T
    if bias is not None:
        out = out + bias.data

    def bw(g):
        g2 = g.reshape(-1, n_out)
        gx = g @ w
        gw = g2.T @ xd.reshape(-1, n_in)
        gb = g2.sum(axis=0)
        return (gx, gw) if bias is None else (gx, gw, gb)

    inputs = (x, weight) if bias is None else (x, weight, bias)
    return _result("linear", inputs, out, bw)


def _as_batch(x: Tensor, op: str) -> tuple[np.ndarray, bool]:
    if x.data.ndim == 3:
        return x.data[None], True
    if x.data.ndim == 4:
        return x.data, False
    raise DimensionError(f"{op}: expected (C,H,W) or (N,C,H,W) input, got shape {x.shape}")


def conv_output_size(n: int, k: int, s: int) -> int:
    return (n - k) // s + 1


def _im2col(xd, kh, kw, sh, sw, ho, wo) -> np.ndarray:
    """(N, C, H, W) -> (N*Ho*Wo, C*kh*kw) patch matrix."""
    win = np.lib.stride_tricks.sliding_window_view(xd, (kh, kw), axis=(2, 3))[:, :, ::sh, ::sw][:, :, :ho, :wo]
    n, c = xd.shape[:2]
    return win.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, c * kh * kw)


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride=(1, 1)) -> Tensor:
    """Valid (unpadded) 2-D cross-correlation.

    out[o, i, j] = bias[o] + sum_{c,a,b} x[c, i*sH + a, j*sW + b] * weight[o, c, a, b]
    """
    xd, squeeze = _as_batch(x, "conv2d")
    if weight.data.ndim != 4:
        raise DimensionError(f"conv2d: weight must be (C_out, C_in, kH, kW), got {weight.shape}")
    n, c, h, w = xd.shape
    o, ci, kh, kw = weight.shape
    sh, sw = stride
    if ci != c:
        raise DimensionError(f"conv2d: channel axis has {c} channels, weight expects {ci}")
    if kh > h:
        raise DimensionError(f"conv2d: height axis {h} smaller than kernel height {kh}")
    if kw > w:
        raise DimensionError(f"conv2d: width axis {w} smaller than kernel width {kw}")
    if bias is not None and bias.shape != (o,):
        raise DimensionError(f"conv2d: bias axis 0 has length {bias.shape[0]}, expected {o}")
    ho, wo = conv_output_size(h, kh, sh), conv_output_size(w, kw, sw)
    wmat = weight.data.reshape(o, -1)
    cols = _im2col(xd, kh, kw, sh, sw, ho, wo)
    out = cols @ wmat.T
    if bias is not None:
        out += bias.data
    out = np.ascontiguousarray(out.reshape(n, ho, wo, o).transpose(0, 3, 1, 2))

    def bw(g):
        if squeeze:
            g = g[None]
        g2 = g.transpose(0, 2, 3, 1).reshape(-1, o)
        gw = (g2.T @ cols).reshape(weight.shape)
        gx = None
        if x.requires_grad:
            gcols = (g2 @ wmat).reshape(n, ho, wo, c, kh, kw)
            gx = np.zeros_like(xd)
            for a in range(kh):
                for b in range(kw):
                    gx[:, :, a:a + sh * (ho - 1) + 1:sh, b:b + sw * (wo - 1) + 1:sw] += \
                        gcols[:, :, :, :, a, b].transpose(0, 3, 1, 2)
            if squeeze:
                gx = gx[0]
        if bias is None:
            return gx, gw
        return gx, gw, g2.sum(axis=0)

    if squeeze:
        out = out[0]
    inputs = (x, weight) if bias is None else (x, weight, bias)
    return _result("conv2d", inputs, out, bw)


def avgpool2d(x: Tensor, kernel, stride=None) -> Tensor:
    """Mean over each (kH, kW) window, no padding. ``stride`` defaults to ``kernel``."""
    xd, squeeze = _as_batch(x, "avgpool2d")
    kh, kw = kernel
    sh, sw = stride if stride is not None else kernel
    _, _, h, w = xd.shape
    if kh > h:
        raise DimensionError(f"avgpool2d: height axis {h} smaller than kernel height {kh}")
    if kw > w:
        raise DimensionError(f"avgpool2d: width axis {w} smaller than kernel width {kw}")
    ho, wo = conv_output_size(h, kh, sh), conv_output_size(w, kw, sw)
    scale = 1.0 / (kh * kw)

    def window(arr, a, b):
        return arr[:, :, a:a + sh * (ho - 1) + 1:sh, b:b + sw * (wo - 1) + 1:sw]

    out = np.zeros(xd.shape[:2] + (ho, wo))
    for a in range(kh):
        for b in range(kw):
            out += window(xd, a, b)
    out *= scale

    def bw(g):
        if squeeze:
            g = g[None]
        gx = np.zeros_like(xd)
        gs = g * scale
        for a in range(kh):
            for b in range(kw):
                window(gx, a, b)[...] += gs
        return (gx[0] if squeeze else gx,)

    return _result("avgpool2d", (x,), out[0] if squeeze else out, bw)


def cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean negative log-likelihood of integer ``labels`` under softmax(logits).

    ``logits`` is (K,) with a scalar label or (B, K) with B labels.
    """
    z = logits.data
    single = z.ndim == 1
    z2 = z[None] if single else z
    y = np.atleast_1d(np.asarray(labels, dtype=np.int64))
    b, k = z2.shape
    if y.shape != (b,):
        raise DimensionError(f"cross_entropy: {y.shape[0]} labels for batch axis of length {b}")
    if np.any((y < 0) | (y >= k)):
        raise ContractError(f"cross_entropy: labels must lie in [0, {k}), got {y.tolist()}")
    shifted = z2 - z2.max(axis=1, keepdims=True)
    logp = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    loss = -logp[np.arange(b), y].mean()

    def bw(g):
        p = np.exp(logp)
        p[np.arange(b), y] -= 1.0
        p *= g.reshape(()) / b
        return (p[0] if single else p,)

    return _result("cross_entropy", (logits,), np.array([loss]), bw)
