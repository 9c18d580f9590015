"""Dense tensors with tape-based reverse-mode differentiation.

Every primitive below computes its output with numpy and, when any input
requires a gradient, records a node on the active :class:`Tape` holding a
vector-Jacobian product.  :func:`backward` replays the tape in reverse.

Tensors are float64 unless created otherwise.
"""

from __future__ import annotations

import contextlib
import threading
from typing import Callable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

DEFAULT_DTYPE = np.float64


class ShapeError(ValueError):
    """Operands of a primitive have incompatible shapes."""


class NumericError(FloatingPointError):
    """A primitive produced NaN or Inf."""


class TapeError(RuntimeError):
    """Backward requested on a tape that no longer holds the loss."""


class _Node:
    __slots__ = ("out", "inputs", "vjp", "generation")

    def __init__(self, out, inputs, vjp, generation):
        self.out = out
        self.inputs = inputs
        self.vjp = vjp
        self.generation = generation


class Tape:
    """Ordered record of differentiable operations for one thread."""

    def __init__(self):
        self.nodes: list[_Node] = []
        self.generation = 0
        self.enabled = True

    def record(self, out: "Tensor", inputs: tuple["Tensor", ...], vjp: Callable) -> None:
        node = _Node(out, inputs, vjp, self.generation)
        out._node = node
        out._index = len(self.nodes)
        self.nodes.append(node)

    def clear(self) -> None:
        self.nodes = []
        self.generation += 1

    def __len__(self) -> int:
        return len(self.nodes)


_local = threading.local()


def get_tape() -> Tape:
    tape = getattr(_local, "tape", None)
    if tape is None:
        tape = _local.tape = Tape()
    return tape


@contextlib.contextmanager
def no_grad():
    """Evaluate primitives without recording them."""
    tape = get_tape()
    prev = tape.enabled
    tape.enabled = False
    try:
        yield
    finally:
        tape.enabled = prev


class Tensor:
    """An n-dimensional real array with an optional gradient slot."""

    __slots__ = ("data", "requires_grad", "grad", "_node", "_index", "name")
    __array_priority__ = 1000

    def __init__(self, data, requires_grad: bool = False, dtype=None, name: str | None = None):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.array(data, dtype=dtype or DEFAULT_DTYPE)
        if arr.dtype.kind != "f":
            arr = arr.astype(DEFAULT_DTYPE)
        _check_finite("Tensor", arr)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._node: _Node | None = None
        self._index = -1
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.size == 1 else float("nan")

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    def __len__(self) -> int:
        return self.shape[0]

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __pow__(self, exponent):
        return power(self, exponent)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    def backward(self) -> None:
        backward(self)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _check_finite(name: str, arr: np.ndarray) -> None:
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"{name}: non-finite value in output of shape {arr.shape}")


def _make(name: str, data: np.ndarray, inputs: tuple[Tensor, ...], vjp: Callable) -> Tensor:
    _check_finite(name, data)
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out._node = None
    out._index = -1
    out.name = None
    tape = get_tape()
    out.requires_grad = tape.enabled and any(t.requires_grad for t in inputs)
    if out.requires_grad:
        tape.record(out, inputs, vjp)
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``g`` down to ``shape`` after numpy broadcasting."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _broadcast_shape(name: str, a: Tensor, b: Tensor) -> tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{name}: cannot broadcast shapes {a.shape} and {b.shape}") from None


# ---------------------------------------------------------------------------
# elementwise arithmetic


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("add", a, b)
    sa, sb = a.shape, b.shape
    return _make("add", a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("sub", a, b)
    sa, sb = a.shape, b.shape
    return _make("sub", a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, sa), -_unbroadcast(g, sb)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("mul", a, b)
    ad, bd = a.data, b.data
    return _make("mul", ad * bd, (a, b),
                 lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)))


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("div", a, b)
    ad, bd = a.data, b.data
    out = ad / bd

    def vjp(g):
        return _unbroadcast(g / bd, ad.shape), _unbroadcast(-g * out / bd, bd.shape)

    return _make("div", out, (a, b), vjp)


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _make("neg", -a.data, (a,), lambda g: (-g,))


def scale(a, s: float) -> Tensor:
    """Multiply by a python scalar."""
    a = as_tensor(a)
    return _make("scale", a.data * s, (a,), lambda g: (g * s,))


def power(a, p: float) -> Tensor:
    a = as_tensor(a)
    ad = a.data
    return _make("power", ad ** p, (a,), lambda g: (g * p * ad ** (p - 1),))


def square(a) -> Tensor:
    a = as_tensor(a)
    ad = a.data
    return _make("square", ad * ad, (a,), lambda g: (2.0 * g * ad,))


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    out = np.sqrt(a.data)
    return _make("sqrt", out, (a,), lambda g: (0.5 * g / out,))


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return _make("exp", out, (a,), lambda g: (g * out,))


def log(a) -> Tensor:
    a = as_tensor(a)
    ad = a.data
    return _make("log", np.log(ad), (a,), lambda g: (g / ad,))


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.data)
    return _make("tanh", out, (a,), lambda g: (g * (1.0 - out * out),))


def abs(a) -> Tensor:  # noqa: A001 - mirrors numpy naming
    """Absolute value; the subgradient at 0 is 0."""
    a = as_tensor(a)
    sign = np.sign(a.data)
    return _make("abs", np.abs(a.data), (a,), lambda g: (g * sign,))


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0
    return _make("relu", np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,))


def clamp_min(a, lo: float) -> Tensor:
    a = as_tensor(a)
    mask = a.data > lo
    return _make("clamp_min", np.where(mask, a.data, lo), (a,), lambda g: (g * mask,))


def silu(a) -> Tensor:
    a = as_tensor(a)
    x = a.data
    sig = 0.5 * (1.0 + np.tanh(0.5 * x))
    out = x * sig

    def vjp(g):
        return (g * (sig + x * sig * (1.0 - sig)),)

    return _make("silu", out, (a,), vjp)


# ---------------------------------------------------------------------------
# reductions and shape manipulation


def tsum(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    shape = a.shape
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _make("sum", np.asarray(out), (a,), vjp)


def mean(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    shape = a.shape
    out = a.data.mean(axis=axis, keepdims=keepdims)
    n = a.size / max(np.asarray(out).size, 1)

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / n, shape).copy(),)

    return _make("mean", np.asarray(out), (a,), vjp)


def l1_norm(a) -> Tensor:
    """Sum of absolute values, with sign(0) := 0 in the gradient."""
    a = as_tensor(a)
    sign = np.sign(a.data)
    return _make("l1_norm", np.asarray(np.abs(a.data).sum()), (a,), lambda g: (g * sign,))


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    old = a.shape
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot reshape {old} into {tuple(shape)}") from None
    return _make("reshape", out, (a,), lambda g: (g.reshape(old),))


def transpose(a, axes=None) -> Tensor:
    a = as_tensor(a)
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    inv = tuple(np.argsort(axes))
    return _make("transpose", a.data.transpose(axes), (a,), lambda g: (g.transpose(inv),))


def _is_basic_index(idx) -> bool:
    items = idx if isinstance(idx, tuple) else (idx,)
    return all(isinstance(i, (slice, int, type(None))) or i is Ellipsis for i in items)


def getitem(a, idx) -> Tensor:
    a = as_tensor(a)
    shape, dtype = a.shape, a.data.dtype
    basic = _is_basic_index(idx)

    def vjp(g):
        full = np.zeros(shape, dtype=dtype)
        if basic:
            full[idx] += g
        else:
            np.add.at(full, idx, g)
        return (full,)

    return _make("getitem", np.array(a.data[idx]), (a,), vjp)


def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = tuple(as_tensor(t) for t in tensors)
    if not ts:
        raise ShapeError("concat: empty tensor list")
    ax = axis % ts[0].ndim
    for t in ts[1:]:
        if t.ndim != ts[0].ndim or any(
            d1 != d2 for i, (d1, d2) in enumerate(zip(t.shape, ts[0].shape)) if i != ax
        ):
            raise ShapeError(f"concat: shapes {ts[0].shape} and {t.shape} differ off axis {ax}")
    sizes = [t.shape[ax] for t in ts]
    bounds = np.cumsum([0] + sizes)

    def vjp(g):
        return tuple(
            np.take(g, range(bounds[i], bounds[i + 1]), axis=ax) for i in range(len(ts))
        )

    return _make("concat", np.concatenate([t.data for t in ts], axis=ax), ts, vjp)


# ---------------------------------------------------------------------------
# linear algebra and network primitives


def matmul(a, b) -> Tensor:
    """Batched matrix product over the last two axes (both operands >= 2-D)."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    ad, bd = a.data, b.data

    def vjp(g):
        ga = g @ np.swapaxes(bd, -1, -2)
        gb = np.swapaxes(ad, -1, -2) @ g
        return _unbroadcast(ga, ad.shape), _unbroadcast(gb, bd.shape)

    return _make("matmul", ad @ bd, (a, b), vjp)


def softmax(a) -> Tensor:
    """Softmax over the last axis."""
    a = as_tensor(a)
    z = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=-1, keepdims=True)

    def vjp(g):
        return (out * (g - (g * out).sum(axis=-1, keepdims=True)),)

    return _make("softmax", out, (a,), vjp)


def layer_norm(a, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis to zero mean and unit variance (no affine)."""
    a = as_tensor(a)
    x = a.data
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv

    def vjp(g):
        gm = g.mean(axis=-1, keepdims=True)
        gx = (g * xhat).mean(axis=-1, keepdims=True)
        return (inv * (g - gm - xhat * gx),)

    return _make("layer_norm", xhat, (a,), vjp)


def conv2d(x, w, b=None, padding: int | None = None) -> Tensor:
    """Stride-1 2-D convolution with symmetric zero padding.

    x is (N, C, H, W), w is (O, C, k, k), b is (O,).  ``padding`` defaults to
    k // 2 so odd kernels preserve the spatial size.
    """
    x, w = as_tensor(x), as_tensor(w)
    if x.ndim != 4 or w.ndim != 4 or x.shape[1] != w.shape[1] or w.shape[2] != w.shape[3]:
        raise ShapeError(f"conv2d: incompatible input {x.shape} and kernel {w.shape}")
    n, c, hh, ww = x.shape
    o, _, k, _ = w.shape
    p = k // 2 if padding is None else padding
    xp = np.pad(x.data, ((0, 0), (0, 0), (p, p), (p, p))) if p else x.data
    ho, wo = xp.shape[2] - k + 1, xp.shape[3] - k + 1
    if ho < 1 or wo < 1:
        raise ShapeError(f"conv2d: kernel {w.shape} larger than padded input {xp.shape}")
    win = sliding_window_view(xp, (k, k), axis=(2, 3))  # n c ho wo k k
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, c * k * k)
    wmat = w.data.reshape(o, c * k * k)
    out = cols @ wmat.T
    if b is not None:
        b = as_tensor(b)
        if b.shape != (o,):
            raise ShapeError(f"conv2d: bias shape {b.shape} does not match {o} output channels")
        out = out + b.data
    out = out.reshape(n, ho, wo, o).transpose(0, 3, 1, 2)
    inputs = (x, w) if b is None else (x, w, b)

    def vjp(g):
        g2 = g.transpose(0, 2, 3, 1).reshape(n * ho * wo, o)
        gw = (g2.T @ cols).reshape(w.shape)
        gcols = (g2 @ wmat).reshape(n, ho, wo, c, k, k)
        gxp = np.zeros(xp.shape, dtype=xp.dtype)
        for i in range(k):
            for j in range(k):
                gxp[:, :, i:i + ho, j:j + wo] += gcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
        gx = gxp[:, :, p:p + hh, p:p + ww] if p else gxp
        grads = (gx, gw)
        if b is not None:
            grads = grads + (g2.sum(axis=0),)
        return grads

    return _make("conv2d", np.ascontiguousarray(out), inputs, vjp)


def avg_pool2d(x, k: int = 2) -> Tensor:
    x = as_tensor(x)
    n, c, h, w = x.shape
    if h % k or w % k:
        raise ShapeError(f"avg_pool2d: spatial shape {(h, w)} not divisible by {k}")
    out = x.data.reshape(n, c, h // k, k, w // k, k).mean(axis=(3, 5))

    def vjp(g):
        return (np.repeat(np.repeat(g, k, axis=2), k, axis=3) / (k * k),)

    return _make("avg_pool2d", out, (x,), vjp)


def upsample_nearest2d(x, k: int = 2) -> Tensor:
    x = as_tensor(x)
    n, c, h, w = x.shape
    out = np.repeat(np.repeat(x.data, k, axis=2), k, axis=3)

    def vjp(g):
        return (g.reshape(n, c, h, k, w, k).sum(axis=(3, 5)),)

    return _make("upsample_nearest2d", out, (x,), vjp)


# ---------------------------------------------------------------------------
# reverse pass


def backward(loss: Tensor) -> None:
    """Populate ``.grad`` on every leaf that requires a gradient, then clear the tape."""
    if loss.size != 1:
        raise ShapeError(f"backward: loss must be scalar, got shape {loss.shape}")
    tape = get_tape()
    node = loss._node
    if node is None or node.generation != tape.generation or loss._index >= len(tape.nodes) \
            or tape.nodes[loss._index] is not node:
        raise TapeError("backward: loss is not on the active tape (cleared or never recorded)")
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for i in range(loss._index, -1, -1):
        nd = tape.nodes[i]
        g = grads.pop(id(nd.out), None)
        if g is None:
            continue
        for inp, gi in zip(nd.inputs, nd.vjp(g)):
            if not inp.requires_grad or gi is None:
                continue
            if inp._node is None:
                inp.grad = gi.copy() if inp.grad is None else inp.grad + gi
            else:
                key = id(inp)
                grads[key] = grads[key] + gi if key in grads else gi
    for nd in tape.nodes:
        nd.out._node = None
    tape.clear()
