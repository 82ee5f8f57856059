"""Dense-tensor substrate with tape-based reverse-mode differentiation.

Everything learnable in this package runs through the ops defined here.
Values are numpy arrays (float32 for training and benchmarks, float64 for
verification work). Each differentiable op appends a record to the active
Graph; ``backward`` replays those records in exact reverse execution order,
accumulating gradients into every reachable tensor that requires them.
"""
from __future__ import annotations

import threading
from contextlib import contextmanager
from typing import Callable, Iterable, Sequence

import numpy as np

DEFAULT_DTYPE = np.float32


class ShapeError(ValueError):
    """Operand shapes violate an op's contract."""


class NumericalError(ArithmeticError):
    """An op produced non-finite values (overflow or invalid domain)."""


class Tensor:
    """Dense n-dimensional real array with optional gradient tracking.

    ``grad`` is allocated lazily on first accumulation and holds a buffer of
    identical shape. Gradients accumulate (add-into-grad) until explicitly
    zeroed by the caller.
    """

    __slots__ = ("data", "grad", "requires_grad", "_op")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(DEFAULT_DTYPE)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._op: str | None = None  # name of the producing record, None for leaves

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
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else _fail_item(self)

    def zero_grad(self) -> None:
        self.grad = None

    def accumulate_grad(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def backward(self) -> None:
        backward(self)

    # -- arithmetic sugar -------------------------------------------------

    def __add__(self, other):
        return add(self, _wrap(other, self.dtype))

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, _wrap(other, self.dtype))

    def __rsub__(self, other):
        return sub(_wrap(other, self.dtype), self)

    def __mul__(self, other):
        return mul(self, _wrap(other, self.dtype))

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, _wrap(other, self.dtype))

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None, keepdims=False):
        return reduce_sum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return reduce_mean(self, axis, keepdims)

    def max(self, axis=None, keepdims=False):
        return reduce_max(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, axes=None):
        return transpose(self, axes)

    def __repr__(self):
        grad = ", grad" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}{grad})"


def _fail_item(t: Tensor):
    raise ShapeError(f"item() requires a single-element tensor, got shape {t.shape}")


def _wrap(x, dtype) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype))


# -- graph / tape ---------------------------------------------------------


class Graph:
    """Ordered record of executed differentiable operations.

    Usable as a context manager to scope recording: records made inside the
    block are dropped when it exits, which is how the training loop bounds
    memory. A single Graph is single-writer; distinct Graphs are independent.
    """

    __slots__ = ("records",)

    def __init__(self):
        # each record: (output, inputs, backward_fn, name)
        self.records: list[tuple[Tensor, tuple[Tensor, ...], Callable, str]] = []

    def __len__(self) -> int:
        return len(self.records)

    def clear(self) -> None:
        self.records.clear()

    def __enter__(self) -> "Graph":
        _state.stack.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _state.stack.pop()


class _State(threading.local):
    def __init__(self):
        self.stack: list[Graph] = [Graph()]
        self.enabled = True


_state = _State()


def active_graph() -> Graph:
    return _state.stack[-1]


def grad_enabled() -> bool:
    return _state.enabled


@contextmanager
def no_grad():
    """Disable tape recording inside the block (inference / benchmarks)."""
    prev = _state.enabled
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = prev


def record(out: Tensor, inputs: Sequence[Tensor], backward_fn: Callable, name: str) -> Tensor:
    """Register a differentiable op on the active graph.

    ``backward_fn(grad_out)`` must return per-input gradient arrays (or None
    for inputs that need none), aligned with ``inputs``. Recording is skipped
    when grads are disabled or no input requires them.
    """
    if _state.enabled and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        out._op = name
        active_graph().records.append((out, tuple(inputs), backward_fn, name))
    return out


def backward(loss: Tensor, free_graph: bool = True) -> None:
    """Reverse-accumulate gradients of a scalar loss over the active graph.

    Visits records in exact reverse execution order. Every reachable tensor
    with ``requires_grad`` receives a populated ``grad`` (added into any
    existing buffer). By default the graph is cleared afterwards.
    """
    if loss.size != 1:
        raise ShapeError(f"backward requires a scalar loss, got shape {loss.shape}")
    graph = active_graph()
    adjoint: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    if loss.requires_grad and loss._op is None:
        loss.accumulate_grad(adjoint[id(loss)])
    for out, inputs, backward_fn, name in reversed(graph.records):
        g = adjoint.pop(id(out), None)
        if g is None:
            continue
        if out.requires_grad:
            out.accumulate_grad(g)
        for t, gt in zip(inputs, backward_fn(g)):
            if gt is None or not t.requires_grad:
                continue
            if t._op is None:  # leaf: write straight into .grad
                t.accumulate_grad(gt)
            else:
                prev = adjoint.get(id(t))
                adjoint[id(t)] = gt if prev is None else prev + gt
    if free_graph:
        graph.clear()


# -- helpers ---------------------------------------------------------------


def _broadcast_shape(sa: tuple, sb: tuple) -> tuple:
    try:
        return np.broadcast_shapes(sa, sb)
    except ValueError:
        raise ShapeError(f"shapes {sa} and {sb} are not broadcast-compatible") from None


def unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``g`` down to ``shape``, inverting numpy broadcasting."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _require_finite(arr: np.ndarray, op: str) -> np.ndarray:
    if not np.isfinite(arr).all():
        raise NumericalError(f"{op} produced non-finite values")
    return arr


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # stable in both tails: never evaluates exp of a large positive argument
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


# -- elementwise ops --------------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    _broadcast_shape(a.shape, b.shape)
    out = Tensor(a.data + b.data)
    return record(out, (a, b),
                  lambda g: (unbroadcast(g, a.shape), unbroadcast(g, b.shape)), "add")


def sub(a: Tensor, b: Tensor) -> Tensor:
    _broadcast_shape(a.shape, b.shape)
    out = Tensor(a.data - b.data)
    return record(out, (a, b),
                  lambda g: (unbroadcast(g, a.shape), unbroadcast(-g, b.shape)), "sub")


def mul(a: Tensor, b: Tensor) -> Tensor:
    _broadcast_shape(a.shape, b.shape)
    out = Tensor(a.data * b.data)
    return record(out, (a, b),
                  lambda g: (unbroadcast(g * b.data, a.shape),
                             unbroadcast(g * a.data, b.shape)), "mul")


def div(a: Tensor, b: Tensor) -> Tensor:
    _broadcast_shape(a.shape, b.shape)
    out = Tensor(_require_finite(a.data / b.data, "div"))
    return record(out, (a, b),
                  lambda g: (unbroadcast(g / b.data, a.shape),
                             unbroadcast(-g * a.data / (b.data * b.data), b.shape)), "div")


def neg(a: Tensor) -> Tensor:
    out = Tensor(-a.data)
    return record(out, (a,), lambda g: (-g,), "neg")


def exp(a: Tensor) -> Tensor:
    with np.errstate(over="raise"):
        try:
            val = np.exp(a.data)
        except FloatingPointError:
            raise NumericalError("exp overflow") from None
    out = Tensor(_require_finite(val, "exp"))
    return record(out, (a,), lambda g: (g * out.data,), "exp")


def expm1(a: Tensor) -> Tensor:
    with np.errstate(over="raise"):
        try:
            val = np.expm1(a.data)
        except FloatingPointError:
            raise NumericalError("expm1 overflow") from None
    out = Tensor(_require_finite(val, "expm1"))
    return record(out, (a,), lambda g: (g * (out.data + 1.0),), "expm1")


def absolute(a: Tensor) -> Tensor:
    out = Tensor(np.abs(a.data))
    return record(out, (a,), lambda g: (g * np.sign(a.data),), "abs")


def reciprocal(a: Tensor) -> Tensor:
    out = Tensor(_require_finite(1.0 / a.data, "reciprocal"))
    return record(out, (a,), lambda g: (-g * out.data * out.data,), "reciprocal")


def sqrt(a: Tensor) -> Tensor:
    out = Tensor(_require_finite(np.sqrt(a.data), "sqrt"))
    return record(out, (a,), lambda g: (g * 0.5 / out.data,), "sqrt")


def softplus(a: Tensor) -> Tensor:
    """log(1 + exp(a)), overflow-safe; tends to a for large a, exp(a) for small."""
    out = Tensor(np.logaddexp(np.zeros((), dtype=a.dtype), a.data))
    return record(out, (a,), lambda g: (g * _sigmoid(a.data),), "softplus")


def sigmoid(a: Tensor) -> Tensor:
    s = _sigmoid(a.data)
    out = Tensor(s)
    return record(out, (a,), lambda g: (g * s * (1.0 - s),), "sigmoid")


def expm1_ratio(a: Tensor) -> Tensor:
    """expm1(a) / a with the removable singularity at 0 filled by its limit.

    Used by the zero-order-hold discretization; the small-|a| branch keeps
    both value and derivative accurate where the direct quotient cancels.
    """
    z = a.data
    small = np.abs(z) < 1e-6
    zs = np.where(small, 0.0, z)
    with np.errstate(over="raise", invalid="ignore"):
        try:
            direct = np.expm1(zs) / np.where(small, 1.0, zs)
        except FloatingPointError:
            raise NumericalError("expm1_ratio overflow") from None
    val = np.where(small, 1.0 + z / 2.0 + z * z / 6.0, direct)
    out = Tensor(_require_finite(val, "expm1_ratio"))

    def bwd(g):
        # d/dz[(e^z-1)/z] = (e^z (z-1) + 1) / z^2; series below the
        # cancellation threshold: 1/2 + z/3 + z^2/8
        s = np.abs(z) < 1e-3
        zsafe = np.where(s, 1.0, z)
        dd = (np.exp(zsafe) * (zsafe - 1.0) + 1.0) / (zsafe * zsafe)
        d = np.where(s, 0.5 + z / 3.0 + z * z / 8.0, dd)
        return (g * d,)

    return record(out, (a,), bwd, "expm1_ratio")


_ELEMENTWISE = {
    "add": add,
    "sub": sub,
    "mul": mul,
    "div": div,
    "neg": neg,
    "exp": exp,
    "expm1": expm1,
    "abs": absolute,
    "reciprocal": reciprocal,
    "sqrt": sqrt,
}


def elementwise(tag: str, a: Tensor, b: Tensor | None = None) -> Tensor:
    """Dispatch an elementwise op by tag (binary tags require ``b``)."""
    fn = _ELEMENTWISE.get(tag)
    if fn is None:
        raise ValueError(f"unknown elementwise tag {tag!r}")
    return fn(a, b) if b is not None else fn(a)


# -- contraction / convolution ----------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """a[..., M, K] @ b[K, P]; the right operand is a plain weight matrix."""
    if b.ndim != 2:
        raise ShapeError(f"matmul weight must be rank 2, got shape {b.shape}")
    if a.ndim < 1 or a.shape[-1] != b.shape[0]:
        raise ShapeError(f"matmul inner dims disagree: {a.shape} x {b.shape}")
    out = Tensor(a.data @ b.data)

    def bwd(g):
        ga = g @ b.data.T
        if a.ndim == 1:
            gb = np.outer(a.data, g)
        else:  # contract every leading/batch axis down to (K, P)
            gb = a.data.reshape(-1, a.shape[-1]).T @ g.reshape(-1, g.shape[-1])
        return ga, gb

    return record(out, (a, b), bwd, "matmul")


def conv1d(x: Tensor, w: Tensor, bias: Tensor | None = None) -> Tensor:
    """Length-preserving cross-correlation with zero padding.

    x: (B, C_in, L), w: (C_out, C_in, K) with K odd, bias: (C_out,) optional.
    """
    B, C_in, L = x.shape
    C_out, C_in_w, K = w.shape
    if C_in_w != C_in:
        raise ShapeError(f"conv1d channel mismatch: input {C_in}, kernel {C_in_w}")
    if K % 2 == 0:
        raise ShapeError(f"conv1d kernel size must be odd for same padding, got {K}")
    if K > L:
        raise ShapeError(f"conv1d kernel size {K} exceeds signal length {L}")
    pad = K // 2
    xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad)))
    win = np.lib.stride_tricks.sliding_window_view(xp, K, axis=2)  # (B, C_in, L, K)
    y = np.einsum("bclk,ock->bol", win, w.data)
    if bias is not None:
        y = y + bias.data[:, None]
    out = Tensor(y)
    inputs = (x, w) if bias is None else (x, w, bias)

    def bwd(g):
        gw = np.einsum("bclk,bol->ock", win, g)
        # dL/dx is a full convolution of g with the kernel flipped along K
        gp = np.pad(g, ((0, 0), (0, 0), (pad, pad)))
        gwin = np.lib.stride_tricks.sliding_window_view(gp, K, axis=2)  # (B, C_out, L, K)
        gx = np.einsum("bolk,ock->bcl", gwin, w.data[:, :, ::-1])
        if bias is None:
            return gx, gw
        return gx, gw, g.sum(axis=(0, 2))

    return record(out, inputs, bwd, "conv1d")


def depthwise_conv1d(x: Tensor, w: Tensor, bias: Tensor | None = None) -> Tensor:
    """Causal per-channel convolution: x (B, D, L), w (D, K), left pad K-1."""
    B, D, L = x.shape
    D_w, K = w.shape
    if D_w != D:
        raise ShapeError(f"depthwise_conv1d channel mismatch: input {D}, kernel {D_w}")
    if K > L:
        raise ShapeError(f"depthwise_conv1d kernel size {K} exceeds signal length {L}")
    xp = np.pad(x.data, ((0, 0), (0, 0), (K - 1, 0)))
    win = np.lib.stride_tricks.sliding_window_view(xp, K, axis=2)  # (B, D, L, K)
    y = np.einsum("bdlk,dk->bdl", win, w.data)
    if bias is not None:
        y = y + bias.data[:, None]
    out = Tensor(y)
    inputs = (x, w) if bias is None else (x, w, bias)

    def bwd(g):
        gw = np.einsum("bdlk,bdl->dk", win, g)
        gp = np.pad(g, ((0, 0), (0, 0), (0, K - 1)))
        gwin = np.lib.stride_tricks.sliding_window_view(gp, K, axis=2)
        gx = np.einsum("bdlk,dk->bdl", gwin, w.data[:, ::-1])
        if bias is None:
            return gx, gw
        return gx, gw, g.sum(axis=(0, 2))

    return record(out, inputs, bwd, "depthwise_conv1d")


# -- reductions ---------------------------------------------------------------


def _norm_axes(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def _check_nonempty(a: Tensor, axes) -> None:
    for ax in axes:
        if a.shape[ax] == 0:
            raise ShapeError(f"reduction over empty axis {ax} of shape {a.shape}")


def reduce_sum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axes(axis, a.ndim)
    _check_nonempty(a, axes)
    out = Tensor(a.data.sum(axis=axes, keepdims=keepdims))

    def bwd(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, a.shape).copy(),)

    return record(out, (a,), bwd, "sum")


def reduce_mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axes(axis, a.ndim)
    _check_nonempty(a, axes)
    count = int(np.prod([a.shape[ax] for ax in axes]))
    out = Tensor(a.data.mean(axis=axes, keepdims=keepdims))

    def bwd(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g / count, a.shape).copy(),)

    return record(out, (a,), bwd, "mean")


def reduce_max(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axes(axis, a.ndim)
    _check_nonempty(a, axes)
    val = a.data.max(axis=axes, keepdims=True)
    out = Tensor(val if keepdims else val.reshape(
        tuple(s for i, s in enumerate(a.shape) if i not in axes)))

    def bwd(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        mask = (a.data == val).astype(a.dtype)
        ties = mask.sum(axis=axes, keepdims=True)
        return (mask * (g / ties),)

    return record(out, (a,), bwd, "max")


# -- shape ops ----------------------------------------------------------------


def reshape(a: Tensor, shape: tuple) -> Tensor:
    out = Tensor(a.data.reshape(shape))
    return record(out, (a,), lambda g: (g.reshape(a.shape),), "reshape")


def transpose(a: Tensor, axes=None) -> Tensor:
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    inv = np.argsort(axes)
    out = Tensor(np.ascontiguousarray(a.data.transpose(axes)))
    return record(out, (a,), lambda g: (g.transpose(inv),), "transpose")


def swapaxes(a: Tensor, i: int, j: int) -> Tensor:
    axes = list(range(a.ndim))
    axes[i], axes[j] = axes[j], axes[i]
    return transpose(a, tuple(axes))


# -- loss ---------------------------------------------------------------------


def softmax_cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean over the batch of -log softmax(logits)[label], max-stabilized."""
    labels = np.asarray(labels)
    if logits.ndim != 2:
        raise ShapeError(f"logits must be (B, K), got {logits.shape}")
    B, K = logits.shape
    if labels.shape != (B,):
        raise ShapeError(f"labels must have shape ({B},), got {labels.shape}")
    if labels.min() < 0 or labels.max() >= K:
        raise ValueError(f"label out of range [0, {K})")
    z = logits.data
    zmax = z.max(axis=1, keepdims=True)
    shifted = z - zmax
    lse = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    logp = shifted - lse
    out = Tensor(np.asarray(-logp[np.arange(B), labels].mean(), dtype=logits.dtype))

    def bwd(g):
        probs = np.exp(logp)
        probs[np.arange(B), labels] -= 1.0
        return (g * probs / B,)

    return record(out, (logits,), bwd, "softmax_cross_entropy")


def softmax(logits: np.ndarray) -> np.ndarray:
    """Plain (non-differentiable) stable softmax over the last axis."""
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)
