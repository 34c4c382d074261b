"""Small reverse-mode differentiation kernel over float64 numpy arrays.

Every continuous quantity in the package (features, attention maps, VLAD
parameters, similarity matrices) is a :class:`Tensor`. Operations executed
while a :class:`GradTape` is active are recorded in order, together with a
closure that maps the output gradient to input gradients; ``tape.gradient``
replays them in reverse.

Outside of a tape the same functions just compute values, which is what
inference and evaluation use.

Example::

    w = Tensor(np.ones((2, 2)), requires_grad=True)
    with GradTape() as tape:
        loss = reduce_sum(matmul(w, w))
    (dw,) = tape.gradient(loss, [w])
"""

from __future__ import annotations

import threading
from typing import Callable, Sequence

import numpy as np
from scipy.special import expit

L2_EPS = 1e-12

_state = threading.local()


class DomainError(ValueError):
    """Raised when an op is applied outside its mathematical domain."""


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible."""


class Tensor:
    """Immutable float64 array with an optional learnable flag."""

    __slots__ = ("data", "requires_grad", "name", "__weakref__")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.array(data, dtype=np.float64, copy=True)
        arr.setflags(write=False)
        self.data = arr
        self.requires_grad = requires_grad
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

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag}, requires_grad={self.requires_grad})"

    def __len__(self) -> int:
        return len(self.data)

    __array_priority__ = 1000

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __pow__(self, p):
        return pow(self, p)

    def __getitem__(self, index):
        return getitem(self, index)

    @property
    def T(self):
        return swapaxes(self, -1, -2)


class _Entry:
    __slots__ = ("out", "inputs", "backward")

    def __init__(self, out, inputs, backward):
        self.out = out
        self.inputs = inputs
        self.backward = backward


class GradTape:
    """Records executed ops so gradients can be replayed in reverse order.

    A tape is confined to the thread that opened it. Tapes nest: the
    innermost active tape records.
    """

    def __init__(self):
        self.entries: list[_Entry] = []
        self._tracked: dict[int, Tensor] = {}

    def __enter__(self) -> "GradTape":
        stack = _tape_stack()
        stack.append(self)
        return self

    def __exit__(self, *exc):
        stack = _tape_stack()
        stack.remove(self)
        return False

    def watch(self, t: Tensor) -> None:
        self._tracked[id(t)] = t

    def _is_tracked(self, t) -> bool:
        return isinstance(t, Tensor) and (t.requires_grad or id(t) in self._tracked)

    def _record(self, out: Tensor, inputs: tuple, backward: Callable) -> None:
        self._tracked[id(out)] = out
        self.entries.append(_Entry(out, inputs, backward))

    def gradient(self, target: Tensor, sources: Sequence[Tensor]) -> list[np.ndarray]:
        """Gradients of scalar ``target`` w.r.t. each source (zeros if unused)."""
        if target.size != 1:
            raise ShapeError(f"gradient target must be scalar, got shape {target.shape}")
        grads: dict[int, np.ndarray] = {id(target): np.ones_like(target.data)}
        for entry in reversed(self.entries):
            gout = grads.pop(id(entry.out), None)
            if gout is None:
                continue
            gins = entry.backward(gout)
            for t, g in zip(entry.inputs, gins):
                if g is None or not self._is_tracked(t):
                    continue
                key = id(t)
                if key in grads:
                    grads[key] = grads[key] + g
                else:
                    grads[key] = g
        return [grads.get(id(s), np.zeros_like(s.data)) for s in sources]


def _tape_stack() -> list[GradTape]:
    stack = getattr(_state, "stack", None)
    if stack is None:
        stack = []
        _state.stack = stack
    return stack


def _active_tape() -> GradTape | None:
    stack = getattr(_state, "stack", None)
    return stack[-1] if stack else None


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, inputs: tuple, backward: Callable) -> Tensor:
    # op results are fresh arrays, so skip the defensive copy in Tensor.__init__
    out = Tensor.__new__(Tensor)
    arr = np.asarray(data, dtype=np.float64)
    if arr is data and arr.base is not None:
        arr = arr.copy()
    arr.setflags(write=False)
    out.data = arr
    out.requires_grad = False
    out.name = None
    tape = _active_tape()
    if tape is not None and any(tape._is_tracked(t) for t in inputs):
        tape._record(out, inputs, backward)
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``g`` down to ``shape`` after numpy broadcasting."""
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _check_broadcast(a: Tensor, b: Tensor, op: str) -> tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None


# --- elementwise binary ---------------------------------------------------


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "add")
    return _make(a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "sub")
    return _make(a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "mul")
    return _make(a.data * b.data, (a, b),
                 lambda g: (_unbroadcast(g * b.data, a.shape),
                            _unbroadcast(g * a.data, b.shape)))


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "div")
    out = a.data / b.data

    def backward(g):
        ga = _unbroadcast(g / b.data, a.shape)
        gb = _unbroadcast(-g * out / b.data, b.shape)
        return ga, gb

    return _make(out, (a, b), backward)


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _make(-a.data, (a,), lambda g: (-g,))


def matmul(a, b) -> Tensor:
    """Matrix product with numpy batch semantics on leading dimensions."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: cannot multiply shapes {a.shape} and {b.shape}")
    try:
        out = np.matmul(a.data, b.data)
    except ValueError:
        raise ShapeError(f"matmul: cannot multiply shapes {a.shape} and {b.shape}") from None

    def backward(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _make(out, (a, b), backward)


# --- elementwise unary ----------------------------------------------------


def pow(x, p: float) -> Tensor:
    """``x ** p`` for a constant real exponent."""
    x = as_tensor(x)
    p = float(p)
    if not float(p).is_integer() and np.any(x.data < 0):
        raise DomainError(f"pow: negative base with fractional exponent {p}")
    out = np.power(x.data, p)
    return _make(out, (x,), lambda g: (g * p * np.power(x.data, p - 1.0),))


def exp(x) -> Tensor:
    x = as_tensor(x)
    out = np.exp(x.data)
    return _make(out, (x,), lambda g: (g * out,))


def log(x) -> Tensor:
    x = as_tensor(x)
    if np.any(x.data <= 0):
        raise DomainError("log: non-positive input")
    return _make(np.log(x.data), (x,), lambda g: (g / x.data,))


def sqrt(x) -> Tensor:
    x = as_tensor(x)
    if np.any(x.data < 0):
        raise DomainError("sqrt: negative input")
    out = np.sqrt(x.data)
    return _make(out, (x,), lambda g: (g * 0.5 / out,))


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    out = expit(x.data)
    return _make(out, (x,), lambda g: (g * out * (1.0 - out),))


def softplus(x) -> Tensor:
    """``log(1 + exp(x))``, evaluated without overflow."""
    x = as_tensor(x)
    out = np.logaddexp(0.0, x.data)
    return _make(out, (x,), lambda g: (g * expit(x.data),))


def clamp_min(x, lo: float) -> Tensor:
    x = as_tensor(x)
    keep = x.data > lo
    return _make(np.where(keep, x.data, lo), (x,), lambda g: (g * keep,))


def xlogx(x) -> Tensor:
    """``x * log(x)`` with the convention ``0 log 0 = 0``."""
    x = as_tensor(x)
    if np.any(x.data < 0):
        raise DomainError("xlogx: negative input")
    pos = x.data > 0
    safe = np.where(pos, x.data, 1.0)
    out = np.where(pos, x.data * np.log(safe), 0.0)
    tiny = np.finfo(np.float64).tiny
    return _make(out, (x,), lambda g: (g * (np.log(np.maximum(x.data, tiny)) + 1.0),))


# --- reductions -----------------------------------------------------------


def _norm_axis(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def reduce_sum(x, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    axes = _norm_axis(axis, x.ndim)
    out = x.data.sum(axis=axes, keepdims=keepdims)

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, x.shape).copy(),)

    return _make(out, (x,), backward)


def reduce_mean(x, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    axes = _norm_axis(axis, x.ndim)
    count = int(np.prod([x.shape[a] for a in axes])) if axes else 1
    return reduce_sum(x, axis=axes, keepdims=keepdims) * (1.0 / count)


def softmax(x, axis: int = -1) -> Tensor:
    """Softmax along ``axis`` with max-subtraction."""
    x = as_tensor(x)
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _make(out, (x,), backward)


def masked_logsumexp(x, mask, axis: int = -1) -> Tensor:
    """Log-sum-exp over entries where ``mask`` is true.

    Slices with no selected entry produce 0 and receive no gradient; callers
    are expected to give such slices zero weight.
    """
    x = as_tensor(x)
    mask = np.broadcast_to(np.asarray(mask, dtype=bool), x.shape)
    any_sel = mask.any(axis=axis, keepdims=True)
    xm = np.where(mask, x.data, -np.inf)
    m = np.where(any_sel, xm.max(axis=axis, keepdims=True), 0.0)
    e = np.where(mask, np.exp(np.where(mask, x.data - m, 0.0)), 0.0)
    s = e.sum(axis=axis, keepdims=True)
    s_safe = np.where(any_sel, s, 1.0)
    out = np.squeeze(np.where(any_sel, m + np.log(s_safe), 0.0), axis=axis)
    p = e / s_safe

    def backward(g):
        return (np.expand_dims(g, axis) * p,)

    return _make(out, (x,), backward)


def l2_normalize(x, axis: int = -1, eps: float = L2_EPS) -> Tensor:
    """``x / sqrt(sum(x**2) + eps)`` along ``axis``."""
    x = as_tensor(x)
    norm = np.sqrt((x.data * x.data).sum(axis=axis, keepdims=True) + eps)
    out = x.data / norm

    def backward(g):
        return ((g - out * (g * out).sum(axis=axis, keepdims=True)) / norm,)

    return _make(out, (x,), backward)


# --- shape ops ------------------------------------------------------------


def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    try:
        out = x.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot reshape {x.shape} into {shape}") from None
    return _make(out, (x,), lambda g: (g.reshape(x.shape),))


def swapaxes(x, a1: int, a2: int) -> Tensor:
    x = as_tensor(x)
    return _make(np.swapaxes(x.data, a1, a2), (x,), lambda g: (np.swapaxes(g, a1, a2),))


def getitem(x, index) -> Tensor:
    x = as_tensor(x)
    out = x.data[index]

    def backward(g):
        full = np.zeros_like(x.data)
        np.add.at(full, index, g)
        return (full,)

    return _make(out, (x,), backward)


def stack(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = tuple(as_tensor(t) for t in tensors)
    out = np.stack([t.data for t in ts], axis=axis)

    def backward(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(ts)))

    return _make(out, ts, backward)


def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = tuple(as_tensor(t) for t in tensors)
    out = np.concatenate([t.data for t in ts], axis=axis)
    bounds = np.cumsum([t.shape[axis] for t in ts])[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _make(out, ts, backward)


# --- finite differences ---------------------------------------------------


def numerical_gradient(f: Callable[[np.ndarray], float], x: np.ndarray,
                       h: float = 1e-5, indices: Sequence[int] | None = None) -> np.ndarray:
    """Central-difference gradient of scalar ``f`` at ``x``; uses forward values only.

    With ``indices`` (flat positions) only those entries are estimated and the
    rest are NaN.
    """
    x = np.array(x, dtype=np.float64, copy=True)
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    if indices is not None:
        gflat[:] = np.nan
    for i in (range(flat.size) if indices is None else indices):
        orig = flat[i]
        flat[i] = orig + h
        fp = f(x)
        flat[i] = orig - h
        fm = f(x)
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * h)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-12) -> float:
    """Largest absolute discrepancy relative to the larger gradient's max-norm."""
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    scale = max(np.abs(analytic).max(initial=0.0), np.abs(numeric).max(initial=0.0), floor)
    return float(np.abs(analytic - numeric).max(initial=0.0) / scale)


def check_gradients(fn: Callable[..., Tensor], params: Sequence[Tensor],
                    h: float = 1e-5, max_entries: int | None = None,
                    rng: np.random.Generator | None = None) -> list[float]:
    """Compare tape gradients of ``fn(*params)`` against central differences.

    ``fn`` must build a scalar from the given tensors. Returns one relative
    error per parameter. Tensors with more than ``max_entries`` elements are
    checked on a random subset of that many positions (drawn from ``rng``).
    """
    if rng is None:
        rng = np.random.default_rng(0)
    params = list(params)
    with GradTape() as tape:
        for p in params:
            tape.watch(p)
        out = fn(*params)
    grads = tape.gradient(out, params)
    errors = []
    for i, p in enumerate(params):
        def f(arr, i=i):
            args = [Tensor(arr) if j == i else q for j, q in enumerate(params)]
            return fn(*args).item()
        idx = None
        if max_entries is not None and p.size > max_entries:
            idx = np.sort(rng.choice(p.size, size=max_entries, replace=False))
        num = numerical_gradient(f, p.data, h, idx)
        if idx is None:
            errors.append(relative_error(grads[i], num))
        else:
            errors.append(relative_error(grads[i].reshape(-1)[idx], num.reshape(-1)[idx]))
    return errors


def is_finite(x: Tensor) -> bool:
    return bool(np.all(np.isfinite(x.data)))


__all__ = [
    "Tensor", "GradTape", "DomainError", "ShapeError", "L2_EPS", "as_tensor",
    "add", "sub", "mul", "div", "neg", "matmul", "pow", "exp", "log", "sqrt",
    "sigmoid", "softplus", "clamp_min", "xlogx", "reduce_sum", "reduce_mean",
    "softmax", "masked_logsumexp", "l2_normalize", "reshape", "swapaxes",
    "getitem", "stack", "concat", "numerical_gradient", "relative_error",
    "check_gradients", "is_finite",
]
