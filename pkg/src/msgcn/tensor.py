"""Dense float64 tensors with tape-based reverse-mode differentiation.

Operations executed while a :class:`Tape` is active are appended to it in
execution order; :meth:`Tape.backward` walks the record in reverse and
accumulates gradients into leaf tensors (parameters and any user tensor
created with ``requires_grad=True``).  Outside a tape, operations run as plain
numpy forward passes.
"""

from __future__ import annotations

import math
import threading
from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "DimensionError",
    "DomainError",
    "GradCheckError",
    "KinkError",
    "Tensor",
    "Parameter",
    "Tape",
    "tensor",
    "matmul",
    "add",
    "sub",
    "mul",
    "neg",
    "scale",
    "relu",
    "sigmoid",
    "tanh",
    "log",
    "absolute",
    "clamp",
    "square",
    "bias_add",
    "softmax_over_classes",
    "batch_norm",
    "BatchNormState",
    "reshape",
    "transpose",
    "concat",
    "getitem",
    "tensor_sum",
    "tensor_mean",
    "temporal_taps",
    "node_mix",
    "grad_check",
]


class DimensionError(ValueError):
    """Operand shapes are incompatible."""


class DomainError(ValueError):
    """An operation was evaluated outside its mathematical domain."""


class GradCheckError(RuntimeError):
    pass


class KinkError(GradCheckError):
    """A non-differentiable point lies within the finite-difference step."""


_local = threading.local()


def _active_tape() -> "Tape | None":
    stack = getattr(_local, "tapes", None)
    return stack[-1] if stack else None


class Tensor:
    """A float64 array plus the bookkeeping needed for differentiation."""

    __array_priority__ = 100

    def __init__(self, values, requires_grad: bool = False, name: str = ""):
        data = np.array(values, dtype=np.float64)
        if data.ndim == 0:
            data = data.reshape(())
        self.data = data
        self.requires_grad = requires_grad
        self.name = name
        self.grad: np.ndarray | None = None
        self._is_leaf = True

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data)

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{label})"

    # operator sugar
    def __add__(self, other):
        return add(self, _lift(other, self))

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, _lift(other, self))

    def __rsub__(self, other):
        return sub(_lift(other, self), self)

    def __mul__(self, other):
        if np.isscalar(other):
            return scale(self, float(other))
        return mul(self, other)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __truediv__(self, other):
        if not np.isscalar(other):
            raise TypeError("division is only defined by a scalar")
        return scale(self, 1.0 / float(other))

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)


class Parameter(Tensor):
    """A named trainable leaf tensor whose gradient is always allocated."""

    def __init__(self, values, name: str = ""):
        super().__init__(values, requires_grad=True, name=name)
        self.grad = np.zeros_like(self.data)

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data)

    def __repr__(self) -> str:
        return f"Parameter(name={self.name!r}, shape={self.shape})"


def tensor(values, requires_grad: bool = False) -> Tensor:
    return Tensor(values, requires_grad=requires_grad)


def _lift(value, like: Tensor) -> Tensor:
    if isinstance(value, Tensor):
        return value
    if np.isscalar(value):
        return Tensor(np.full(like.shape, float(value)))
    return Tensor(value)


def _as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


class _Record:
    __slots__ = ("output", "inputs", "backward")

    def __init__(self, output, inputs, backward):
        self.output = output
        self.inputs = inputs
        self.backward = backward


class Tape:
    """Ordered record of the differentiable operations of one forward pass.

    Use as a context manager; tapes nest per thread.  ``backward`` may be
    called once.
    """

    def __init__(self):
        self.records: list[_Record] = []
        self._consumed = False

    def __enter__(self) -> "Tape":
        stack = getattr(_local, "tapes", None)
        if stack is None:
            stack = _local.tapes = []
        stack.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _local.tapes.pop()

    def __len__(self) -> int:
        return len(self.records)

    def record(self, output: Tensor, inputs: Sequence[Tensor], backward: Callable) -> None:
        if self._consumed:
            raise RuntimeError("tape already consumed by backward(); run a new forward pass")
        self.records.append(_Record(output, tuple(inputs), backward))

    def backward(self, loss: Tensor, seed: np.ndarray | None = None) -> list[int]:
        """Propagate d(loss)/d(.) to every leaf that requires a gradient.

        Returns the indices of the visited records, in visiting order (the
        exact reverse of execution order).
        """
        if self._consumed:
            raise RuntimeError("backward() called twice on the same tape without a new forward pass")
        self._consumed = True
        if seed is None:
            if loss.data.size != 1:
                raise DimensionError(f"backward() needs a scalar loss, got shape {loss.shape}")
            seed = np.ones_like(loss.data)
        grads: dict[int, np.ndarray] = {id(loss): np.asarray(seed, dtype=np.float64)}
        if loss._is_leaf and loss.requires_grad:
            _accumulate_leaf(loss, grads.pop(id(loss)))
            return []
        visited = []
        for index in range(len(self.records) - 1, -1, -1):
            rec = self.records[index]
            g_out = grads.pop(id(rec.output), None)
            visited.append(index)
            if g_out is None:
                continue
            input_grads = rec.backward(g_out)
            for inp, g in zip(rec.inputs, input_grads):
                if g is None or not inp.requires_grad:
                    continue
                if inp._is_leaf:
                    _accumulate_leaf(inp, g)
                else:
                    key = id(inp)
                    if key in grads:
                        grads[key] = grads[key] + g
                    else:
                        grads[key] = g
        self.records.clear()
        return visited


def _accumulate_leaf(t: Tensor, g: np.ndarray) -> None:
    if g.shape != t.data.shape:
        raise DimensionError(f"gradient shape {g.shape} does not match {t.name or 'tensor'} shape {t.shape}")
    if t.grad is None:
        t.grad = np.array(g, dtype=np.float64)
    else:
        t.grad = t.grad + g


def _make(data: np.ndarray, inputs: Sequence[Tensor], backward: Callable) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.name = ""
    out.grad = None
    out._is_leaf = False
    out.requires_grad = any(t.requires_grad for t in inputs)
    tape = _active_tape()
    if out.requires_grad and tape is not None:
        tape.record(out, inputs, backward)
    elif out.requires_grad:
        # no tape: nothing will ever propagate through this value
        out.requires_grad = False
        out._is_leaf = True
    return out


def _check_same_shape(op: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape and a.data.size != 1 and b.data.size != 1:
        raise DimensionError(f"{op}: shapes {a.shape} and {b.shape} differ (no implicit broadcasting)")


def _reduce_to(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    return np.reshape(np.sum(g), shape)


# ---------------------------------------------------------------------------
# linear algebra


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """``a @ b`` for ``a`` of shape (..., m, k) and a 2-D ``b`` of shape (k, n)."""
    a, b = _as_tensor(a), _as_tensor(b)
    if b.ndim != 2 or a.ndim < 1 or a.shape[-1] != b.shape[0]:
        raise DimensionError(f"matmul: cannot multiply shapes {a.shape} and {b.shape}")
    out = a.data @ b.data

    def backward(g):
        ga = g @ b.data.T if a.requires_grad else None
        gb = None
        if b.requires_grad:
            k, n = b.shape
            gb = a.data.reshape(-1, k).T @ g.reshape(-1, n)
        return ga, gb

    return _make(out, (a, b), backward)


# ---------------------------------------------------------------------------
# elementwise


def add(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_same_shape("add", a, b)
    out = a.data + b.data
    return _make(out, (a, b), lambda g: (_reduce_to(g, a.shape), _reduce_to(g, b.shape)))


def sub(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_same_shape("sub", a, b)
    out = a.data - b.data
    return _make(out, (a, b), lambda g: (_reduce_to(g, a.shape), _reduce_to(-g, b.shape)))


def mul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_same_shape("mul", a, b)
    out = a.data * b.data

    def backward(g):
        return _reduce_to(g * b.data, a.shape), _reduce_to(g * a.data, b.shape)

    return _make(out, (a, b), backward)


def neg(x: Tensor) -> Tensor:
    return _make(-x.data, (x,), lambda g: (-g,))


def scale(x: Tensor, factor: float) -> Tensor:
    return _make(x.data * factor, (x,), lambda g: (g * factor,))


def _watch_kinks(values: np.ndarray) -> None:
    watch = getattr(_local, "kinks", None)
    if watch is not None and values.size:
        watch.append(float(np.min(np.abs(values))))


def relu(x: Tensor) -> Tensor:
    _watch_kinks(x.data)
    mask = x.data > 0
    return _make(np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,))


def sigmoid(x: Tensor) -> Tensor:
    out = 0.5 * (1.0 + np.tanh(0.5 * x.data))
    return _make(out, (x,), lambda g: (g * out * (1.0 - out),))


def tanh(x: Tensor) -> Tensor:
    out = np.tanh(x.data)
    return _make(out, (x,), lambda g: (g * (1.0 - out * out),))


def log(x: Tensor) -> Tensor:
    if np.any(x.data <= 0):
        bad = np.argwhere(x.data <= 0)[0]
        raise DomainError(f"log of non-positive value {x.data[tuple(bad)]!r} at index {tuple(int(i) for i in bad)}")
    return _make(np.log(x.data), (x,), lambda g: (g / x.data,))


def absolute(x: Tensor) -> Tensor:
    _watch_kinks(x.data)
    sign = np.sign(x.data)
    return _make(np.abs(x.data), (x,), lambda g: (g * sign,))


def square(x: Tensor) -> Tensor:
    return _make(x.data * x.data, (x,), lambda g: (2.0 * g * x.data,))


def clamp(x: Tensor, lower: float | None = None, upper: float | None = None) -> Tensor:
    """Clip into [lower, upper]; the gradient passes where the value was kept.

    At the boundary itself the input is kept, so the gradient is the
    unclamped one.
    """
    keep = np.ones(x.shape, dtype=bool)
    out = x.data
    if lower is not None:
        keep &= x.data >= lower
        out = np.maximum(out, lower)
    if upper is not None:
        keep &= x.data <= upper
        out = np.minimum(out, upper)
    return _make(np.array(out, dtype=np.float64), (x,), lambda g: (g * keep,))


def bias_add(x: Tensor, b: Tensor) -> Tensor:
    """Add a per-channel vector along the last axis of ``x``."""
    if b.ndim != 1 or x.shape[-1] != b.shape[0]:
        raise DimensionError(f"bias_add: bias shape {b.shape} does not match channel axis of {x.shape}")
    out = x.data + b.data
    axes = tuple(range(x.ndim - 1))
    return _make(out, (x, b), lambda g: (g, g.sum(axis=axes)))


def softmax_over_classes(x: Tensor) -> Tensor:
    """Row-wise softmax along the last axis, with max subtraction."""
    if x.shape[-1] < 1:
        raise DimensionError("softmax needs at least one class")
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        dot = np.sum(g * out, axis=-1, keepdims=True)
        return (out * (g - dot),)

    return _make(out, (x,), backward)


# ---------------------------------------------------------------------------
# batch normalisation


class BatchNormState:
    """Running mean/variance of a batch-norm layer (not trainable)."""

    def __init__(self, channels: int, momentum: float = 0.1, eps: float = 1e-5):
        self.mean = np.zeros(channels)
        self.var = np.ones(channels)
        self.momentum = momentum
        self.eps = eps


def batch_norm(x: Tensor, gamma: Tensor, beta: Tensor, state: BatchNormState,
               training: bool = True, axes: tuple[int, ...] | None = None) -> Tensor:
    """Normalise every channel (last axis) over ``axes`` (default: all others)."""
    channels = x.shape[-1]
    if gamma.shape != (channels,) or beta.shape != (channels,):
        raise DimensionError(f"batch_norm: gamma/beta {gamma.shape}/{beta.shape} vs {channels} channels")
    if axes is None:
        axes = tuple(range(x.ndim - 1))
    if training:
        mean = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        count = int(np.prod([x.shape[a] for a in axes]))
        unbiased = var * count / (count - 1) if count > 1 else var
        m = state.momentum
        state.mean = (1.0 - m) * state.mean + m * mean
        state.var = (1.0 - m) * state.var + m * unbiased
    else:
        mean, var = state.mean, state.var
        count = None
    inv_std = 1.0 / np.sqrt(var + state.eps)
    xhat = (x.data - mean) * inv_std
    out = gamma.data * xhat + beta.data

    def backward(g):
        g_gamma = np.sum(g * xhat, axis=axes)
        g_beta = np.sum(g, axis=axes)
        gxhat = g * gamma.data
        if training:
            gx = inv_std * (gxhat - gxhat.mean(axis=axes) - xhat * (gxhat * xhat).mean(axis=axes))
        else:
            gx = gxhat * inv_std
        return gx, g_gamma, g_beta

    return _make(out, (x, gamma, beta), backward)


# ---------------------------------------------------------------------------
# structural


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    out = x.data.reshape(shape)
    return _make(out, (x,), lambda g: (g.reshape(x.shape),))


def transpose(x: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))
    return _make(np.transpose(x.data, axes), (x,), lambda g: (np.transpose(g, inverse),))


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _make(out, tensors, backward)


def _is_basic_index(index) -> bool:
    items = index if isinstance(index, tuple) else (index,)
    return all(isinstance(i, (slice, int, type(Ellipsis))) or i is None for i in items)


def getitem(x: Tensor, index) -> Tensor:
    out = np.array(x.data[index], dtype=np.float64)
    basic = _is_basic_index(index)

    def backward(g):
        full = np.zeros_like(x.data)
        if basic:
            full[index] += g
        else:
            np.add.at(full, index, g)
        return (full,)

    return _make(out, (x,), backward)


def tensor_sum(x: Tensor, axis=None) -> Tensor:
    out = np.asarray(x.data.sum(axis=axis), dtype=np.float64)

    def backward(g):
        if axis is None:
            return (np.full(x.shape, float(g)),)
        return (np.broadcast_to(np.expand_dims(g, axis), x.shape).copy(),)

    return _make(out, (x,), backward)


def tensor_mean(x: Tensor, axis=None) -> Tensor:
    count = x.data.size if axis is None else int(np.prod([x.shape[a] for a in np.atleast_1d(axis)]))
    return scale(tensor_sum(x, axis=axis), 1.0 / count)


def temporal_taps(x: Tensor, offsets: Sequence[int]) -> Tensor:
    """Stack time-shifted copies of ``x`` along the channel axis.

    Block ``i`` of the output holds ``x[t + offsets[i]]`` along axis 0, with
    zeros wherever that index falls outside ``[0, T)``.
    """
    T = x.shape[0]
    blocks = []
    for off in offsets:
        shifted = np.zeros_like(x.data)
        lo, hi = max(0, -off), min(T, T - off)
        if lo < hi:
            shifted[lo:hi] = x.data[lo + off:hi + off]
        blocks.append(shifted)
    out = np.concatenate(blocks, axis=-1)
    C = x.shape[-1]

    def backward(g):
        gx = np.zeros_like(x.data)
        for i, off in enumerate(offsets):
            lo, hi = max(0, -off), min(T, T - off)
            if lo < hi:
                gx[lo + off:hi + off] += g[lo:hi, ..., i * C:(i + 1) * C]
        return (gx,)

    return _make(out, (x,), backward)


def node_mix(a: Tensor, f: Tensor) -> Tensor:
    """Propagate features along nodes: ``out[t, i, c] = sum_j a[i, j] f[t, j, c]``."""
    if a.ndim != 2 or f.ndim != 3 or a.shape[1] != f.shape[1]:
        raise DimensionError(f"node_mix: adjacency {a.shape} incompatible with features {f.shape}")
    out = np.einsum("ij,tjc->tic", a.data, f.data)

    def backward(g):
        ga = np.einsum("tic,tjc->ij", g, f.data) if a.requires_grad else None
        gf = np.einsum("ij,tic->tjc", a.data, g) if f.requires_grad else None
        return ga, gf

    return _make(out, (a, f), backward)


# ---------------------------------------------------------------------------
# verification


def grad_check(fn: Callable[[], Tensor], params: Iterable[Tensor], step: float = 1e-5,
               max_entries: int | None = None, rng: np.random.Generator | None = None) -> float:
    """Largest |analytic - central difference| / max(1, |analytic|) over ``params``.

    Raises :class:`KinkError` when a ReLU or absolute-value input of the
    forward pass lies within ten steps of zero.

    ``fn`` must rebuild the scalar loss from the current parameter values on
    every call.  ``max_entries`` caps the number of probed entries per
    parameter (sampled with ``rng``).
    """
    params = list(params)
    for p in params:
        p.grad = np.zeros_like(p.data)
    _local.kinks = []
    try:
        with Tape() as tape:
            loss = fn()
        closest = min(_local.kinks, default=math.inf)
    finally:
        _local.kinks = None
    if closest < 10 * step:
        raise KinkError(f"a ReLU/abs input lies {closest:.3g} from its kink; finite differences are invalid here")
    if not np.all(np.isfinite(loss.data)):
        raise GradCheckError(f"non-finite loss {loss.data!r}")
    tape.backward(loss)
    analytic = [p.grad.copy() for p in params]

    def value() -> float:
        out = fn().data
        if not np.all(np.isfinite(out)):
            raise GradCheckError(f"non-finite loss {out!r} during finite differencing")
        return float(out)

    worst = 0.0
    for p, a in zip(params, analytic):
        flat = p.data.reshape(-1)
        entries = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            rng = rng or np.random.default_rng(0)
            entries = rng.choice(flat.size, size=max_entries, replace=False)
        for i in entries:
            orig = flat[i]
            flat[i] = orig + step
            up = value()
            flat[i] = orig - step
            down = value()
            flat[i] = orig
            numeric = (up - down) / (2.0 * step)
            an = a.reshape(-1)[i]
            err = abs(an - numeric) / max(1.0, abs(an))
            if not math.isfinite(err):
                raise GradCheckError(f"non-finite gradient for {p.name or 'tensor'}[{i}]")
            worst = max(worst, err)
    return worst
