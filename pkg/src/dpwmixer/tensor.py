"""Dense float64 tensors with tape-based reverse-mode differentiation.

Operations executed while a :class:`Tape` is active, and whose inputs require
gradients, are recorded on that tape together with a backward rule. Calling
:meth:`Tape.backward` replays the records in reverse order and accumulates
gradients into the leaf tensors.

Outside a tape every operation is a plain numpy computation, which is what the
inference and finite-difference paths use.

Example
-------
>>> w = Tensor([1.0, -2.0], requires_grad=True)
>>> with Tape() as tape:
...     loss = sum_(w * w)
>>> tape.backward(loss)
>>> w.grad
array([ 2., -4.])
"""

from __future__ import annotations

import contextvars
import math
import os
from typing import Callable, Sequence

import numpy as np

from ._runtime import tune_allocator
from .errors import ContractError, DimensionError, DivergenceError

tune_allocator()

__all__ = [
    "Tensor",
    "Tape",
    "backward",
    "set_debug",
    "add",
    "sub",
    "mul",
    "mul_scalar",
    "matmul",
    "linear",
    "sum_",
    "mean",
    "transpose",
    "reshape",
    "slice_",
    "concat",
    "pad_replicate_tail",
    "layer_norm",
    "gelu",
    "softmax",
]

_DEBUG = os.environ.get("DPWMIXER_DEBUG", "") not in ("", "0")
_current_tape: contextvars.ContextVar["Tape | None"] = contextvars.ContextVar(
    "dpwmixer_tape", default=None
)


def set_debug(enabled: bool) -> None:
    """Toggle the non-finite output check on every forward op."""
    global _DEBUG
    _DEBUG = bool(enabled)


class Tensor:
    """Row-major float64 array with an optional gradient slot."""

    __slots__ = ("data", "requires_grad", "grad", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.array(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
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
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        tag = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{tag})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return mul_scalar(self, other)
        return mul(self, other)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __neg__(self):
        return mul_scalar(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


class _Record:
    __slots__ = ("inputs", "output", "backward_fn")

    def __init__(self, inputs, output, backward_fn):
        self.inputs = inputs
        self.output = output
        self.backward_fn = backward_fn


class Tape:
    """Ordered log of differentiable operations.

    Use as a context manager; operations run inside the ``with`` block are
    recorded. Tapes do not nest: entering a tape replaces the active one until
    the block exits.
    """

    def __init__(self):
        self.records: list[_Record] = []
        self._produced: set[int] = set()
        self._token = None

    def __enter__(self) -> "Tape":
        self._token = _current_tape.set(self)
        return self

    def __exit__(self, *exc) -> None:
        _current_tape.reset(self._token)
        self._token = None

    def __len__(self) -> int:
        return len(self.records)

    def _record(self, inputs, output, backward_fn) -> None:
        self.records.append(_Record(inputs, output, backward_fn))
        self._produced.add(id(output))

    def backward(self, loss: Tensor) -> None:
        """Populate ``.grad`` of every leaf reachable from scalar ``loss``.

        Gradients accumulate across calls; zero them between steps.
        """
        if not isinstance(loss, Tensor) or loss.size != 1:
            shape = getattr(loss, "shape", None)
            raise ContractError(f"backward needs a scalar loss, got shape {shape}")
        if id(loss) not in self._produced:
            raise ContractError("loss was not produced on this tape")

        pending: dict[int, tuple[Tensor, np.ndarray]] = {
            id(loss): (loss, np.ones_like(loss.data))
        }
        for rec in reversed(self.records):
            entry = pending.pop(id(rec.output), None)
            if entry is None:
                continue
            grads = rec.backward_fn(entry[1])
            for inp, g in zip(rec.inputs, grads):
                if g is None or not inp.requires_grad:
                    continue
                key = id(inp)
                if key in pending:
                    pending[key] = (inp, pending[key][1] + g)
                else:
                    pending[key] = (inp, g)
        # Anything left was never produced on this tape: a leaf.
        for tensor, g in pending.values():
            if id(tensor) in self._produced:
                continue
            if tensor.grad is None:
                tensor.grad = np.array(g, dtype=np.float64).reshape(tensor.shape)
            else:
                tensor.grad = tensor.grad + g


def backward(loss: Tensor, tape: Tape) -> None:
    tape.backward(loss)


# ---------------------------------------------------------------------------
# plumbing


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _finish(out_data: np.ndarray, inputs: Sequence[Tensor], backward_fn: Callable) -> Tensor:
    if _DEBUG and not np.all(np.isfinite(out_data)):
        raise DivergenceError("non-finite value produced by a forward op")
    tape = _current_tape.get()
    needs = tape is not None and any(t.requires_grad for t in inputs)
    out = Tensor.__new__(Tensor)
    out.data = out_data
    out.requires_grad = needs
    out.grad = None
    out.name = None
    if needs:
        tape._record(tuple(inputs), out, backward_fn)
    return out


def _colsum(m: np.ndarray) -> np.ndarray:
    """Column sums of a 2-d array; a BLAS matrix-vector product beats ``sum(axis=0)`` here."""
    return np.ones(m.shape[0]) @ m


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``g`` down to ``shape`` after numpy broadcasting."""
    if g.shape == shape:
        return g
    if shape and 1 not in shape and g.shape[g.ndim - len(shape):] == shape:
        size = math.prod(shape)
        return _colsum(g.reshape(-1, size)).reshape(shape)
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _check_broadcast(a: Tensor, b: Tensor, op: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast") from None


def _norm_axis(axis: int, ndim: int) -> int:
    if not -ndim <= axis < ndim:
        raise DimensionError(f"axis {axis} out of range for {ndim}-d tensor")
    return axis % ndim


# ---------------------------------------------------------------------------
# elementwise


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast(a, b, "add")
    sa, sb = a.shape, b.shape
    return _finish(a.data + b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast(a, b, "sub")
    sa, sb = a.shape, b.shape
    return _finish(a.data - b.data, (a, b), lambda g: (_unbroadcast(g, sa), -_unbroadcast(g, sb)))


def mul(a, b) -> Tensor:
    """Elementwise product with numpy broadcasting."""
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast(a, b, "mul")
    ad, bd = a.data, b.data

    def bw(g):
        ga = _unbroadcast(g * bd, ad.shape) if a.requires_grad else None
        gb = _unbroadcast(g * ad, bd.shape) if b.requires_grad else None
        return ga, gb

    return _finish(ad * bd, (a, b), bw)


def mul_scalar(a, s: float) -> Tensor:
    a = _as_tensor(a)
    s = float(s)
    return _finish(a.data * s, (a,), lambda g: (g * s,))


# ---------------------------------------------------------------------------
# linear algebra


def matmul(a, b) -> Tensor:
    """Matrix product over the last two axes, batched over leading axes.

    The common model case is ``a`` of shape ``(..., m, k)`` against a 2-d
    weight ``b`` of shape ``(k, n)``.
    """
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul: shapes {a.shape} and {b.shape} are not aligned")
    ad, bd = a.data, b.data
    try:
        if bd.ndim == 2 and ad.ndim > 2:
            # one large GEMM instead of a loop of small ones
            out = (ad.reshape(-1, bd.shape[0]) @ bd).reshape(ad.shape[:-1] + (bd.shape[1],))
        else:
            out = ad @ bd
    except ValueError:
        raise DimensionError(f"matmul: shapes {a.shape} and {b.shape} are not aligned") from None

    def bw(g):
        ga = gb = None
        if bd.ndim == 2:
            k, n = bd.shape
            g2 = g.reshape(-1, n)
            if a.requires_grad:
                ga = (g2 @ bd.T).reshape(ad.shape)
            if b.requires_grad:
                gb = ad.reshape(-1, k).T @ g2
            return ga, gb
        if a.requires_grad:
            ga = _unbroadcast(g @ np.swapaxes(bd, -1, -2), ad.shape)
        if b.requires_grad:
            gb = _unbroadcast(np.swapaxes(ad, -1, -2) @ g, bd.shape)
        return ga, gb

    return _finish(out, (a, b), bw)


def linear(x, w, b=None, transpose_w: bool = False) -> Tensor:
    """``x @ w + b`` over the last axis of ``x`` with a 2-d weight, as one recorded op.

    ``transpose_w`` multiplies by ``w.T`` instead (weights stored output-major).
    Fusing the bias saves a temporary and a broadcast reduction per layer.
    """
    x, w = _as_tensor(x), _as_tensor(w)
    b = None if b is None else _as_tensor(b)
    wd = w.data.T if transpose_w else w.data
    if w.ndim != 2 or x.ndim < 1 or x.shape[-1] != wd.shape[0]:
        raise DimensionError(f"linear: shapes {x.shape} and {w.shape} are not aligned")
    k, n = wd.shape
    if b is not None and b.shape != (n,):
        raise DimensionError(f"linear: bias {b.shape} does not match output width {n}")
    xd = x.data
    x2 = xd.reshape(-1, k)
    out = x2 @ wd
    if b is not None:
        out += b.data
    out = out.reshape(xd.shape[:-1] + (n,))

    def bw(g):
        g2 = g.reshape(-1, n)
        gx = (g2 @ wd.T).reshape(xd.shape) if x.requires_grad else None
        gw = None
        if w.requires_grad:
            gw = g2.T @ x2 if transpose_w else x2.T @ g2
        if b is None:
            return gx, gw
        return gx, gw, (_colsum(g2) if b.requires_grad else None)

    inputs = (x, w) if b is None else (x, w, b)
    return _finish(out, inputs, bw)


# ---------------------------------------------------------------------------
# reductions


def sum_(a, axis: int | None = None, keepdims: bool = False) -> Tensor:
    a = _as_tensor(a)
    shape = a.shape
    if axis is not None:
        axis = _norm_axis(axis, a.ndim)

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _finish(np.asarray(a.data.sum(axis=axis, keepdims=keepdims)), (a,), bw)


def mean(a, axis: int | None = None, keepdims: bool = False) -> Tensor:
    a = _as_tensor(a)
    n = a.size if axis is None else a.shape[_norm_axis(axis, a.ndim)]
    return mul_scalar(sum_(a, axis=axis, keepdims=keepdims), 1.0 / n)


# ---------------------------------------------------------------------------
# layout


def transpose(a, axes: Sequence[int] | None = None) -> Tensor:
    a = _as_tensor(a)
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    axes = tuple(_norm_axis(ax, a.ndim) for ax in axes)
    if sorted(axes) != list(range(a.ndim)):
        raise DimensionError(f"transpose: {axes} is not a permutation of {a.ndim} axes")
    inverse = tuple(np.argsort(axes))
    return _finish(np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inverse),))


def reshape(a, shape: Sequence[int]) -> Tensor:
    a = _as_tensor(a)
    old = a.shape
    try:
        out = a.data.reshape(tuple(shape))
    except ValueError:
        raise DimensionError(f"reshape: cannot view {old} as {tuple(shape)}") from None
    return _finish(out, (a,), lambda g: (g.reshape(old),))


def slice_(a, axis: int, start: int, stop: int) -> Tensor:
    """Contiguous ``[start, stop)`` slice along one axis."""
    a = _as_tensor(a)
    axis = _norm_axis(axis, a.ndim)
    n = a.shape[axis]
    if not 0 <= start < stop <= n:
        raise DimensionError(f"slice: [{start}, {stop}) out of range for axis of length {n}")
    index = [slice(None)] * a.ndim
    index[axis] = slice(start, stop)
    index = tuple(index)
    shape = a.shape

    def bw(g):
        full = np.zeros(shape)
        full[index] = g
        return (full,)

    return _finish(a.data[index], (a,), bw)


def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    if not tensors:
        raise DimensionError("concat: no tensors given")
    axis = _norm_axis(axis, tensors[0].ndim)
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as exc:
        shapes = [t.shape for t in tensors]
        raise DimensionError(f"concat: incompatible shapes {shapes}") from exc
    bounds = np.cumsum([0] + [t.shape[axis] for t in tensors])

    def bw(g):
        return tuple(np.take(g, range(bounds[i], bounds[i + 1]), axis=axis) for i in range(len(tensors)))

    return _finish(out, tensors, bw)


def pad_replicate_tail(a, target_len: int, axis: int = -1) -> Tensor:
    """Extend ``axis`` to ``target_len`` by repeating its last element.

    The gradient of every padded position is routed back onto that last
    source element.
    """
    a = _as_tensor(a)
    axis = _norm_axis(axis, a.ndim)
    n = a.shape[axis]
    if n < 1 or target_len < n:
        raise DimensionError(f"pad_replicate_tail: cannot pad length {n} to {target_len}")
    if target_len == n:
        return a
    last = np.take(a.data, [n - 1], axis=axis)
    reps = [1] * a.ndim
    reps[axis] = target_len - n
    out = np.concatenate([a.data, np.tile(last, reps)], axis=axis)

    def bw(g):
        head = np.take(g, range(n), axis=axis).copy()
        tail = np.take(g, range(n - 1, target_len), axis=axis).sum(axis=axis)
        idx = [slice(None)] * a.ndim
        idx[axis] = n - 1
        head[tuple(idx)] = tail
        return (head,)

    return _finish(out, (a,), bw)


# ---------------------------------------------------------------------------
# nonlinearities


def layer_norm(x, gain, bias, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then apply ``gain`` and ``bias``."""
    x, gain, bias = _as_tensor(x), _as_tensor(gain), _as_tensor(bias)
    d = x.shape[-1] if x.ndim else 0
    if d < 1 or gain.shape != (d,) or bias.shape != (d,):
        raise DimensionError(
            f"layer_norm: input {x.shape} needs gain/bias of shape ({d},), got {gain.shape} and {bias.shape}"
        )
    if eps <= 0:
        raise ContractError("layer_norm: eps must be positive")
    xd = x.data
    xhat = xd - xd.mean(axis=-1, keepdims=True)
    var = np.einsum("...i,...i->...", xhat, xhat)[..., None]
    var /= d
    var += eps
    inv_std = 1.0 / np.sqrt(var)
    xhat *= inv_std
    gd = gain.data

    def bw(g):
        gx = ggain = gbias = None
        if gain.requires_grad or bias.requires_grad:
            g2 = g.reshape(-1, d)
            ggain = _colsum(g2 * xhat.reshape(-1, d))
            gbias = _colsum(g2)
        if x.requires_grad:
            dxhat = g * gd
            m1 = dxhat.mean(axis=-1, keepdims=True)
            m2 = np.einsum("...i,...i->...", dxhat, xhat)[..., None]
            m2 /= d
            gx = dxhat
            gx -= m1
            gx -= xhat * m2
            gx *= inv_std
        return gx, ggain, gbias

    out = xhat * gd
    out += bias.data
    return _finish(out, (x, gain, bias), bw)


_GELU_C = math.sqrt(2.0 / math.pi)


def gelu(x) -> Tensor:
    """Tanh-approximated GELU."""
    x = _as_tensor(x)
    xd = x.data
    half = 0.5 * xd
    t = xd * xd
    t *= 0.044715 * _GELU_C
    t += _GELU_C
    t *= xd
    np.tanh(t, out=t)
    out = half * t
    out += half

    def bw(g):
        # d/dx = 0.5 (1 + t) + 0.5 x (1 - t^2) c (1 + 3k x^2)
        slope = xd * xd
        slope *= 3 * 0.044715 * _GELU_C
        slope += _GELU_C
        d = t * t
        np.subtract(1.0, d, out=d)
        d *= slope
        d *= half
        d += 0.5
        slope = np.multiply(t, 0.5, out=slope)
        d += slope
        d *= g
        return (d,)

    return _finish(out, (x,), bw)


def softmax(x, axis: int = -1) -> Tensor:
    x = _as_tensor(x)
    axis = _norm_axis(axis, x.ndim)
    e = np.exp(x.data - x.data.max(axis=axis, keepdims=True))
    y = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return _finish(y, (x,), bw)
