"""Dense tensors with reverse-mode differentiation.

Small numpy-backed engine: each operation records its parents and a gradient
closure; ``backward`` walks the graph once in reverse topological order and
accumulates gradients additively across fan-out. Two dtypes are supported,
float32 (training) and float64 (verification); binary operations require
matching dtypes. The only implicit broadcast is over leading batch axes
(the smaller operand must equal the trailing shape of the larger one) --
anything else needs an explicit reshape/repeat.

Every operation checks its output for NaN/Inf and raises NonFiniteError
naming the operation instead of letting bad values propagate.
"""

from __future__ import annotations

import math
from typing import Callable, Sequence

import numpy as np
from scipy.special import erf

_ALLOWED_DTYPES = (np.float32, np.float64)
_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)


class ShapeError(ValueError):
    """Operand shapes are incompatible with the requested operation."""


class NonFiniteError(ArithmeticError):
    """An operation produced NaN or Inf."""


def _ensure_finite(arr: np.ndarray, op: str) -> None:
    if not np.isfinite(arr).all():
        raise NonFiniteError(f"non-finite values produced by '{op}'")


class Tensor:
    """N-dimensional array participating in a differentiable graph.

    The graph is implicit: non-leaf tensors hold their parents and a
    closure computing parent gradients from the output gradient. A graph
    must stay on the thread that built it; the arrays themselves are
    value-semantic and safe to hand across threads.
    """

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_grad_fn", "_op")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in _ALLOWED_DTYPES:
            arr = arr.astype(np.float64)
        _ensure_finite(arr, "tensor")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._grad_fn: Callable | None = None
        self._op = "leaf"

    # -- construction helpers -------------------------------------------------

    @staticmethod
    def _from_op(data: np.ndarray, parents: Sequence["Tensor"],
                 grad_fn: Callable, op: str) -> "Tensor":
        _ensure_finite(data, op)
        out = Tensor.__new__(Tensor)
        out.data = data
        out.grad = None
        out._op = op
        if any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = tuple(parents)
            out._grad_fn = grad_fn
        else:
            out.requires_grad = False
            out._parents = ()
            out._grad_fn = None
        return out

    # -- basic properties ------------------------------------------------------

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

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype.name}, op={self._op})"

    # -- operator sugar ---------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_as_tensor(other, self.dtype), self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(_as_tensor(other, self.dtype), self)

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
        return tmean(self, axis=axis, keepdims=keepdims)

    def abs(self):
        return tabs(self)

    def reshape(self, shape):
        return reshape(self, shape)

    def transpose(self, axes=None):
        return transpose(self, axes)

    def backward(self) -> None:
        backward(self)


def _as_tensor(x, dtype) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype))


def _check_dtypes(a: Tensor, b: Tensor, op: str) -> None:
    if a.dtype != b.dtype:
        raise TypeError(f"dtype mismatch in '{op}': {a.dtype} vs {b.dtype}")


def _check_broadcast(sa: tuple, sb: tuple, op: str) -> None:
    """Allow equal shapes, scalars, or the smaller shape as a trailing suffix."""
    small, big = (sa, sb) if len(sa) <= len(sb) else (sb, sa)
    if big[len(big) - len(small):] != small:
        raise ShapeError(f"shapes {sa} and {sb} incompatible in '{op}' "
                         "(only leading-axis broadcast is supported)")


def _reduce_to(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum gradient over leading axes broadcast during the forward pass."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    return grad


# -- elementwise arithmetic ----------------------------------------------------


def add(a: Tensor, b) -> Tensor:
    b = _as_tensor(b, a.dtype)
    _check_dtypes(a, b, "add")
    _check_broadcast(a.shape, b.shape, "add")
    out_data = a.data + b.data

    def grad_fn(g):
        return _reduce_to(g, a.shape), _reduce_to(g, b.shape)

    return Tensor._from_op(out_data, (a, b), grad_fn, "add")


def sub(a: Tensor, b) -> Tensor:
    b = _as_tensor(b, a.dtype)
    _check_dtypes(a, b, "sub")
    _check_broadcast(a.shape, b.shape, "sub")
    out_data = a.data - b.data

    def grad_fn(g):
        return _reduce_to(g, a.shape), _reduce_to(-g, b.shape)

    return Tensor._from_op(out_data, (a, b), grad_fn, "sub")


def mul(a: Tensor, b) -> Tensor:
    b = _as_tensor(b, a.dtype)
    _check_dtypes(a, b, "mul")
    _check_broadcast(a.shape, b.shape, "mul")
    out_data = a.data * b.data

    def grad_fn(g):
        return _reduce_to(g * b.data, a.shape), _reduce_to(g * a.data, b.shape)

    return Tensor._from_op(out_data, (a, b), grad_fn, "mul")


def div(a: Tensor, b) -> Tensor:
    b = _as_tensor(b, a.dtype)
    _check_dtypes(a, b, "div")
    _check_broadcast(a.shape, b.shape, "div")
    with np.errstate(all="ignore"):
        out_data = a.data / b.data

    def grad_fn(g):
        ga = _reduce_to(g / b.data, a.shape)
        gb = _reduce_to(-g * a.data / (b.data * b.data), b.shape)
        return ga, gb

    return Tensor._from_op(out_data, (a, b), grad_fn, "div")


def neg(a: Tensor) -> Tensor:
    return Tensor._from_op(-a.data, (a,), lambda g: (-g,), "neg")


def power(a: Tensor, exponent: float) -> Tensor:
    exponent = float(exponent)
    with np.errstate(all="ignore"):
        out_data = a.data ** exponent

    def grad_fn(g):
        if exponent == 0.0:
            return (np.zeros_like(a.data),)
        return (g * exponent * a.data ** (exponent - 1.0),)

    return Tensor._from_op(out_data, (a,), grad_fn, "power")


def log(a: Tensor) -> Tensor:
    with np.errstate(all="ignore"):
        out_data = np.log(a.data)

    def grad_fn(g):
        return (g / a.data,)

    return Tensor._from_op(out_data, (a,), grad_fn, "log")


def exp(a: Tensor) -> Tensor:
    with np.errstate(all="ignore"):
        out_data = np.exp(a.data)

    def grad_fn(g):
        return (g * out_data,)

    return Tensor._from_op(out_data, (a,), grad_fn, "exp")


def sqrt(a: Tensor) -> Tensor:
    with np.errstate(all="ignore"):
        out_data = np.sqrt(a.data)

    def grad_fn(g):
        return (g * 0.5 / out_data,)

    return Tensor._from_op(out_data, (a,), grad_fn, "sqrt")


def tabs(a: Tensor) -> Tensor:
    out_data = np.abs(a.data)

    def grad_fn(g):
        return (g * np.sign(a.data),)

    return Tensor._from_op(out_data, (a,), grad_fn, "abs")


def clamp(a: Tensor, lo: float, hi: float) -> Tensor:
    out_data = np.clip(a.data, lo, hi)

    def grad_fn(g):
        inside = ((a.data >= lo) & (a.data <= hi)).astype(a.data.dtype)
        return (g * inside,)

    return Tensor._from_op(out_data, (a,), grad_fn, "clamp")


def gelu(a: Tensor) -> Tensor:
    """Exact Gaussian-error-linear unit: 0.5 * x * (1 + erf(x / sqrt(2)))."""
    cdf = 0.5 * (1.0 + erf(a.data * _INV_SQRT2))
    out_data = a.data * cdf

    def grad_fn(g):
        pdf = np.exp(-0.5 * a.data * a.data) * _INV_SQRT2PI
        return (g * (cdf + a.data * pdf),)

    return Tensor._from_op(out_data.astype(a.dtype, copy=False), (a,), grad_fn, "gelu")


# -- shape manipulation ----------------------------------------------------------


def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(int(s) for s in shape)
    out_data = a.data.reshape(shape)

    def grad_fn(g):
        return (g.reshape(a.shape),)

    return Tensor._from_op(out_data, (a,), grad_fn, "reshape")


def transpose(a: Tensor, axes=None) -> Tensor:
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    axes = tuple(int(x) for x in axes)
    inv = np.argsort(axes)
    out_data = a.data.transpose(axes)

    def grad_fn(g):
        return (g.transpose(inv),)

    return Tensor._from_op(out_data, (a,), grad_fn, "transpose")


def getitem(a: Tensor, idx) -> Tensor:
    """Basic (slice/int) indexing; advanced integer-array indexing is not supported."""
    out_data = a.data[idx]

    def grad_fn(g):
        full = np.zeros_like(a.data)
        full[idx] += g
        return (full,)

    return Tensor._from_op(out_data, (a,), grad_fn, "getitem")


def concat(parts: Sequence[Tensor], axis: int = 0) -> Tensor:
    parts = list(parts)
    if not parts:
        raise ShapeError("concat of zero tensors")
    first = parts[0]
    for p in parts[1:]:
        _check_dtypes(first, p, "concat")
        if p.ndim != first.ndim:
            raise ShapeError("concat rank mismatch")
        for ax in range(first.ndim):
            if ax != axis % first.ndim and p.shape[ax] != first.shape[ax]:
                raise ShapeError(f"concat extent mismatch on axis {ax}: "
                                 f"{p.shape} vs {first.shape}")
    out_data = np.concatenate([p.data for p in parts], axis=axis)
    sizes = [p.shape[axis % first.ndim] for p in parts]
    offsets = np.cumsum(sizes)[:-1]

    def grad_fn(g):
        return tuple(np.split(g, offsets, axis=axis))

    return Tensor._from_op(out_data, parts, grad_fn, "concat")


def repeat(a: Tensor, reps: int, axis: int) -> Tensor:
    """Explicit broadcast: repeat a length-1 axis `reps` times."""
    if a.shape[axis] != 1:
        raise ShapeError(f"repeat needs extent 1 on axis {axis}, got {a.shape}")
    out_data = np.repeat(a.data, reps, axis=axis)

    def grad_fn(g):
        return (g.sum(axis=axis, keepdims=True),)

    return Tensor._from_op(out_data, (a,), grad_fn, "repeat")


# -- reductions -------------------------------------------------------------------


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out_data = a.data.sum(axis=axis, keepdims=keepdims)

    def grad_fn(g):
        if axis is None:
            return (np.broadcast_to(g, a.shape).astype(a.data.dtype, copy=False).copy(),)
        gx = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(gx, a.shape).copy(),)

    return Tensor._from_op(np.asarray(out_data), (a,), grad_fn, "sum")


def tmean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    count = a.size if axis is None else a.shape[axis]
    out_data = a.data.mean(axis=axis, keepdims=keepdims)

    def grad_fn(g):
        if axis is None:
            return ((np.broadcast_to(g, a.shape) / count).astype(a.data.dtype, copy=False),)
        gx = g if keepdims else np.expand_dims(g, axis)
        return ((np.broadcast_to(gx, a.shape) / count).astype(a.data.dtype, copy=False),)

    return Tensor._from_op(np.asarray(out_data), (a,), grad_fn, "mean")


# -- linear algebra -----------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product; either operand may carry extra leading batch axes."""
    if not isinstance(b, Tensor):
        b = _as_tensor(b, a.dtype)
    _check_dtypes(a, b, "matmul")
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs rank >= 2 operands, got {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner extents differ: {a.shape} @ {b.shape}")
    la, lb = a.shape[:-2], b.shape[:-2]
    if la != lb and la != () and lb != ():
        raise ShapeError(f"matmul batch axes differ: {a.shape} @ {b.shape}")
    out_data = np.matmul(a.data, b.data)

    def grad_fn(g):
        ga = _reduce_to(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape)
        gb = _reduce_to(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape)
        return ga, gb

    return Tensor._from_op(out_data, (a, b), grad_fn, "matmul")


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """x @ w (+ b); b broadcasts over the leading axes of the product."""
    out = matmul(x, w)
    if b is not None:
        out = add(out, b)
    return out


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out_data = e / e.sum(axis=axis, keepdims=True)

    def grad_fn(g):
        dot = (g * out_data).sum(axis=axis, keepdims=True)
        return (out_data * (g - dot),)

    return Tensor._from_op(out_data, (a,), grad_fn, "softmax")


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Standardize the last axis (eps inside the square root), then affine."""
    _check_dtypes(x, gain, "layer_norm")
    _check_dtypes(x, bias, "layer_norm")
    d = x.shape[-1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise ShapeError(f"layer_norm affine shapes {gain.shape}/{bias.shape} "
                         f"do not match last axis {d}")
    mu = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv_std
    out_data = gain.data * xhat + bias.data

    def grad_fn(g):
        dxhat = g * gain.data
        gx = inv_std * (dxhat
                        - dxhat.mean(axis=-1, keepdims=True)
                        - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
        lead = tuple(range(g.ndim - 1))
        ggain = (g * xhat).sum(axis=lead) if lead else g * xhat
        gbias = g.sum(axis=lead) if lead else g.copy()
        return gx, ggain, gbias

    return Tensor._from_op(out_data, (x, gain, bias), grad_fn, "layer_norm")


# -- backward pass ---------------------------------------------------------------------


def backward(loss: Tensor) -> None:
    """Populate .grad on every requires_grad leaf reachable from a scalar loss."""
    if loss.data.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")

    topo: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))

    loss.grad = np.ones_like(loss.data)
    for node in reversed(topo):
        if node._grad_fn is None or node.grad is None:
            continue
        grads = node._grad_fn(node.grad)
        for parent, g in zip(node._parents, grads):
            if g is None or not parent.requires_grad:
                continue
            _ensure_finite(g, f"{node._op}.backward")
            parent.grad = g if parent.grad is None else parent.grad + g


def zero_grads(params: Sequence[Tensor]) -> None:
    for p in params:
        p.grad = None


def _central_difference_errors(f, params: Sequence[Tensor], step: float) -> list[np.ndarray]:
    """Per-coordinate relative error of reverse-mode vs central differences."""
    params = list(params)
    zero_grads(params)
    out = f(params)
    backward(out)
    analytic = [np.zeros_like(p.data) if p.grad is None else np.array(p.grad, copy=True)
                for p in params]

    errors = []
    for p, ana in zip(params, analytic):
        flat = p.data.reshape(-1)
        aflat = ana.reshape(-1)
        errs = np.empty(flat.size)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            f_plus = float(f(params).data)
            flat[i] = orig - step
            f_minus = float(f(params).data)
            flat[i] = orig
            numeric = (f_plus - f_minus) / (2.0 * step)
            denom = max(abs(numeric), abs(float(aflat[i])), 1e-8)
            errs[i] = abs(numeric - float(aflat[i])) / denom
        errors.append(errs)
    return errors


def gradcheck(f: Callable[[Sequence[Tensor]], Tensor],
              params: Sequence[Tensor],
              step: float = 1e-5) -> float:
    """Max relative error of reverse-mode gradients vs central differences.

    `f` must deterministically map the (mutated in place) params to a scalar
    Tensor. Relative error uses max(|analytic|, |numeric|, 1e-8) as the
    denominator.
    """
    return float(max(e.max(initial=0.0) for e in _central_difference_errors(f, params, step)))


def gradcheck_multi_step(f: Callable[[Sequence[Tensor]], Tensor],
                         params: Sequence[Tensor],
                         steps: Sequence[float] = (5e-4, 5e-5, 5e-6)) -> float:
    """gradcheck over a step ladder, scoring each coordinate by its best step.

    No single step suits every coordinate of a deep model: structurally-zero
    gradients (a key bias cancels inside softmax) need a large step so 1-ulp
    loss round-off stays under the denominator floor, while stiff coordinates
    need a small step to bound truncation. A wrong analytic gradient
    disagrees at every step, so the per-coordinate minimum filters only
    measurement noise, never a real defect.
    """
    params = list(params)
    best: list[np.ndarray] | None = None
    for step in steps:
        errs = _central_difference_errors(f, params, step)
        best = errs if best is None else [np.minimum(b, e) for b, e in zip(best, errs)]
    assert best is not None
    return float(max(e.max(initial=0.0) for e in best))
