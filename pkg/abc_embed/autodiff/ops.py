"""Primitive operations and their adjoints.

The primitive set is closed: add, sub, scalar_mul, mul, matmul, exp, log,
selu, mean, l2_normalize, dot, masked_softmax, embedding and concat.
Binary elementwise primitives accept operands of equal shape, or one operand
whose shape is a trailing suffix of the other's (a shared leading batch).
"""

from __future__ import annotations

import math
from typing import Any, Callable, Sequence

import numpy as np

from abc_embed.autodiff.tensor import Tensor, as_tensor, grad_enabled
from abc_embed.core.errors import DomainError, ShapeError

# Canonical SELU constants (self-normalizing networks)
SELU_ALPHA = 1.6732632423543772848170429916717
SELU_LAMBDA = 1.0507009873554804934193349852946
# Symmetric subgradient at the kink, the value central differences converge to
SELU_KINK_SLOPE = 0.5 * (SELU_LAMBDA + SELU_LAMBDA * SELU_ALPHA)


class Primitive:
    """Forward rule plus vector-Jacobian product for one op kind."""

    def __init__(self, name: str, forward: Callable[..., np.ndarray], vjp: Callable[..., tuple]):
        self.name = name
        self.forward = forward
        self.vjp = vjp


PRIMITIVES: dict[str, Primitive] = {}


def primitive(name: str):
    def register(cls):
        PRIMITIVES[name] = Primitive(name, cls.forward, cls.vjp)
        return cls

    return register


def apply(name: str, *inputs: Any, **attrs: Any) -> Tensor:
    """Evaluate a primitive and record it when any input is tracked."""
    xs = tuple(as_tensor(x) for x in inputs)
    data = PRIMITIVES[name].forward(*(x.data for x in xs), **attrs)
    if not grad_enabled() or not any(x.tracked for x in xs):
        return Tensor(data)
    return Tensor(
        data,
        op=name,
        inputs=xs,
        attrs=attrs,
        tracked=True,
        requires_grad=any(x.requires_grad for x in xs),
    )


def _check_suffix(op: str, a: np.ndarray, b: np.ndarray) -> None:
    if a.shape == b.shape:
        return
    short, long_ = (a.shape, b.shape) if a.ndim < b.ndim else (b.shape, a.shape)
    if len(short) == 0 or long_[len(long_) - len(short):] != short:
        raise ShapeError(op, a.shape, b.shape)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    return grad


@primitive("add")
class Add:
    @staticmethod
    def forward(a, b):
        _check_suffix("add", a, b)
        return a + b

    @staticmethod
    def vjp(g, out, a, b):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)


@primitive("sub")
class Sub:
    @staticmethod
    def forward(a, b):
        _check_suffix("sub", a, b)
        return a - b

    @staticmethod
    def vjp(g, out, a, b):
        return _unbroadcast(g, a.shape), -_unbroadcast(g, b.shape)


@primitive("scalar_mul")
class ScalarMul:
    @staticmethod
    def forward(a, s):
        if s.shape != ():
            raise ShapeError("scalar_mul", a.shape, s.shape)
        return a * s

    @staticmethod
    def vjp(g, out, a, s):
        return g * s, np.asarray(np.sum(g * a))


@primitive("mul")
class Mul:
    @staticmethod
    def forward(a, b):
        _check_suffix("mul", a, b)
        return a * b

    @staticmethod
    def vjp(g, out, a, b):
        return _unbroadcast(g * b, a.shape), _unbroadcast(g * a, b.shape)


@primitive("matmul")
class MatMul:
    @staticmethod
    def forward(a, b, transpose_b=False):
        if a.ndim < 1 or b.ndim < 1 or (a.ndim == 1 and b.ndim == 1):
            raise ShapeError("matmul", a.shape, b.shape)
        if b.ndim == 1:
            if a.ndim != 2 or a.shape[-1] != b.shape[0]:
                raise ShapeError("matmul", a.shape, b.shape)
            return a @ b
        inner = b.shape[-1] if transpose_b else b.shape[-2]
        if a.shape[-1] != inner:
            raise ShapeError("matmul", a.shape, b.shape)
        if b.ndim > 2 and b.shape[:-2] != a.shape[: b.ndim - 2]:
            raise ShapeError("matmul", a.shape, b.shape)
        return np.matmul(a, np.swapaxes(b, -1, -2) if transpose_b else b)

    @staticmethod
    def vjp(g, out, a, b, transpose_b=False):
        if b.ndim == 1:
            return np.outer(g, b), a.T @ g
        bt = np.swapaxes(b, -1, -2) if transpose_b else b
        if a.ndim == 1:
            ga = np.matmul(g, np.swapaxes(bt, -1, -2))
            gbt = np.outer(a, g)
        else:
            ga = np.matmul(g, np.swapaxes(bt, -1, -2))
            gbt = np.matmul(np.swapaxes(a, -1, -2), g)
            if b.ndim == 2 and gbt.ndim > 2:
                gbt = gbt.reshape(-1, *gbt.shape[-2:]).sum(axis=0)
        gb = np.swapaxes(gbt, -1, -2) if transpose_b else gbt
        return ga, gb


@primitive("exp")
class Exp:
    @staticmethod
    def forward(a):
        return np.exp(a)

    @staticmethod
    def vjp(g, out, a):
        return (g * out,)


@primitive("log")
class Log:
    @staticmethod
    def forward(a):
        if np.any(a <= 0):
            raise DomainError(f"log of non-positive value (min {float(np.min(a))!r})")
        return np.log(a)

    @staticmethod
    def vjp(g, out, a):
        return (g / a,)


@primitive("selu")
class Selu:
    @staticmethod
    def forward(a):
        return SELU_LAMBDA * np.where(a > 0, a, SELU_ALPHA * np.expm1(np.minimum(a, 0.0)))

    @staticmethod
    def vjp(g, out, a):
        slope = np.where(a > 0, SELU_LAMBDA, SELU_LAMBDA * SELU_ALPHA * np.exp(np.minimum(a, 0.0)))
        slope = np.where(a == 0, SELU_KINK_SLOPE, slope)
        return (g * slope,)


@primitive("mean")
class Mean:
    @staticmethod
    def forward(a, axis, mask=None):
        if mask is None:
            return a.mean(axis=axis)
        w = np.expand_dims(mask.astype(np.float64), -1) if mask.ndim < a.ndim else mask.astype(np.float64)
        counts = w.sum(axis=axis)
        if np.any(counts == 0):
            raise DomainError("mean over an empty (fully masked) axis")
        return (a * w).sum(axis=axis) / counts

    @staticmethod
    def vjp(g, out, a, axis, mask=None):
        ax = axis % a.ndim
        if mask is None:
            return (np.broadcast_to(np.expand_dims(g, ax), a.shape) / a.shape[ax],)
        w = np.expand_dims(mask.astype(np.float64), -1) if mask.ndim < a.ndim else mask.astype(np.float64)
        counts = np.expand_dims(w.sum(axis=ax), ax)
        return (np.expand_dims(g, ax) * w / counts,)


@primitive("l2_normalize")
class L2Normalize:
    @staticmethod
    def forward(a):
        norm = np.sqrt(np.sum(a * a, axis=-1, keepdims=True))
        if np.any(norm == 0):
            raise DomainError("l2_normalize of a zero vector")
        return a / norm

    @staticmethod
    def vjp(g, out, a):
        norm = np.sqrt(np.sum(a * a, axis=-1, keepdims=True))
        return ((g - out * np.sum(g * out, axis=-1, keepdims=True)) / norm,)


@primitive("dot")
class Dot:
    @staticmethod
    def forward(a, b):
        if a.shape != b.shape:
            raise ShapeError("dot", a.shape, b.shape)
        return np.sum(a * b, axis=-1)

    @staticmethod
    def vjp(g, out, a, b):
        ge = np.expand_dims(g, -1)
        return ge * b, ge * a


@primitive("masked_softmax")
class MaskedSoftmax:
    @staticmethod
    def forward(a, mask):
        if mask.shape != a.shape:
            raise ShapeError("masked_softmax", a.shape, mask.shape)
        shifted = np.where(mask, a, -np.inf)
        peak = np.max(shifted, axis=-1, keepdims=True)
        peak = np.where(np.isfinite(peak), peak, 0.0)
        e = np.where(mask, np.exp(np.where(mask, a - peak, 0.0)), 0.0)
        total = e.sum(axis=-1, keepdims=True)
        return np.divide(e, total, out=np.zeros_like(e), where=total > 0)

    @staticmethod
    def vjp(g, out, a, mask):
        return (out * (g - np.sum(g * out, axis=-1, keepdims=True)),)


@primitive("embedding")
class Embedding:
    @staticmethod
    def forward(table, ids):
        return table[ids]

    @staticmethod
    def vjp(g, out, table, ids):
        grad = np.zeros_like(table)
        np.add.at(grad, ids, g)
        return (grad,)


@primitive("concat")
class Concat:
    @staticmethod
    def forward(*parts, axis=0):
        tails = {p.shape[:axis] + p.shape[axis + 1:] for p in parts}
        if len(tails) > 1:
            shapes = [p.shape for p in parts]
            raise ShapeError("concat", shapes[0], shapes[1])
        return np.concatenate(parts, axis=axis)

    @staticmethod
    def vjp(g, out, *parts, axis=0):
        bounds = np.cumsum([p.shape[axis] for p in parts])[:-1]
        return tuple(np.split(g, bounds, axis=axis))


def add(a, b) -> Tensor:
    return apply("add", a, b)


def sub(a, b) -> Tensor:
    return apply("sub", a, b)


def scalar_mul(a, s: float | Tensor) -> Tensor:
    return apply("scalar_mul", a, s if isinstance(s, Tensor) else Tensor(float(s)))


def mul(a, b) -> Tensor:
    return apply("mul", a, b)


def matmul(a, b, *, transpose_b: bool = False) -> Tensor:
    return apply("matmul", a, b, transpose_b=transpose_b)


def exp(a) -> Tensor:
    return apply("exp", a)


def log(a) -> Tensor:
    return apply("log", a)


def selu(a) -> Tensor:
    return apply("selu", a)


def mean(a, axis: int, mask: np.ndarray | None = None) -> Tensor:
    return apply("mean", a, axis=axis, mask=None if mask is None else np.asarray(mask, dtype=bool))


def l2_normalize(a) -> Tensor:
    return apply("l2_normalize", a)


def dot(a, b) -> Tensor:
    return apply("dot", a, b)


def masked_softmax(a, mask: np.ndarray) -> Tensor:
    return apply("masked_softmax", a, mask=np.asarray(mask, dtype=bool))


def embedding(table, ids: Sequence[int] | np.ndarray) -> Tensor:
    return apply("embedding", table, ids=np.asarray(ids, dtype=np.int64))


def concat(parts: Sequence[Tensor], axis: int = 0) -> Tensor:
    return apply("concat", *parts, axis=axis)


def inverse(a) -> Tensor:
    """1/a for positive ``a``, composed as exp(-log a)."""
    return exp(scalar_mul(log(a), -1.0))


def selu_value(x: float) -> float:
    """Scalar SELU, handy for hand-checked expectations."""
    return SELU_LAMBDA * (x if x > 0 else SELU_ALPHA * math.expm1(x))
