"""Dense float64 tensors of rank 0, 1 or 2.

Tensors are plain read-only ``numpy.ndarray`` values.  Every operation here
is pure: it returns a fresh array and never writes to its arguments.
"""
from __future__ import annotations

import math

import numpy as np

MAX_RANK = 2


class ShapeError(ValueError):
    """Operand shapes are incompatible or outside rank 0..2."""


class DomainError(ValueError):
    """An operand lies outside the mathematical domain of an operation."""


def tensor(data, shape=None) -> np.ndarray:
    """Build a read-only float64 tensor, optionally reshaping row-major."""
    arr = np.array(data, dtype=np.float64)
    if shape is not None:
        shape = tuple(int(d) for d in shape)
        if arr.size != int(np.prod(shape, dtype=np.int64)):
            raise ShapeError(f"{arr.size} values cannot fill shape {shape}")
        arr = arr.reshape(shape)
    check_shape(arr.shape)
    arr.flags.writeable = False
    return arr


def check_shape(shape) -> tuple:
    shape = tuple(shape)
    if len(shape) > MAX_RANK:
        raise ShapeError(f"rank {len(shape)} exceeds {MAX_RANK}")
    if any(d < 1 for d in shape):
        raise ShapeError(f"dims must be positive, got {shape}")
    return shape


def zeros(shape) -> np.ndarray:
    return tensor(np.zeros(check_shape(shape)))


def ones(shape) -> np.ndarray:
    return tensor(np.ones(check_shape(shape)))


def is_finite(x: np.ndarray) -> bool:
    return bool(np.all(np.isfinite(x)))


def to_literal(x: np.ndarray) -> dict:
    """Serialize to ``{"shape": [...], "data": [...]}`` (row-major)."""
    x = np.asarray(x, dtype=np.float64)
    return {"shape": list(x.shape), "data": [float(v) for v in x.ravel()]}


def from_literal(obj) -> np.ndarray:
    if not isinstance(obj, dict) or set(obj) != {"shape", "data"}:
        raise ValueError("tensor literal must have exactly the keys 'shape' and 'data'")
    shape = check_shape(obj["shape"])
    return tensor(obj["data"], shape)


def _same_shape(a, b, op):
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} differ")


def softplus(x):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 0:
        v = float(x)
        return np.float64(max(v, 0.0) + math.log1p(math.exp(-abs(v))))
    return np.logaddexp(0.0, x)


def sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 0:
        v = float(x)
        e = math.exp(-abs(v))
        return np.float64(1.0 / (1.0 + e) if v >= 0 else e / (1.0 + e))
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def exp(x):
    return np.exp(x)


def log(x):
    if np.any(np.asarray(x) <= 0):
        raise DomainError("log of a nonpositive entry")
    return np.log(x)


def neg(x):
    return -np.asarray(x)


def square(x):
    return np.square(x)


def add(a, b):
    _same_shape(a, b, "add")
    return np.add(a, b)


def sub(a, b):
    _same_shape(a, b, "sub")
    return np.subtract(a, b)


def mul(a, b):
    _same_shape(a, b, "mul")
    return np.multiply(a, b)


ELEMENTWISE = {
    "exp": exp,
    "log": log,
    "neg": neg,
    "square": square,
    "softplus": softplus,
    "sigmoid": sigmoid,
    "add": add,
    "sub": sub,
    "mul": mul,
}


def elementwise(op: str, *args):
    """Apply a named elementwise primitive, e.g. ``elementwise("add", a, b)``."""
    try:
        fn = ELEMENTWISE[op]
    except KeyError:
        raise ValueError(f"unknown elementwise op {op!r}") from None
    return fn(*args)


def matvec(w, x):
    w = np.asarray(w)
    x = np.asarray(x)
    if w.ndim != 2 or x.ndim != 1 or w.shape[1] != x.shape[0]:
        raise ShapeError(f"matvec: cannot multiply {w.shape} by {x.shape}")
    return w @ x


def matvec_t(w, y):
    """Transposed product ``w.T @ y``."""
    w = np.asarray(w)
    y = np.asarray(y)
    if w.ndim != 2 or y.ndim != 1 or w.shape[0] != y.shape[0]:
        raise ShapeError(f"matvec_t: cannot multiply {w.shape}^T by {y.shape}")
    return w.T @ y


def sum_all(x):
    return np.asarray(np.sum(x), dtype=np.float64)
