"""The closed vocabulary of deterministic graph operators.

Each :class:`Operator` carries its forward function, a shape rule, and the
metadata the precondition checker reasons with:

* ``domains`` -- per-argument value range the operator is defined and
  smooth on (one of the :data:`RANGES`);
* ``poly_growth`` -- output grows at most polynomially in the inputs
  while they stay inside ``domains``;
* ``out_range`` -- conservative output range given argument ranges.

Ranges form a chain ``unit < pos < nonneg < real`` where ``unit`` is the
open interval (0, 1).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import tensor as T
from .tensor import ShapeError

RANGES = ("unit", "pos", "nonneg", "real")
LOG_2PI = math.log(2.0 * math.pi)


def range_within(r: str, required: str) -> bool:
    return RANGES.index(r) <= RANGES.index(required)


def widest(*ranges: str) -> str:
    return max(ranges, key=RANGES.index)


def range_of(value) -> str:
    """Tightest range containing every entry of a concrete tensor."""
    v = np.asarray(value)
    if np.all((v > 0) & (v < 1)):
        return "unit"
    if np.all(v > 0):
        return "pos"
    if np.all(v >= 0):
        return "nonneg"
    return "real"


@dataclass(frozen=True)
class Operator:
    name: str
    arity: int
    forward: Callable
    shape: Callable
    domains: tuple = ()
    poly_growth: bool = True
    out_range: Callable = field(default=lambda *r: "real")
    # shapes drawn for finite-difference self-checks: rng -> list of shapes
    example_shapes: Optional[Callable] = None

    def domain(self, i: int) -> str:
        return self.domains[i] if self.domains else "real"


def _same(*shapes):
    if len(set(shapes)) != 1:
        raise ShapeError(f"operand shapes differ: {shapes}")
    return shapes[0]


def _any_shape(rng):
    kind = rng.integers(3)
    if kind == 0:
        return ()
    if kind == 1:
        return (int(rng.integers(1, 5)),)
    return (int(rng.integers(1, 4)), int(rng.integers(1, 4)))


def _unary_shapes(rng):
    return [_any_shape(rng)]


def _binary_shapes(rng):
    s = _any_shape(rng)
    return [s, s]


def _vec(rng):
    return (int(rng.integers(1, 5)),)


def _matvec_shape(w, x):
    if len(w) != 2 or len(x) != 1 or w[1] != x[0]:
        raise ShapeError(f"matvec: cannot multiply {w} by {x}")
    return (w[0],)


def _matvec_shapes(rng):
    m, n = int(rng.integers(1, 5)), int(rng.integers(1, 5))
    return [(m, n), (n,)]


def _reduce_same(*shapes):
    _same(*shapes)
    return ()


def _add_range(a, b):
    if a in ("unit", "pos") and b in ("unit", "pos", "nonneg"):
        return "pos"
    if b in ("unit", "pos") and a == "nonneg":
        return "pos"
    if a != "real" and b != "real":
        return "nonneg"
    return "real"


def _mul_range(a, b):
    if a == b == "unit":
        return "unit"
    if a in ("unit", "pos") and b in ("unit", "pos"):
        return "pos"
    if a != "real" and b != "real":
        return "nonneg"
    return "real"


def gauss_logpdf(z, mu, sigma):
    """log N(z; mu, diag(sigma^2)) summed over entries."""
    r = (z - mu) / sigma
    return np.asarray(-0.5 * np.sum(r * r) - np.sum(np.log(sigma)) - 0.5 * z.size * LOG_2PI)


def std_gauss_logpdf(z):
    return np.asarray(-0.5 * np.sum(z * z) - 0.5 * z.size * LOG_2PI)


def gauss_kl_std(mu, sigma):
    """KL(N(mu, diag sigma^2) || N(0, I)) in closed form."""
    s2 = sigma * sigma
    return np.asarray(-0.5 * np.sum(1.0 + np.log(s2) - mu * mu - s2))


def bce(x, p):
    """Bernoulli cross-entropy of probabilities ``p`` against targets ``x``."""
    return np.asarray(-np.sum(x * np.log(p) + (1.0 - x) * np.log1p(-p)))


OPERATORS = {
    op.name: op
    for op in [
        Operator("exp", 1, T.exp, lambda s: s, poly_growth=False,
                 out_range=lambda r: "pos", example_shapes=_unary_shapes),
        Operator("log", 1, T.log, lambda s: s, domains=("pos",), poly_growth=False,
                 example_shapes=_unary_shapes),
        Operator("neg", 1, T.neg, lambda s: s, example_shapes=_unary_shapes),
        Operator("square", 1, T.square, lambda s: s,
                 out_range=lambda r: "unit" if r == "unit" else ("pos" if r == "pos" else "nonneg"),
                 example_shapes=_unary_shapes),
        Operator("softplus", 1, T.softplus, lambda s: s,
                 out_range=lambda r: "pos", example_shapes=_unary_shapes),
        Operator("sigmoid", 1, T.sigmoid, lambda s: s,
                 out_range=lambda r: "unit", example_shapes=_unary_shapes),
        Operator("add", 2, T.add, _same, out_range=_add_range, example_shapes=_binary_shapes),
        Operator("sub", 2, T.sub, _same, example_shapes=_binary_shapes),
        Operator("mul", 2, T.mul, _same, out_range=_mul_range, example_shapes=_binary_shapes),
        Operator("matvec", 2, T.matvec, _matvec_shape,
                 out_range=lambda a, b: "nonneg" if a != "real" and b != "real" else "real",
                 example_shapes=_matvec_shapes),
        Operator("sum_all", 1, T.sum_all, lambda s: (),
                 out_range=lambda r: "pos" if r == "unit" else r,
                 example_shapes=_unary_shapes),
        Operator("gauss_logpdf", 3, gauss_logpdf, _reduce_same,
                 domains=("real", "real", "pos"),
                 example_shapes=lambda rng: [_vec(rng)] * 3),
        Operator("std_gauss_logpdf", 1, std_gauss_logpdf, _reduce_same,
                 example_shapes=lambda rng: [_vec(rng)]),
        Operator("gauss_kl_std", 2, gauss_kl_std, _reduce_same,
                 domains=("real", "pos"), out_range=lambda a, b: "nonneg",
                 example_shapes=lambda rng: [_vec(rng)] * 2),
        Operator("bce", 2, bce, _reduce_same, domains=("real", "unit"),
                 out_range=lambda a, b: "nonneg" if range_within(a, "nonneg") else "real",
                 example_shapes=lambda rng: [_vec(rng)] * 2),
    ]
}
