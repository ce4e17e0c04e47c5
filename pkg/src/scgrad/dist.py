"""Distributions with two denotations: an expectation functional and a sampler.

A :class:`Dist` is built from three constructors.  ``Det`` returns values
deterministically, ``Sample`` draws from a primitive distribution and
``Compose`` feeds the draw of one distribution into a function that
produces the next.  :func:`expect` evaluates expectations exactly enough
for verification by tensor-product Gauss-Hermite quadrature; :func:`run`
samples using an explicitly threaded :class:`Rng`.
"""
from __future__ import annotations

import contextlib
import contextvars
import itertools
import math
from dataclasses import dataclass
from typing import Callable, NamedTuple

import numpy as np

from .tensor import DomainError, ShapeError

MASK64 = (1 << 64) - 1
GOLDEN_GAMMA = 0x9E3779B97F4A7C15
STREAM_STRIDE = 0xA5A5A5A5A5A5A5A5

QUADRATURE_DEGREE = 20
QUADRATURE_BUDGET = 3


class OracleUnavailable(RuntimeError):
    """The quadrature oracle cannot evaluate this expectation.

    Raised for primitives without a quadrature rule or when the number of
    nested scalar variates exceeds the budget.  This is not a numerical
    failure; callers may fall back to Monte Carlo.
    """


def _splitmix(state: int) -> tuple[int, int]:
    state = (state + GOLDEN_GAMMA) & MASK64
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31), state


class Rng(NamedTuple):
    """SplitMix64 generator state; ``next`` returns a new state.

    ``draws`` counts uniforms consumed since the stream was created, which
    makes consumption auditable in tests.
    """

    state: int
    draws: int = 0

    @classmethod
    def stream(cls, seed: int, index: int = 0) -> "Rng":
        out, _ = _splitmix((seed ^ (index * STREAM_STRIDE)) & MASK64)
        return cls(out)

    def next(self) -> tuple[float, "Rng"]:
        out, state = _splitmix(self.state)
        # top 53 bits keep the result strictly below 1.0
        return (out >> 11) * 2.0**-53, Rng(state, self.draws + 1)

    def uniforms(self, n: int) -> tuple[list[float], "Rng"]:
        state = self.state
        out = []
        for _ in range(n):
            z, state = _splitmix(state)
            out.append((z >> 11) * 2.0**-53)
        return out, Rng(state, self.draws + n)


class PrimDist:
    """A primitive distribution: density, sampler and optional quadrature rule.

    ``sampler(rng)`` returns ``(tensor, rng)``.  ``quadrature(degree)``
    returns ``(points, weights)`` with weights summing to one, so that
    ``sum(w * f(p))`` approximates an expectation; primitives without a
    rule pass ``quadrature=None`` and are rejected by :func:`expect`.
    """

    __slots__ = ("family", "shape", "params", "support", "_pdf", "_sampler", "_quadrature")

    def __init__(self, family, shape, params, pdf, sampler, support="real", quadrature=None):
        self.family = family
        self.shape = tuple(shape)
        self.params = params
        self.support = support
        self._pdf = pdf
        self._sampler = sampler
        self._quadrature = quadrature

    @property
    def size(self) -> int:
        return int(np.prod(self.shape, dtype=np.int64))

    @property
    def has_quadrature(self) -> bool:
        return self._quadrature is not None

    def pdf(self, x) -> float:
        return self._pdf(x)

    def sampler(self, rng):
        return self._sampler(rng)

    def quadrature(self, degree):
        if self._quadrature is None:
            raise OracleUnavailable(f"no quadrature rule registered for {self.family!r}")
        return self._quadrature(degree)


def gauss_pdf(x, mu, sigma) -> float:
    x, mu, sigma = (np.asarray(a, dtype=np.float64) for a in (x, mu, sigma))
    z = (x - mu) / sigma
    return float(np.prod(np.exp(-0.5 * z * z) / (sigma * math.sqrt(2 * math.pi))))


def box_muller(n: int, rng: Rng) -> tuple[np.ndarray, Rng]:
    """``n`` standard normal variates from ``2 * ceil(n / 2)`` uniforms."""
    pairs = (n + 1) // 2
    u, rng = rng.uniforms(2 * pairs)
    out = []
    for k in range(pairs):
        r = math.sqrt(-2.0 * math.log(1.0 - u[2 * k]))
        theta = 2.0 * math.pi * u[2 * k + 1]
        out.append(r * math.cos(theta))
        out.append(r * math.sin(theta))
    return np.array(out[:n]), rng


_HERMITE = {}


def hermite_rule(degree: int) -> tuple[np.ndarray, np.ndarray]:
    """Nodes/weights for E[f(Z)], Z ~ N(0, 1)."""
    if degree not in _HERMITE:
        t, w = np.polynomial.hermite.hermgauss(degree)
        _HERMITE[degree] = (math.sqrt(2.0) * t, w / math.sqrt(math.pi))
    return _HERMITE[degree]


class Gauss(PrimDist):
    """Elementwise independent Gaussian; see :func:`gauss`."""

    __slots__ = ("mu", "sigma")

    def __init__(self, mu, sigma):
        self.family = "gauss"
        self.shape = mu.shape
        self.support = "real"
        self.mu = mu
        self.sigma = sigma

    @property
    def params(self):
        return {"mu": self.mu, "sigma": self.sigma}

    @property
    def has_quadrature(self) -> bool:
        return True

    def pdf(self, x) -> float:
        return gauss_pdf(x, self.mu, self.sigma)

    def sampler(self, rng):
        z, rng = box_muller(self.mu.size, rng)
        return self.mu + self.sigma * z.reshape(self.shape), rng

    def quadrature(self, degree):
        t, w = hermite_rule(degree)
        n = self.mu.size
        points, weights = [], []
        for idx in itertools.product(range(degree), repeat=n):
            idx = list(idx)
            points.append(self.mu + self.sigma * t[idx].reshape(self.shape))
            weights.append(float(np.prod(w[idx])))
        return points, weights


def gauss(mu, sigma) -> Gauss:
    """Elementwise independent Gaussian with means ``mu`` and std devs ``sigma``."""
    mu = np.asarray(mu, dtype=np.float64)
    sigma = np.asarray(sigma, dtype=np.float64)
    if mu.shape != sigma.shape:
        raise ShapeError(f"gauss: mu {mu.shape} and sigma {sigma.shape} differ")
    if sigma.ndim == 0:
        ok = 0.0 < float(sigma) < math.inf
    else:
        ok = bool(np.all((sigma > 0) & (sigma < np.inf)))
    if not ok:
        raise DomainError("gauss: sigma must be positive and finite")
    return Gauss(mu, sigma)


@dataclass(frozen=True)
class Family:
    """A parametric family usable by stochastic graph nodes."""

    name: str
    params: tuple
    domains: tuple
    make: Callable
    logpdf: Callable


def gauss_logpdf(x, mu, sigma) -> float:
    z = (np.asarray(x) - mu) / sigma
    return float(np.sum(-0.5 * z * z - np.log(sigma)) - 0.5 * np.size(x) * math.log(2 * math.pi))


FAMILIES = {
    "gauss": Family("gauss", ("mu", "sigma"), ("real", "pos"),
                    lambda p: gauss(p["mu"], p["sigma"]),
                    lambda x, p: gauss_logpdf(x, p["mu"], p["sigma"])),
}


class Dist:
    """Base class of the three distribution constructors."""

    __slots__ = ()


class Det(Dist):
    __slots__ = ("value",)

    def __init__(self, value: tuple):
        self.value = value

    def __repr__(self):
        return f"Det({self.value!r})"

    def _run(self, rng):
        return self.value, rng


class Sample(Dist):
    __slots__ = ("prim",)

    def __init__(self, prim: PrimDist):
        self.prim = prim

    def __repr__(self):
        return f"Sample({self.prim.family}{self.prim.shape})"

    def _run(self, rng):
        x, rng = self.prim.sampler(rng)
        return (x,), rng


class Compose(Dist):
    __slots__ = ("first", "rest")

    def __init__(self, first: Dist, rest: Callable[[tuple], Dist]):
        self.first = first
        self.rest = rest

    def __repr__(self):
        return f"Compose({self.first!r}, ...)"

    def _run(self, rng):
        xs, rng = self.first._run(rng)
        return self.rest(xs)._run(rng)


def det(*xs) -> Det:
    return Det(tuple(xs))


_active_dims = contextvars.ContextVar("active_dims", default=0)


@contextlib.contextmanager
def _claim_dims(k: int, budget: int):
    used = _active_dims.get() + k
    if used > budget:
        raise OracleUnavailable(
            f"quadrature needs {used} nested scalar variates, budget is {budget}")
    token = _active_dims.set(used)
    try:
        yield
    finally:
        _active_dims.reset(token)


def expect(d: Dist, f: Callable[[tuple], float], *, degree: int = QUADRATURE_DEGREE,
           budget: int = QUADRATURE_BUDGET):
    """Expectation of ``f`` under ``d``.

    ``f`` receives the tuple of tensors produced by ``d``.  It may return an
    array, in which case the expectation is taken componentwise.
    """
    if isinstance(d, Det):
        return f(d.value)
    if isinstance(d, Sample):
        p = d.prim
        if not p.has_quadrature:
            raise OracleUnavailable(f"no quadrature rule registered for {p.family!r}")
        with _claim_dims(p.size, budget):
            points, weights = p.quadrature(degree)
            total = 0.0
            for x, w in zip(points, weights):
                total = total + w * f((x,))
        return total
    if isinstance(d, Compose):
        return expect(d.first,
                      lambda xs: expect(d.rest(xs), f, degree=degree, budget=budget),
                      degree=degree, budget=budget)
    raise TypeError(f"not a distribution: {d!r}")


def run(d: Dist, rng: Rng) -> tuple[tuple, Rng]:
    """Draw one sample, returning ``(values, new_rng)``."""
    if not isinstance(d, Dist):
        raise TypeError(f"not a distribution: {d!r}")
    return d._run(rng)


def monte_carlo(d: Dist, f: Callable, n: int, rng: Rng) -> tuple[float, float, Rng]:
    """Sample mean and standard error of ``f`` over ``n`` runs of ``d``."""
    vals = np.empty(n)
    for i in range(n):
        xs, rng = run(d, rng)
        vals[i] = f(xs)
    return float(vals.mean()), float(vals.std(ddof=1) / math.sqrt(n)), rng
