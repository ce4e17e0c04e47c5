"""Registries of operator pullbacks and score functions.

A pullback has the signature ``pullback(inputs, output, adjoint, index)``
and returns the vector-Jacobian product of the operator with respect to
input ``index``.  A score function has the signature
``score(value, params, name)`` and returns the gradient of the log density
with respect to the distribution parameter ``name``.

Every registration runs a finite-difference self-check and is rejected if
the relative error exceeds :data:`SELF_CHECK_TOL`.  The default registry
is built once, frozen, and shared; :func:`use` swaps in another registry
for the duration of a ``with`` block (the sabotage corpus relies on this).
"""
from __future__ import annotations

import contextlib
import contextvars
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import dist
from .ops import OPERATORS, Operator

FD_STEP = 2.0**-17
SELF_CHECK_TOL = 1e-5
SELF_CHECK_TRIALS = 10
SCORE_MEAN_TOL = 1e-8


class RegistrationError(ValueError):
    """A pullback or score could not be registered."""


_DOMAIN_SAMPLERS = {
    "real": lambda rng, s: rng.uniform(-2.0, 2.0, s),
    "nonneg": lambda rng, s: rng.uniform(0.2, 2.0, s),
    "pos": lambda rng, s: rng.uniform(0.2, 2.0, s),
    "unit": lambda rng, s: rng.uniform(0.05, 0.95, s),
}


def random_inputs(op: Operator, rng: np.random.Generator) -> list:
    shapes = op.example_shapes(rng)
    return [np.asarray(_DOMAIN_SAMPLERS[op.domain(i)](rng, s), dtype=np.float64)
            for i, s in enumerate(shapes)]


def rel_error(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        return float("inf")
    diff = float(np.max(np.abs(a - b), initial=0.0))
    scale = max(float(np.max(np.abs(a), initial=0.0)), float(np.max(np.abs(b), initial=0.0)))
    return diff / scale if scale > 1e-10 else diff


def numeric_grad(fn: Callable[[np.ndarray], float], x: np.ndarray, h: float = FD_STEP):
    """Central differences of a scalar function of one array."""
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat, gflat = x.reshape(-1), g.reshape(-1)
    for k in range(flat.size):
        old = flat[k]
        flat[k] = old + h
        up = fn(x)
        flat[k] = old - h
        down = fn(x)
        flat[k] = old
        gflat[k] = (up - down) / (2 * h)
    return g


@dataclass
class GradCheck:
    name: str
    max_rel_err: float
    trials: int
    worst: Optional[dict] = None
    max_abs_mean: float = 0.0

    @property
    def passed(self) -> bool:
        return self.max_rel_err <= SELF_CHECK_TOL and self.max_abs_mean <= SCORE_MEAN_TOL


def check_pullback(op: Operator, pullback: Callable, trials: int = SELF_CHECK_TRIALS,
                   seed: int = 0, forward: Optional[Callable] = None) -> GradCheck:
    """Compare ``pullback`` with central differences of ``<adjoint, forward>``."""
    forward = forward or op.forward
    rng = np.random.default_rng(seed)
    worst, worst_err = None, 0.0
    for _ in range(trials):
        inputs = random_inputs(op, rng)
        out = np.asarray(forward(*inputs))
        adj = rng.uniform(-1.0, 1.0, out.shape)
        for i in range(op.arity):
            def phi(xi, i=i):
                args = list(inputs)
                args[i] = xi
                return float(np.sum(adj * forward(*args)))
            expected = numeric_grad(phi, inputs[i])
            got = pullback(inputs, out, adj, i)
            err = rel_error(got, expected)
            if not np.isfinite(err):
                err = float("inf")
            if worst is None or err > worst_err:
                worst_err, worst = err, {"input": i, "args": [a.tolist() for a in inputs]}
    return GradCheck(op.name, worst_err, trials, worst)


def check_score(family: dist.Family, score: Callable, trials: int = SELF_CHECK_TRIALS,
                seed: int = 0) -> GradCheck:
    """Finite-difference check of ``score`` against the family's log density,
    plus a quadrature check that each score has mean zero."""
    rng = np.random.default_rng(seed)
    worst_err, worst, worst_mean = 0.0, None, 0.0
    for _ in range(trials):
        n = int(rng.integers(1, 3))
        params = {p: _DOMAIN_SAMPLERS[d](rng, (n,)) for p, d in zip(family.params, family.domains)}
        x = rng.uniform(-2.0, 2.0, (n,))
        for name in family.params:
            def lp(v, name=name):
                return family.logpdf(x, {**params, name: v})
            err = rel_error(score(x, params, name), numeric_grad(lp, params[name]))
            mean = dist.expect(dist.Sample(family.make(params)),
                               lambda xs, name=name: score(xs[0], params, name))
            worst_mean = max(worst_mean, float(np.max(np.abs(mean))))
            if worst is None or not err <= worst_err:
                worst_err, worst = err, {"param": name, "x": x.tolist()}
    return GradCheck(family.name, worst_err, trials, worst, worst_mean)


@dataclass
class Registry:
    """Forward functions, pullbacks and scores available to graphs."""

    forwards: dict = field(default_factory=lambda: {k: op.forward for k, op in OPERATORS.items()})
    pullbacks: dict = field(default_factory=dict)
    scores: dict = field(default_factory=dict)
    frozen: bool = False

    def operator(self, name: str) -> Operator:
        try:
            return OPERATORS[name]
        except KeyError:
            raise KeyError(f"unknown operator {name!r}") from None

    def register_pullback(self, name: str, pullback: Callable, *, check: bool = True,
                          trials: int = SELF_CHECK_TRIALS) -> None:
        self._writable()
        op = self.operator(name)
        if name in self.pullbacks:
            raise RegistrationError(f"pullback for {name!r} already registered")
        if check:
            result = check_pullback(op, pullback, trials, forward=self.forwards[name])
            if not result.passed:
                raise RegistrationError(
                    f"pullback for {name!r} failed self-check: rel err {result.max_rel_err:.3g}")
        self.pullbacks[name] = pullback

    def register_score(self, family: str, score: Callable, *, check: bool = True,
                       trials: int = SELF_CHECK_TRIALS) -> None:
        self._writable()
        if family not in dist.FAMILIES:
            raise RegistrationError(f"unknown distribution family {family!r}")
        if family in self.scores:
            raise RegistrationError(f"score for {family!r} already registered")
        if check:
            result = check_score(dist.FAMILIES[family], score, trials)
            if not result.passed:
                raise RegistrationError(
                    f"score for {family!r} failed self-check: rel err {result.max_rel_err:.3g}, "
                    f"|mean| {result.max_abs_mean:.3g}")
        self.scores[family] = score

    def freeze(self) -> "Registry":
        self.frozen = True
        return self

    def patched(self, *, pullbacks=None, forwards=None) -> "Registry":
        """Copy with entries replaced without any self-check.

        Only meant for fault injection; normal code registers through
        :meth:`register_pullback`.
        """
        return Registry(forwards={**self.forwards, **(forwards or {})},
                        pullbacks={**self.pullbacks, **(pullbacks or {})},
                        scores=dict(self.scores), frozen=True)

    def _writable(self):
        if self.frozen:
            raise RegistrationError("registry is frozen")


_default: Optional[Registry] = None
_current = contextvars.ContextVar("registry", default=None)


def default_registry() -> Registry:
    global _default
    if _default is None:
        from .pullbacks import build_default
        _default = build_default().freeze()
    return _default


def current() -> Registry:
    reg = _current.get()
    return reg if reg is not None else default_registry()


@contextlib.contextmanager
def use(registry: Registry):
    token = _current.set(registry)
    try:
        yield registry
    finally:
        _current.reset(token)
