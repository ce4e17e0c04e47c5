"""Deliberately broken fixtures that the verification harness must catch.

* ``softplus-grad``: softplus pullback returning ``adj / (1 + exp x)``,
  which is sigmoid(-x) rather than sigmoid(x).
* ``kl-sign``: closed-form KL built from the cross-entropy with the wrong
  sign on ``mu^2``.  Its pullback matches its own forward, so only an
  objective-level check can see it.
* duplicate node ids and a non-scalar leaf, as graphs.
"""
from __future__ import annotations

import numpy as np

from . import registry
from .graph import GraphBuilder, Node, Op
from .tensor import tensor


def buggy_softplus_pullback(inputs, out, adj, i):
    return adj / (1.0 + np.exp(inputs[0]))


def buggy_gauss_cross_entropy(mu, sigma) -> float:
    """Closed-form Gaussian cross-entropy with the ``sigma^2 - mu^2`` sign error."""
    mu = np.atleast_1d(np.asarray(mu, dtype=np.float64))
    sigma = np.atleast_1d(np.asarray(sigma, dtype=np.float64))
    return float(-0.5 * (np.sum(sigma**2 - mu**2) + mu.size * np.log(2 * np.pi)))


def buggy_kl_forward(mu, sigma):
    """KL(N(mu, sigma^2) || N(0, 1)) assembled from the buggy cross-entropy."""
    s2 = sigma * sigma
    return np.asarray(-0.5 * np.sum(1.0 + np.log(s2) + mu * mu - s2))


def buggy_kl_pullback(inputs, out, adj, i):
    mu, sigma = inputs
    if i == 0:
        return -adj * mu
    return adj * (sigma - 1.0 / sigma)


def sabotaged_registry(name: str) -> registry.Registry:
    """The default registry with one fault injected, bypassing self-checks."""
    base = registry.default_registry()
    if name == "softplus-grad":
        return base.patched(pullbacks={"softplus": buggy_softplus_pullback})
    if name == "kl-sign":
        return base.patched(forwards={"gauss_kl_std": buggy_kl_forward},
                            pullbacks={"gauss_kl_std": buggy_kl_pullback})
    raise KeyError(f"unknown sabotage {name!r}")


SABOTAGES = ("softplus-grad", "kl-sign")


def duplicate_id_graph() -> tuple:
    """A graph in which two nodes share the id ``x``."""
    b = GraphBuilder()
    b.input("theta")
    b.const("one", 1.0)
    b.gauss("x", "theta", "one")
    g = b.build(params=["theta"])
    dup = Node("x", (), ("theta",), Op("square"))
    return g.replace(nodes=g.nodes + (dup,)), {"theta": tensor(0.5)}


def vector_leaf_graph() -> tuple:
    """A graph whose only leaf is a length-2 vector."""
    b = GraphBuilder()
    b.input("theta", (2,))
    b.op("y", "softplus", "theta")
    return b.build(params=["theta"]), {"theta": tensor([0.1, -0.3])}
