"""Small graphs with known-good parameter values, used by the test harness.

Every corpus graph has at most two scalar Gaussian draws, so the
quadrature oracle evaluates it exactly (up to quadrature error).
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .graph import GraphBuilder, Scg
from .tensor import tensor


@dataclass(frozen=True)
class Case:
    name: str
    graph: Scg
    theta: dict


def gauss_mean() -> Case:
    """theta -> x ~ N(theta, 1) -> leaf x; the gradient is exactly 1."""
    return Case("gauss_mean", _leaf_x(), {"theta": tensor(0.7)})


def _leaf_x() -> Scg:
    b = GraphBuilder()
    b.input("theta")
    b.const("one", 1.0)
    b.gauss("x", "theta", "one")
    return b.build(params=["theta"])


def gauss_square() -> Case:
    """Leaf x^2 with x ~ N(theta, 1); the gradient is 2 theta."""
    b = GraphBuilder()
    b.input("theta")
    b.const("one", 1.0)
    b.gauss("x", "theta", "one")
    b.op("x2", "square", "x")
    return Case("gauss_square", b.build(params=["theta"]), {"theta": tensor(0.3)})


def scale_location() -> Case:
    """x ~ N(a, softplus(s)) with a sigmoid leaf and a pathwise leaf on a."""
    b = GraphBuilder()
    b.input("a")
    b.input("s")
    b.op("sigma", "softplus", "s")
    b.gauss("x", "a", "sigma")
    b.op("gate", "sigmoid", "x")
    b.op("a2", "square", "a")
    return Case("scale_location", b.build(params=["a", "s"]),
                {"a": tensor(0.4), "s": tensor(-0.2)})


def chain() -> Case:
    """Two chained draws: x1 ~ N(a, 1), x2 ~ N(x1 * w, softplus(a))."""
    b = GraphBuilder()
    b.input("a")
    b.input("w")
    b.const("one", 1.0)
    b.gauss("x1", "a", "one")
    b.op("m2", "mul", "x1", "w")
    b.op("s2", "softplus", "a")
    b.gauss("x2", "m2", "s2")
    b.op("out2", "sigmoid", "x2")
    b.op("out1", "softplus", "x1")
    return Case("chain", b.build(params=["a", "w"]),
                {"a": tensor(0.5), "w": tensor(-0.8)})


def vector_gauss() -> Case:
    """A length-2 Gaussian whose mean is a matrix-vector product."""
    b = GraphBuilder()
    b.input("W", (2, 2))
    b.input("v", (2,))
    b.const("c", np.array([1.0, -0.5]))
    b.op("mu", "matvec", "W", "c")
    b.op("sigma", "softplus", "v")
    b.gauss("z", "mu", "sigma")
    b.op("sp", "softplus", "z")
    b.op("total", "sum_all", "sp")
    return Case("vector_gauss", b.build(params=["W", "v"]),
                {"W": tensor([[0.3, -0.2], [0.1, 0.5]]), "v": tensor([0.2, -0.4])})


def mixed_inputs() -> Case:
    """Score and pathwise terms mixed, with a non-parameter input x."""
    b = GraphBuilder()
    b.input("x")
    b.input("t")
    b.op("mu", "mul", "x", "t")
    b.op("sigma", "softplus", "t")
    b.gauss("z", "mu", "sigma")
    b.op("zt", "mul", "z", "t")
    b.op("cost", "sigmoid", "zt")
    b.op("t2", "square", "t")
    return Case("mixed_inputs", b.build(params=["t"]),
                {"x": tensor(1.3), "t": tensor(0.6)})


def softplus_at_pi() -> Case:
    """Deterministic softplus of a parameter at pi; the gradient is sigmoid(pi)."""
    b = GraphBuilder()
    b.input("theta")
    b.op("y", "softplus", "theta")
    return Case("softplus_at_pi", b.build(params=["theta"]), {"theta": tensor(np.pi)})


def diamond() -> Case:
    """Deterministic diamond: softplus(t) * sigmoid(t)."""
    b = GraphBuilder()
    b.input("t")
    b.op("a", "softplus", "t")
    b.op("b", "sigmoid", "t")
    b.op("c", "mul", "a", "b")
    return Case("diamond", b.build(params=["t"]), {"t": tensor(-0.6)})


BUILDERS: dict[str, Callable[[], Case]] = {
    f.__name__: f for f in (gauss_mean, gauss_square, scale_location, chain,
                            vector_gauss, mixed_inputs, softplus_at_pi, diamond)
}


def corpus() -> list:
    return [f() for f in BUILDERS.values()]


def case(name: str) -> Case:
    return BUILDERS[name]()


def write_corpus(directory) -> list:
    """Write every case as ``<name>.graph.json`` / ``<name>.theta.json``,
    plus the naive VAE graphs at small and desk-scale sizes."""
    from pathlib import Path

    from .graph import dump_assignment, dump_graph
    from .sabotage import duplicate_id_graph, vector_leaf_graph
    from .train import VaeDims, build_naive_vae

    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    written = []
    extra = [Case("duplicate_id", *duplicate_id_graph()),
             Case("vector_leaf", *vector_leaf_graph())]
    for c in corpus() + extra:
        dump_graph(c.graph, d / f"{c.name}.graph.json")
        dump_assignment(c.theta, d / f"{c.name}.theta.json")
        written.append(c.name)
    for name, dims in (("vae_small", VaeDims(2, 2, 1)), ("vae_desk", VaeDims(784, 64, 2))):
        dump_graph(build_naive_vae(dims), d / f"{name}.graph.json")
        written.append(name)
    return written


if __name__ == "__main__":
    import sys

    if len(sys.argv) != 2:
        sys.exit("usage: python3 -m scgrad.corpus DIRECTORY")
    print("\n".join(write_corpus(sys.argv[1])))
