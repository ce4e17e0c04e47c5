"""Stochastic backpropagation.

Given one realized sample ``xs`` of every node value, both functions here
return a single gradient sample whose expectation is the gradient of the
expected cost.  Deterministic nodes pass adjoints to their parents through
registered pullbacks.  Each stochastic node contributes, to the parents
bound to its distribution parameters, the score of its sampled value
multiplied by the total cost of the sample.  No gradient flows through a
sampled value itself; pathwise gradients through sampling require the
reparameterization rewrite.

:func:`bprop_naive` differentiates one parameter by plain recursion over
paths.  :func:`bprop_memo` does one reverse sweep for many parameters and
must agree with the naive version.
"""
from __future__ import annotations

from typing import Mapping, Sequence

import numpy as np

from . import registry
from .graph import CONST, INPUT, GraphError, Scg, cost


def _validate(g: Scg, xs, params):
    if len(xs) != len(g.nodes):
        raise GraphError(f"expected {len(g.nodes)} node values, got {len(xs)}")
    for n, v in zip(g.nodes, xs):
        if np.shape(v) != n.shape:
            raise GraphError(f"value of {n.id!r} has shape {np.shape(v)}, declared {n.shape}")
    for p in params:
        if p not in g.params:
            raise GraphError(f"{p!r} is not a parameter of the graph")


def _pullback(reg, name):
    try:
        return reg.pullbacks[name]
    except KeyError:
        raise GraphError(f"no pullback registered for operator {name!r}") from None


def _score(reg, family):
    try:
        return reg.scores[family]
    except KeyError:
        raise GraphError(f"no score registered for family {family!r}") from None


def bprop_naive(g: Scg, theta: Mapping, xs: Sequence, param: str) -> np.ndarray:
    """Gradient sample for a single parameter, recomputing every path."""
    _validate(g, xs, [param])
    reg = registry.current()
    c = cost(g, xs)
    target = g.index[param]
    shape = g.nodes[target].shape

    def through(k: int, adj) -> np.ndarray:
        if k == target:
            return np.asarray(adj, dtype=np.float64)
        node = g.nodes[k]
        total = np.zeros(shape)
        if node.stochastic or node.op in (INPUT, CONST):
            return total
        pb = _pullback(reg, node.op)
        pidx = g.parent_indices(k)
        inputs = [xs[j] for j in pidx]
        for i, j in enumerate(pidx):
            total = total + through(j, pb(inputs, xs[k], adj, i))
        return total

    grad = np.zeros(shape)
    for leaf in g.leaves:
        grad = grad + through(g.index[leaf], np.ones(()))
    for k, node in enumerate(g.nodes):
        if not node.stochastic:
            continue
        score = _score(reg, node.kind.family)
        pidx = g.parent_indices(k)
        bound = {p: xs[pidx[i]] for p, i in node.kind.binding.items()}
        for p, i in node.kind.binding.items():
            grad = grad + through(pidx[i], c * score(xs[k], bound, p))
    return grad


def _plan(g: Scg, params: tuple):
    """Reverse-sweep schedule for ``params``, cached on the graph.

    Only nodes whose value depends on a parameter through deterministic
    operators can receive adjoints; everything else is skipped.
    """
    key = ("bprop_memo", params)
    if key in g.cache:
        return g.cache[key]
    wanted = set(params)
    reach = [False] * len(g.nodes)
    for k, node in enumerate(g.nodes):
        if node.id in wanted:
            reach[k] = True
        elif not node.stochastic and node.op not in (INPUT, CONST):
            reach[k] = any(reach[j] for j in g.parent_indices(k))
    leaves = set(g.index[leaf] for leaf in g.leaves)
    steps = []
    for k in range(len(g.nodes) - 1, -1, -1):
        node = g.nodes[k]
        pidx = g.parent_indices(k)
        if node.stochastic:
            targets = [(p, pidx[i]) for p, i in node.kind.binding.items() if reach[pidx[i]]]
            if targets:
                bound = [(p, pidx[i]) for p, i in node.kind.binding.items()]
                steps.append(("score", k, node.kind.family, bound, targets))
        elif reach[k] and node.op not in (INPUT, CONST):
            targets = [(i, j) for i, j in enumerate(pidx) if reach[j]]
            steps.append(("pull", k, node.op, pidx, targets))
    seeds = sorted(k for k in leaves if reach[k])
    plan = (seeds, steps, [g.index[p] for p in params])
    g.cache[key] = plan
    return plan


def bprop_memo(g: Scg, theta: Mapping, xs: Sequence, params: Sequence[str]) -> dict:
    """Gradient samples for several parameters from one reverse sweep.

    Nodes are visited in reverse topological order, so every adjoint is
    complete before it is pulled back.
    """
    params = tuple(params)
    _validate(g, xs, params)
    return sweep(g, xs, params)


def sweep(g: Scg, xs: Sequence, params: tuple) -> dict:
    """:func:`bprop_memo` without input validation, for hot sampling loops."""
    if not params:
        return {}
    reg = registry.current()
    seeds, steps, targets = _plan(g, params)
    adj = [None] * len(g.nodes)
    for k in seeds:
        adj[k] = np.ones(())
    c = None
    for kind, k, name, pidx, outs in steps:
        if kind == "pull":
            a = adj[k]
            if a is None:
                continue
            pb = _pullback(reg, name)
            inputs = [xs[j] for j in pidx]
            for i, j in outs:
                v = pb(inputs, xs[k], a, i)
                adj[j] = v if adj[j] is None else adj[j] + v
        else:
            if c is None:
                c = cost(g, xs)
            score = _score(reg, name)
            bound = {p: xs[j] for p, j in pidx}
            for p, j in outs:
                v = c * score(xs[k], bound, p)
                adj[j] = v if adj[j] is None else adj[j] + v
    return {p: np.zeros(g.nodes[k].shape) if adj[k] is None else np.asarray(adj[k])
            for p, k in zip(params, targets)}
