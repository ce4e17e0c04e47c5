"""Executable checks that stand in for proofs about a graph.

* :func:`check_preconditions` -- conservative, decidable versions of the
  four hypotheses under which stochastic backprop is unbiased.
* :func:`expected_cost` / :func:`quadrature_grad_of_expected_cost` -- the
  quadrature oracle for the objective and its gradient.
* :func:`test_unbiased` -- Monte Carlo comparison of bprop samples with
  the oracle gradient.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Optional, Sequence

import numpy as np

from . import batch
from .backprop import bprop_memo, sweep
from .dist import FAMILIES, Rng, expect
from .graph import CONST, INPUT, Scg, check_assignment, cost, sampler, to_dist, well_formed
from .ops import OPERATORS, range_of, range_within
from .report import CheckReport

SE_BAND = 4.0
# absolute floor on the acceptance band, covering the finite-difference
# error of the oracle when the estimator has zero variance
ORACLE_FLOOR = 1e-6
BLOCK = 10_000


@dataclass
class Preconditions:
    well_formed: CheckReport
    grads_exist: CheckReport
    integrals_exist: CheckReport
    can_diff_under_ints: CheckReport

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.reports())

    def reports(self) -> list:
        return [self.well_formed, self.grads_exist, self.integrals_exist,
                self.can_diff_under_ints]

    def failing(self) -> list:
        return [r for r in self.reports() if not r.passed]

    def to_dict(self) -> dict:
        return {"passed": self.passed, "checks": [r.to_dict() for r in self.reports()]}


def node_ranges(g: Scg, theta: Mapping) -> list:
    """Conservative value range of every node (see :data:`scgrad.ops.RANGES`)."""
    out = []
    for k, node in enumerate(g.nodes):
        if node.stochastic:
            out.append("real")
        elif node.op == INPUT:
            out.append(range_of(theta[node.id]))
        elif node.op == CONST:
            out.append(range_of(g.const_value(node)))
        else:
            args = [out[j] for j in g.parent_indices(k)]
            out.append(OPERATORS[node.op].out_range(*args))
    return out


def _descendants_of_params(g: Scg) -> list:
    flags = [False] * len(g.nodes)
    params = set(g.params)
    for k, node in enumerate(g.nodes):
        flags[k] = node.id in params or any(flags[j] for j in g.parent_indices(k))
    return flags


def _domain_violations(g, k, ranges):
    node = g.nodes[k]
    pidx = g.parent_indices(k)
    if node.stochastic:
        fam = FAMILIES[node.kind.family]
        for pname, dom in zip(fam.params, fam.domains):
            r = ranges[pidx[node.kind.binding[pname]]]
            if not range_within(r, dom):
                yield f"{node.kind.family} parameter {pname} may leave {dom} (range {r})"
        return
    if node.op in (INPUT, CONST):
        return
    op = OPERATORS[node.op]
    for i, j in enumerate(pidx):
        dom = op.domain(i)
        if not range_within(ranges[j], dom):
            src = g.nodes[j]
            why = ("full-real-line support of stochastic node" if src.stochastic
                   else f"range {ranges[j]}")
            yield f"{node.op} needs input {i} ({src.id}) in {dom}, but it has {why}"


def check_preconditions(g: Scg, theta: Mapping) -> Preconditions:
    """Heuristic precondition checker; may reject good graphs, never accepts
    a graph that breaks the hypotheses within the operator vocabulary."""
    wf = well_formed(g)
    names = ("grads_exist", "integrals_exist", "can_diff_under_ints")
    if not wf.passed:
        skipped = [CheckReport(n, False, violations=[("", "skipped: graph is not well formed")])
                   for n in names]
        return Preconditions(wf, *skipped)
    try:
        theta = check_assignment(g, theta)
    except ValueError as e:
        bad = [CheckReport(n, False, violations=[("theta", str(e))]) for n in names]
        return Preconditions(wf, *bad)

    ranges = node_ranges(g, theta)
    on_path = _descendants_of_params(g)
    grads = CheckReport("grads_exist", True)
    ints = CheckReport("integrals_exist", True)
    diff = CheckReport("can_diff_under_ints", True)
    for k, node in enumerate(g.nodes):
        for msg in _domain_violations(g, k, ranges):
            (grads if on_path[k] else ints).violate(node.id, msg)
            if node.stochastic and on_path[k]:
                diff.violate(node.id, msg)
        if node.stochastic:
            if node.kind.family != "gauss":
                for rep in (ints, diff):
                    rep.violate(node.id, f"family {node.kind.family!r} has no domination rule")
        elif node.op not in (INPUT, CONST) and not OPERATORS[node.op].poly_growth:
            for rep in (ints, diff):
                rep.violate(node.id, f"{node.op} is not in the polynomial-growth class")
    for p in g.params:
        v = theta[p]
        if not np.all(np.isfinite(v)):
            grads.violate(p, "parameter value is not finite")
    return Preconditions(wf, grads, ints, diff)


# -- quadrature oracle ---------------------------------------------------------

def expected_cost(g: Scg, theta: Mapping) -> float:
    return float(expect(to_dist(g, theta), lambda xs: cost(g, xs)))


def expected_bprop(g: Scg, theta: Mapping, params: Optional[Sequence[str]] = None) -> dict:
    """Quadrature expectation of ``bprop_memo`` for each parameter."""
    params = list(g.params if params is None else params)
    sizes = [int(np.prod(g.node(p).shape, dtype=np.int64)) for p in params]

    def flat(xs):
        grads = bprop_memo(g, theta, xs, params)
        return np.concatenate([np.ravel(grads[p]) for p in params]) if params else np.zeros(0)

    total = np.asarray(expect(to_dist(g, theta), flat))
    out, at = {}, 0
    for p, n in zip(params, sizes):
        out[p] = total[at:at + n].reshape(g.node(p).shape)
        at += n
    return out


def quadrature_grad_of_expected_cost(g: Scg, theta: Mapping, param: str) -> np.ndarray:
    """Central differences of the quadrature expected cost in ``param``."""
    theta = check_assignment(g, theta)
    base = theta[param]
    grad = np.zeros(base.shape)
    flat = grad.reshape(-1)
    for k in range(base.size):
        x0 = float(base.reshape(-1)[k])
        h = 1e-4 * max(1.0, abs(x0))
        vals = []
        for step in (h, -h):
            bumped = np.array(base, dtype=np.float64)
            bumped.reshape(-1)[k] = x0 + step
            vals.append(expected_cost(g, {**theta, param: bumped}))
        flat[k] = (vals[0] - vals[1]) / (2 * h)
    return grad


def oracle_gradient(g: Scg, theta: Mapping, params: Optional[Sequence[str]] = None) -> dict:
    params = list(g.params if params is None else params)
    return {p: quadrature_grad_of_expected_cost(g, theta, p) for p in params}


# -- Monte Carlo ---------------------------------------------------------------

@dataclass
class Moments:
    """Running count, mean and sum of squared deviations (componentwise)."""

    n: int
    mean: np.ndarray
    m2: np.ndarray

    @classmethod
    def of(cls, samples: np.ndarray) -> "Moments":
        mean = samples.mean(axis=0)
        return cls(len(samples), mean, ((samples - mean) ** 2).sum(axis=0))

    def merge(self, other: "Moments") -> "Moments":
        n = self.n + other.n
        delta = other.mean - self.mean
        mean = self.mean + delta * (other.n / n)
        m2 = self.m2 + other.m2 + delta * delta * (self.n * other.n / n)
        return Moments(n, mean, m2)

    @property
    def se(self) -> np.ndarray:
        if self.n < 2:
            return np.full_like(self.mean, np.inf)
        return np.sqrt(self.m2 / (self.n - 1) / self.n)


def _draws(g, theta, n, seed, block):
    """Per-sample draws in the same order as :func:`_batches`."""
    draw = sampler(g, theta)
    for b, start in enumerate(range(0, n, block)):
        rng = Rng.stream(seed, b)
        for _ in range(min(block, n - start)):
            xs, rng = draw(rng)
            yield xs


def _batches(g, theta, n, seed, block):
    """Vectorized node values for ``n`` samples, block ``b`` from ``Rng.stream(seed, b)``."""
    step = batch.chunk_size(g, block)
    per = batch.draws_per_sample(g)
    for b, start in enumerate(range(0, n, block)):
        m = min(block, n - start)
        state = Rng.stream(seed, b).state
        for at in range(0, m, step):
            k = min(step, m - at)
            yield batch.sample(g, theta, state, k)
            state = batch.advance(state, k * per)


def _merge(rows) -> Moments:
    total = None
    for r in rows:
        mom = Moments.of(r)
        total = mom if total is None else total.merge(mom)
    return total


def mc_bprop(g: Scg, theta: Mapping, n: int, seed: int,
             params: Optional[Sequence[str]] = None, block: int = BLOCK) -> Moments:
    """Moments of ``n`` flattened bprop samples.

    Block ``b`` draws from ``Rng.stream(seed, b)`` and blocks are merged in
    order, so the result depends only on ``(n, seed, block)``.
    """
    params = tuple(g.params if params is None else params)
    if n > 0:
        # validates the graph, assignment and parameter names once
        bprop_memo(g, theta, next(_draws(g, theta, 1, seed, 1)), params)
    if batch.supported(g):
        return _merge(batch.bprop(g, xs, params) for xs in _batches(g, theta, n, seed, block))
    draw = sampler(g, theta)
    total = None
    for b, start in enumerate(range(0, n, block)):
        m = min(block, n - start)
        rng = Rng.stream(seed, b)
        rows = []
        for i in range(m):
            xs, rng = draw(rng)
            grads = sweep(g, xs, params)
            rows.append(np.concatenate([np.ravel(grads[p]) for p in params]))
        mom = Moments.of(np.array(rows))
        total = mom if total is None else total.merge(mom)
    return total


def mc_cost(g: Scg, theta: Mapping, n: int, seed: int, block: int = BLOCK) -> Moments:
    if batch.supported(g):
        return _merge(batch.cost(g, xs)[:, None] for xs in _batches(g, theta, n, seed, block))
    draw = sampler(g, theta)
    total = None
    for b, start in enumerate(range(0, n, block)):
        m = min(block, n - start)
        rng = Rng.stream(seed, b)
        vals = np.empty((m, 1))
        for i in range(m):
            xs, rng = draw(rng)
            vals[i, 0] = cost(g, xs)
        mom = Moments.of(vals)
        total = mom if total is None else total.merge(mom)
    return total


def test_unbiased(g: Scg, theta: Mapping, n: int, seed: int,
                  truth: Optional[Mapping] = None) -> CheckReport:
    """Sample mean of ``n`` bprop draws vs the oracle gradient, at 4 SE.

    Refuses (``details["refused"]``) when preconditions fail or ``n < 2``.
    ``truth`` may supply a known gradient instead of the quadrature oracle.
    """
    pre = check_preconditions(g, theta)
    if not pre.passed:
        why = [(loc, f"{r.name}: {msg}") for r in pre.failing() for loc, msg in r.violations]
        return CheckReport("unbiased", False, seed=seed, violations=why,
                           details={"refused": True, "preconditions": pre.to_dict()})
    if n < 2:
        return CheckReport("unbiased", False, seed=seed, details={"refused": True},
                           violations=[("n", f"need at least 2 samples, got {n}")])
    params = list(g.params)
    if truth is None:
        truth = oracle_gradient(g, theta, params)
    exact = np.concatenate([np.ravel(truth[p]) for p in params])
    mom = mc_bprop(g, theta, n, seed, params)
    band = np.maximum(SE_BAND * mom.se, ORACLE_FLOOR)
    err = np.abs(mom.mean - exact)
    ratio = err / band
    worst = int(np.argmax(ratio)) if ratio.size else 0
    labels = [f"{p}[{i}]" for p in params for i in range(int(np.prod(g.node(p).shape)))]
    rep = CheckReport(
        "unbiased", bool(np.all(err <= band)), measured=float(ratio.max(initial=0.0)),
        tolerance=1.0, seed=seed,
        ci=(float(mom.mean[worst] - band[worst]), float(mom.mean[worst] + band[worst]))
        if ratio.size else None,
        details={"n": n, "components": labels, "mean": mom.mean, "truth": exact,
                 "se": mom.se, "z": (mom.mean - exact) / np.where(mom.se > 0, mom.se, np.inf)})
    for lab, e, bnd in zip(labels, err, band):
        if not e <= bnd:
            rep.violations.append((lab, f"bias {e:.3g} exceeds band {bnd:.3g}"))
    return rep


test_unbiased.__test__ = False  # not a pytest test despite the name
