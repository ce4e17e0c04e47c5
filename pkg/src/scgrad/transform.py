"""Graph rewrites that keep the objective but change the gradient estimator.

``reparameterize`` turns a Gaussian draw whose parameters depend on the
graph parameters into a standard-normal draw followed by a scale and a
shift, so gradients flow pathwise.  ``integrate_kl`` replaces the Monte
Carlo estimate of a Gaussian-vs-standard-normal KL term with its closed
form.  ``derive_aevb`` applies both to a naive variational autoencoder.
Each rewrite is checked by :func:`check_equivalent`, which compares the
quadrature objectives and gradients of the two graphs.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Mapping, Optional

import numpy as np

from . import verify
from .dist import OracleUnavailable
from .graph import CONST, GraphError, Node, Op, Scg, Stoch, const_node
from .report import CheckReport
from .tensor import DomainError

COST_TOL = 1e-6
GRAD_TOL = 1e-5


class TransformError(GraphError):
    """A rewrite was asked to apply somewhere it does not match."""


def _fresh(base: str, taken: set) -> str:
    name, k = base, 2
    while name in taken:
        name = f"{base}#{k}"
        k += 1
    taken.add(name)
    return name


def _bound(g: Scg, node: Node, pname: str) -> str:
    return node.parents[node.kind.binding[pname]]


def _is_gauss(node: Node) -> bool:
    return node.stochastic and node.kind.family == "gauss"


def _const_equals(g: Scg, id: str, value: float) -> bool:
    n = g.node(id)
    return n.op == CONST and bool(np.all(g.const_value(n) == value))


def gauss_site(g: Scg, id: str) -> Optional[tuple]:
    """``(mu, sigma)`` parent ids if ``id`` is a Gaussian draw, either sampled
    directly or in reparameterized ``mu + sigma * eps`` form."""
    n = g.node(id)
    if _is_gauss(n):
        return _bound(g, n, "mu"), _bound(g, n, "sigma")
    if n.op == "add":
        mu, scale = n.parents
        s = g.node(scale)
        if s.op == "mul":
            sigma, eps = s.parents
            e = g.node(eps)
            if (_is_gauss(e) and _const_equals(g, _bound(g, e, "mu"), 0.0)
                    and _const_equals(g, _bound(g, e, "sigma"), 1.0)):
                return mu, sigma
    return None


def depends_on_params(g: Scg) -> list:
    flags = []
    params = set(g.params)
    for k, n in enumerate(g.nodes):
        flags.append(n.id in params or any(flags[j] for j in g.parent_indices(k)))
    return flags


def reparam_sites(g: Scg) -> list:
    """Gaussian nodes whose distribution parameters depend on graph parameters."""
    dep = depends_on_params(g)
    return [n.id for n in g.nodes
            if _is_gauss(n) and any(dep[g.index[p]] for p in n.parents)]


def reparameterize(g: Scg, site: str) -> Scg:
    """Replace ``site ~ N(mu, sigma)`` by ``eps ~ N(0, 1)``, ``scale = sigma * eps``
    and ``site = mu + scale``; the shift keeps the original id."""
    node = g.node(site)
    if not _is_gauss(node):
        raise TransformError(f"{site!r} is not a gauss node")
    mu, sigma = _bound(g, node, "mu"), _bound(g, node, "sigma")
    taken = set(g.index)
    zero = _fresh(f"{site}.zero", taken)
    one = _fresh(f"{site}.one", taken)
    eps = _fresh(f"{site}.eps", taken)
    scale = _fresh(f"{site}.scale", taken)
    shape = node.shape
    new = [
        const_node(zero, np.zeros(shape)),
        const_node(one, np.ones(shape)),
        Node(eps, shape, (zero, one), Stoch("gauss", {"mu": 0, "sigma": 1})),
        Node(scale, shape, (sigma, eps), Op("mul")),
        Node(site, shape, (mu, scale), Op("add")),
    ]
    k = g.index[site]
    return g.replace(nodes=g.nodes[:k] + tuple(new) + g.nodes[k + 1:])


def reparameterize_all(g: Scg) -> Scg:
    for site in reparam_sites(g):
        g = reparameterize(g, site)
    return g


@dataclass(frozen=True)
class KlMotif:
    z: str
    mu: str
    sigma: str
    log_q: str
    log_p: str
    neg_log_p: str


def find_kl_motifs(g: Scg) -> list:
    """Leaves ``log q(z)`` and ``-log p(z)`` hanging off a Gaussian draw ``z``.

    Structural match: ``log_q = gauss_logpdf(z, mu, sigma)`` is a leaf,
    ``log_p = std_gauss_logpdf(z)`` feeds only ``neg_log_p = neg(log_p)``,
    which is a leaf, and ``z`` has at least one other child so removing
    the pair leaves it interior.
    """
    leaves = set(g.leaves)
    found = []
    for n in g.nodes:
        site = gauss_site(g, n.id)
        if site is None:
            continue
        mu, sigma = site
        kids = g.children[n.id]
        log_q = next((c for c in kids if c in leaves and g.node(c).op == "gauss_logpdf"
                      and g.node(c).parents == (n.id, mu, sigma)), None)
        log_p = next((c for c in kids if g.node(c).op == "std_gauss_logpdf"
                      and len(g.children[c]) == 1), None)
        if log_q is None or log_p is None:
            continue
        neg = g.children[log_p][0]
        if g.node(neg).op != "neg" or neg not in leaves:
            continue
        if not set(kids) - {log_q, log_p}:
            continue
        found.append(KlMotif(n.id, mu, sigma, log_q, log_p, neg))
    return found


def integrate_kl_at(g: Scg, m: KlMotif) -> Scg:
    """Swap one matched Monte Carlo KL pair for a closed-form KL leaf."""
    kl = _fresh(f"{m.z}.kl", set(g.index))
    leaf = Node(kl, (), (m.mu, m.sigma), Op("gauss_kl_std"))
    nodes = [leaf if n.id == m.neg_log_p else n for n in g.nodes
             if n.id not in (m.log_q, m.log_p)]
    return g.replace(nodes=nodes)


def integrate_kl(g: Scg) -> Scg:
    """Integrate out every matched KL pair; a graph without the motif is returned unchanged."""
    for m in find_kl_motifs(g):
        g = integrate_kl_at(g, m)
    return g


def derive_aevb(g: Scg) -> Scg:
    """Reparameterize every parameter-dependent Gaussian, then integrate KL terms."""
    return integrate_kl(reparameterize_all(g))


@dataclass(frozen=True)
class Rewrite:
    """A named rewrite: ``matcher`` lists sites, ``apply(g, site)`` rewrites one."""

    name: str
    matcher: Callable[[Scg], list]
    apply: Callable[[Scg, object], Scg]

    def run(self, g: Scg) -> tuple:
        """Apply at every site, rematching after each step.

        Returns ``(graph, sites)``; an empty site list means the motif was
        absent and the graph is returned unchanged.
        """
        done = []
        while True:
            sites = [s for s in self.matcher(g) if s not in done]
            if not sites:
                return g, done
            g = self.apply(g, sites[0])
            done.append(sites[0])


def _aevb_sites(g: Scg) -> list:
    return ["aevb"] if reparam_sites(g) or find_kl_motifs(g) else []


REWRITES = {
    "reparam": Rewrite("reparam", reparam_sites, reparameterize),
    "integrate-kl": Rewrite("integrate-kl", find_kl_motifs, integrate_kl_at),
    "derive-aevb": Rewrite("derive-aevb", _aevb_sites, lambda g, site: derive_aevb(g)),
}


def gauss_cross_entropy_closed_form(mu, sigma) -> float:
    """E_{x ~ N(mu, diag sigma^2)}[log N(x; 0, I)]."""
    mu = np.atleast_1d(np.asarray(mu, dtype=np.float64))
    sigma = np.atleast_1d(np.asarray(sigma, dtype=np.float64))
    if np.any(sigma <= 0):
        raise DomainError("sigma must be positive")
    n = mu.size
    return float(-0.5 * (np.sum(sigma**2 + mu**2) + n * math.log(2 * math.pi)))


def check_equivalent(g: Scg, g2: Scg, theta: Mapping, *, mc_samples: int = 20_000,
                     seed: int = 0) -> CheckReport:
    """Do two graphs induce the same objective (and gradient) at ``theta``?

    Uses the quadrature oracle when both graphs fit its budget, otherwise
    compares Monte Carlo estimates at 4 standard errors.
    """
    if tuple(g.params) != tuple(g2.params):
        return CheckReport("equivalent", False,
                           violations=[("params", f"{g.params} != {g2.params}")])
    try:
        c1, c2 = verify.expected_cost(g, theta), verify.expected_cost(g2, theta)
        # quadrature expectation of bprop: one pass covers every parameter,
        # where finite differences would need one per parameter entry
        gr1, gr2 = verify.expected_bprop(g, theta), verify.expected_bprop(g2, theta)
    except OracleUnavailable as e:
        return _check_equivalent_mc(g, g2, theta, mc_samples, seed, str(e))
    cost_err = abs(c1 - c2)
    grad_err = max((float(np.max(np.abs(gr1[p] - gr2[p]), initial=0.0)) for p in g.params),
                   default=0.0)
    rep = CheckReport("equivalent", cost_err <= COST_TOL and grad_err <= GRAD_TOL,
                      measured=cost_err, tolerance=COST_TOL,
                      details={"mode": "quadrature", "cost": [c1, c2],
                               "grad_err": grad_err, "grad_tol": GRAD_TOL})
    if cost_err > COST_TOL:
        rep.violations.append(("cost", f"expected costs {c1:.10g} vs {c2:.10g}"))
    if grad_err > GRAD_TOL:
        rep.violations.append(("grad", f"expected gradients differ by {grad_err:.3g}"))
    return rep


def _check_equivalent_mc(g, g2, theta, n, seed, why):
    m1, m2 = verify.mc_cost(g, theta, n, seed), verify.mc_cost(g2, theta, n, seed + 1)
    b1, b2 = verify.mc_bprop(g, theta, n, seed), verify.mc_bprop(g2, theta, n, seed + 1)
    cost_band = verify.SE_BAND * math.hypot(float(m1.se[0]), float(m2.se[0]))
    cost_err = abs(float(m1.mean[0] - m2.mean[0]))
    grad_band = verify.SE_BAND * np.sqrt(b1.se**2 + b2.se**2)
    grad_ok = bool(np.all(np.abs(b1.mean - b2.mean) <= grad_band))
    rep = CheckReport("equivalent", cost_err <= cost_band and grad_ok,
                      measured=cost_err, tolerance=cost_band, seed=seed,
                      ci=(float(m1.mean[0] - m2.mean[0]) - cost_band,
                          float(m1.mean[0] - m2.mean[0]) + cost_band),
                      details={"mode": "monte-carlo", "oracle_unavailable": why,
                               "samples": n})
    if cost_err > cost_band:
        rep.violations.append(("cost", f"Monte Carlo costs differ by {cost_err:.3g}"))
    if not grad_ok:
        rep.violations.append(("grad", "Monte Carlo gradients differ beyond 4 SE"))
    return rep
