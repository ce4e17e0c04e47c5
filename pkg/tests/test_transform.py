import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import random_graph
from scgrad import corpus, verify
from scgrad.dist import Sample, expect, gauss
from scgrad.graph import GraphBuilder, check_assignment, const_node, forward, to_dist, well_formed
from scgrad.sabotage import buggy_gauss_cross_entropy
from scgrad.tensor import DomainError, tensor
from scgrad.train import VaeDims, build_naive_vae
from scgrad.transform import (REWRITES, TransformError, check_equivalent, derive_aevb,
                              find_kl_motifs, gauss_cross_entropy_closed_form, integrate_kl,
                              reparam_sites, reparameterize)


def one_d(mu=1.5, sigma=0.8):
    b = GraphBuilder()
    b.input("m")
    b.input("s")
    b.gauss("z", "m", "s")
    b.op("y", "sigmoid", "z")
    b.op("w", "square", "z")
    return b.build(params=["m", "s"]), {"m": tensor(mu), "s": tensor(sigma)}


def test_reparameterized_site_moments():
    g, theta = one_d()
    r = reparameterize(g, "z")
    d = to_dist(r, theta)
    k = r.index["z"]
    mean = expect(d, lambda xs: float(xs[k]))
    var = expect(d, lambda xs: (float(xs[k]) - 1.5) ** 2)
    assert abs(mean - 1.5) <= 1e-8 and abs(var - 0.64) <= 1e-8


def test_reparameterize_structure():
    g, theta = one_d()
    r = reparameterize(g, "z")
    assert well_formed(r).passed
    assert len(r.nodes) == len(g.nodes) + 4
    assert r.node("z").op == "add"
    assert r.node("y").parents == ("z",)
    assert reparam_sites(r) == []
    assert abs(verify.expected_cost(g, theta) - verify.expected_cost(r, theta)) <= 1e-6


def test_reparameterize_rejects_non_gauss():
    g, _ = one_d()
    with pytest.raises(TransformError):
        reparameterize(g, "y")


def test_fresh_ids_avoid_collisions():
    b = GraphBuilder()
    b.input("m")
    b.const("z.eps", 1.0)
    b.gauss("z", "m", "z.eps")
    b.op("y", "neg", "z")
    g = b.build(params=["m"])
    r = reparameterize(g, "z")
    ids = [n.id for n in r.nodes]
    assert len(ids) == len(set(ids))
    assert "z.eps#2" in ids


def test_pathwise_gradient_has_lower_variance():
    g, theta = one_d(0.3, 0.9)
    r = reparameterize(g, "z")
    a = verify.mc_bprop(g, theta, 10_000, 5)
    b = verify.mc_bprop(r, theta, 10_000, 5)
    var_a = a.m2 / (a.n - 1)
    var_b = b.m2 / (b.n - 1)
    assert np.all(var_b < var_a)


def kl_leaf(mu, sigma):
    b = GraphBuilder()
    b.input("m", np.shape(mu))
    b.input("s", np.shape(sigma))
    b.op("kl", "gauss_kl_std", "m", "s")
    g = b.build(params=["m", "s"])
    return float(forward(g, {"m": tensor(mu), "s": tensor(sigma)})[-1])


def test_kl_leaf_values():
    assert kl_leaf(0.0, 1.0) == 0.0
    assert kl_leaf(1.0, 1.0) == 0.5
    # independent Monte Carlo oracle of E_q[log q(z) - log p(z)] at mu=1, sigma=1
    z = np.random.default_rng(0).normal(1.0, 1.0, 10**6)
    vals = 0.5 * (z**2 - (z - 1.0) ** 2)
    assert abs(vals.mean() - 0.5) <= 4 * vals.std(ddof=1) / 1e3


def test_integrate_kl_on_naive_vae(vae_small):
    g, theta = vae_small
    motifs = find_kl_motifs(g)
    assert len(motifs) == 1 and motifs[0].z == "z"
    k = integrate_kl(g)
    assert well_formed(k).passed
    assert len(k.nodes) == len(g.nodes) - 2
    assert abs(verify.expected_cost(g, theta) - verify.expected_cost(k, theta)) <= 1e-6
    assert integrate_kl(k) == k


def test_integrate_kl_no_motif_is_noop():
    c = corpus.gauss_square()
    out, sites = REWRITES["integrate-kl"].run(c.graph)
    assert sites == [] and out == c.graph


def test_cross_entropy_values():
    assert gauss_cross_entropy_closed_form(0.0, 1.0) == pytest.approx(-1.4189385, abs=1e-7)
    assert gauss_cross_entropy_closed_form(1.0, 1.0) == pytest.approx(-1.9189385, abs=1e-7)
    assert buggy_gauss_cross_entropy(1.0, 1.0) == pytest.approx(-0.9189385, abs=1e-7)
    assert gauss_cross_entropy_closed_form(0.3, 0.7) == gauss_cross_entropy_closed_form(-0.3, 0.7)
    with pytest.raises(DomainError):
        gauss_cross_entropy_closed_form([0.0], [0.0])


def quadrature_cross_entropy(mu, sigma):
    n = mu.size
    return expect(Sample(gauss(mu, sigma)),
                  lambda xs: float(-0.5 * np.sum(xs[0] ** 2) - 0.5 * n * math.log(2 * math.pi)))


@given(st.integers(0, 2**32 - 1))
@settings(max_examples=50, deadline=None)
def test_cross_entropy_matches_quadrature(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 4))
    mu, sigma = rng.uniform(-2, 2, n), rng.uniform(0.1, 3, n)
    assert abs(gauss_cross_entropy_closed_form(mu, sigma) - quadrature_cross_entropy(mu, sigma)) <= 1e-8


def test_check_equivalent_examples(vae_small):
    g, theta = vae_small
    same = check_equivalent(g, g, theta)
    assert same.passed and same.measured == 0.0
    assert check_equivalent(g, REWRITES["reparam"].run(g)[0], theta).passed
    # bake W_out into the graph as a constant, once as is and once bumped by 0.1
    k = g.index["W_out"]
    params = [p for p in g.params if p != "W_out"]
    rest = {p: v for p, v in theta.items() if p != "W_out"}
    w = np.array(theta["W_out"])
    orig = g.replace(nodes=g.nodes[:k] + (const_node("W_out", w),) + g.nodes[k + 1:], params=params)
    w[0, 0] += 0.1
    fixed = g.replace(nodes=g.nodes[:k] + (const_node("W_out", w),) + g.nodes[k + 1:], params=params)
    assert check_equivalent(orig, orig, rest).passed
    rep = check_equivalent(orig, fixed, rest)
    assert not rep.passed and rep.violations


def test_check_equivalent_falls_back_to_monte_carlo():
    b = GraphBuilder()
    b.input("m", (4,))
    b.input("s", (4,))
    b.op("sd", "softplus", "s")
    b.gauss("z", "m", "sd")
    b.op("y", "sigmoid", "z")
    b.op("t", "sum_all", "y")
    g = b.build(params=["m", "s"])
    theta = {"m": tensor([0.1, -0.2, 0.3, 0.0]), "s": tensor([0.5, 0.1, -0.3, 0.2])}
    rep = check_equivalent(g, reparameterize(g, "z"), theta, mc_samples=4000)
    assert rep.details["mode"] == "monte-carlo" and "oracle_unavailable" in rep.details
    assert rep.passed


def test_derive_aevb_structure(vae_small):
    g, theta = vae_small
    a = derive_aevb(g)
    assert check_equivalent(g, a, theta).passed
    dep = verify._descendants_of_params(a)
    for k, n in enumerate(a.nodes):
        if n.stochastic:
            assert not any(dep[j] for j in a.parent_indices(k)), n.id
    sites, motifs = len(reparam_sites(g)), len(find_kl_motifs(g))
    assert sum(n.stochastic for n in a.nodes) == sum(n.stochastic for n in g.nodes)
    assert len(a.nodes) == len(g.nodes) + 4 * sites - 2 * motifs


def test_derive_aevb_larger_latent():
    g = build_naive_vae(VaeDims(3, 2, 2))
    theta = check_assignment(g, {**{p: tensor(np.full(g.node(p).shape, 0.3)) for p in g.params},
                                 "x": tensor([1.0, 0.0, 1.0])})
    assert check_equivalent(g, derive_aevb(g), theta).passed


@pytest.mark.parametrize("name", sorted(REWRITES))
def test_rewrites_sound_on_corpus(name):
    rw = REWRITES[name]
    for c in corpus.corpus():
        out, sites = rw.run(c.graph)
        assert well_formed(out).passed
        if sites:
            assert check_equivalent(c.graph, out, c.theta).passed, (name, c.name)


@given(st.integers(0, 10_000))
@settings(max_examples=25, deadline=None)
def test_reparam_preserves_well_formed_and_objective(seed):
    g, theta = random_graph(seed)
    out, _ = REWRITES["reparam"].run(g)
    assert well_formed(out).passed
    assert abs(verify.expected_cost(g, theta) - verify.expected_cost(out, theta)) <= 1e-6
