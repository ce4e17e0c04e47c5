import numpy as np
import pytest

from scgrad.graph import GraphBuilder
from scgrad.tensor import tensor

UNARY = ("softplus", "sigmoid", "square", "neg")
BINARY = ("add", "sub", "mul")


def random_graph(seed, max_ops=10, max_gauss=2):
    """A random well-formed graph with scalar and length-2 nodes, plus a theta.

    Gaussian nodes are scalar with sigma = softplus(something), so the
    result stays within the quadrature budget when ``max_gauss <= 3``.
    """
    rng = np.random.default_rng(seed)
    b = GraphBuilder()
    pool = {(): [], (2,): []}
    params, theta = [], {}
    for i in range(int(rng.integers(1, 4))):
        shape = () if rng.random() < 0.6 else (2,)
        pid = b.input(f"p{i}", shape)
        params.append(pid)
        pool[shape].append(pid)
        theta[pid] = tensor(rng.uniform(-1, 1, size=shape))
    if not pool[()]:
        pool[()].append(b.op("s0", "sum_all", pool[(2,)][0]))
    n_gauss = 0
    for k in range(int(rng.integers(2, max_ops + 1))):
        shape = () if not pool[(2,)] or rng.random() < 0.7 else (2,)
        r = rng.random()
        nid = f"n{k}"
        if shape == () and n_gauss < max_gauss and r < 0.25:
            mu = pool[()][rng.integers(len(pool[()]))]
            src = pool[()][rng.integers(len(pool[()]))]
            sigma = b.op(f"sd{k}", "softplus", src)
            pool[()].append(sigma)
            pool[()].append(b.gauss(nid, mu, sigma))
            n_gauss += 1
        elif r < 0.55:
            a = pool[shape][rng.integers(len(pool[shape]))]
            pool[shape].append(b.op(nid, UNARY[rng.integers(len(UNARY))], a))
        elif r < 0.9:
            a = pool[shape][rng.integers(len(pool[shape]))]
            c = pool[shape][rng.integers(len(pool[shape]))]
            pool[shape].append(b.op(nid, BINARY[rng.integers(len(BINARY))], a, c))
        elif pool[(2,)]:
            pool[()].append(b.op(nid, "sum_all", pool[(2,)][rng.integers(len(pool[(2,)]))]))
    g = b.build(params=params)
    # non-scalar leaves get reduced to scalars
    for leaf in [x for x in g.leaves if g.node(x).shape != ()]:
        b.op(f"{leaf}.sum", "sum_all", leaf)
    return b.build(params=params), theta


@pytest.fixture
def vae_small():
    from scgrad.train import VaeDims, build_naive_vae, init_params
    g = build_naive_vae(VaeDims(2, 2, 1))
    theta = init_params(g, 3)
    theta["x"] = tensor([1.0, 0.0])
    return g, theta


ACCEPTANCE = []


@pytest.fixture
def verdict():
    """Record and print one PASS/FAIL line for an acceptance criterion."""
    def record(number, passed, message):
        line = f"criterion {number:>2}: {'PASS' if passed else 'FAIL'}  {message}"
        ACCEPTANCE.append(line)
        print(line)
        return passed
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE, key=lambda s: int(s.split(":")[0].split()[1])):
            terminalreporter.write_line(line)
