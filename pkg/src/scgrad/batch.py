"""Vectorized sampling and bprop over a block of independent samples.

Every node value carries a leading batch axis.  The uniforms consumed are
exactly those of the per-sample path (sample ``i`` of a block takes the
``i``-th run of draws from the block's stream), so the two paths see the
same randomness and agree up to floating-point rounding.

Only the stock forwards, pullbacks and scores have batched kernels.  When
the active registry replaces any of them (for instance a sabotaged
pullback), :func:`supported` is false and callers fall back to the
per-sample path, so fault injection is never bypassed.
"""
from __future__ import annotations

import math
from typing import Mapping

import numpy as np

from . import registry
from .dist import GOLDEN_GAMMA, MASK64
from .graph import CONST, INPUT, Scg, check_assignment
from .ops import LOG_2PI, OPERATORS
from .pullbacks import PULLBACKS, gauss_score
from .tensor import DomainError

# cap on floats held per block for one node, to bound memory on large graphs
MAX_FLOATS = 1 << 24

_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)


def uniforms(state: int, n: int) -> np.ndarray:
    """The next ``n`` uniforms of a SplitMix64 stream, vectorized."""
    steps = np.arange(1, n + 1, dtype=np.uint64) * np.uint64(GOLDEN_GAMMA)
    z = steps + np.uint64(state)
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    z = z ^ (z >> np.uint64(31))
    return (z >> np.uint64(11)).astype(np.float64) * 2.0**-53


def box_muller(u: np.ndarray, n: int) -> np.ndarray:
    """Standard normals from a ``(B, 2 * ceil(n / 2))`` uniform block."""
    r = np.sqrt(-2.0 * np.log(1.0 - u[:, 0::2]))
    t = 2.0 * math.pi * u[:, 1::2]
    z = np.empty_like(u)
    z[:, 0::2] = r * np.cos(t)
    z[:, 1::2] = r * np.sin(t)
    return z[:, :n]


def _rows(x):
    return x.reshape(x.shape[0], -1)


def _col(a, ndim):
    return a.reshape(a.shape + (1,) * ndim)


def _log(x):
    if np.any(x <= 0):
        raise DomainError("log of a nonpositive entry")
    return np.log(x)


def _sigmoid(x):
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def _gauss_logpdf(z, mu, sigma):
    r = (z - mu) / sigma
    n = _rows(z).shape[1]
    return -0.5 * _rows(r * r).sum(1) - _rows(np.log(sigma)).sum(1) - 0.5 * n * LOG_2PI


def _kl(mu, sigma):
    s2 = sigma * sigma
    return -0.5 * _rows(1.0 + np.log(s2) - mu * mu - s2).sum(1)


def _bce(x, p):
    return -_rows(x * np.log(p) + (1.0 - x) * np.log1p(-p)).sum(1)


FORWARD = {
    "exp": np.exp,
    "log": _log,
    "neg": np.negative,
    "square": np.square,
    "softplus": lambda x: np.logaddexp(0.0, x),
    "sigmoid": _sigmoid,
    "add": np.add,
    "sub": np.subtract,
    "mul": np.multiply,
    "matvec": lambda w, x: np.einsum("bij,bj->bi", w, x),
    "sum_all": lambda x: _rows(x).sum(1),
    "gauss_logpdf": _gauss_logpdf,
    "std_gauss_logpdf": lambda z: -0.5 * _rows(z * z).sum(1) - 0.5 * _rows(z).shape[1] * LOG_2PI,
    "gauss_kl_std": _kl,
    "bce": _bce,
}


def _pb_matvec(inputs, out, adj, i):
    w, x = inputs
    if i == 0:
        return adj[:, :, None] * x[:, None, :]
    return np.einsum("bij,bi->bj", w, adj)


def _pb_sum_all(inputs, out, adj, i):
    x = inputs[0]
    return np.broadcast_to(_col(adj, x.ndim - 1), x.shape).copy()


def _pb_gauss_logpdf(inputs, out, adj, i):
    z, mu, sigma = inputs
    a = _col(adj, z.ndim - 1)
    r = (z - mu) / sigma
    if i == 0:
        return -a * r / sigma
    if i == 1:
        return a * r / sigma
    return a * (r * r - 1.0) / sigma


def _pb_std_gauss_logpdf(inputs, out, adj, i):
    z = inputs[0]
    return -_col(adj, z.ndim - 1) * z


def _pb_kl(inputs, out, adj, i):
    mu, sigma = inputs
    a = _col(adj, mu.ndim - 1)
    return a * mu if i == 0 else a * (sigma - 1.0 / sigma)


def _pb_bce(inputs, out, adj, i):
    x, p = inputs
    a = _col(adj, x.ndim - 1)
    if i == 0:
        return -a * (np.log(p) - np.log1p(-p))
    return -a * (x / p - (1.0 - x) / (1.0 - p))


PULLBACK = {
    "exp": lambda inputs, out, adj, i: adj * out,
    "log": lambda inputs, out, adj, i: adj / inputs[0],
    "neg": lambda inputs, out, adj, i: -adj,
    "square": lambda inputs, out, adj, i: 2.0 * inputs[0] * adj,
    "softplus": lambda inputs, out, adj, i: adj * _sigmoid(inputs[0]),
    "sigmoid": lambda inputs, out, adj, i: adj * out * (1.0 - out),
    "add": lambda inputs, out, adj, i: adj,
    "sub": lambda inputs, out, adj, i: adj if i == 0 else -adj,
    "mul": lambda inputs, out, adj, i: adj * inputs[1 - i],
    "matvec": _pb_matvec,
    "sum_all": _pb_sum_all,
    "gauss_logpdf": _pb_gauss_logpdf,
    "std_gauss_logpdf": _pb_std_gauss_logpdf,
    "gauss_kl_std": _pb_kl,
    "bce": _pb_bce,
}


def supported(g: Scg) -> bool:
    """True when the active registry is stock for every kernel ``g`` uses."""
    reg = registry.current()
    for n in g.nodes:
        if n.stochastic:
            if n.kind.family != "gauss" or reg.scores.get("gauss") is not gauss_score:
                return False
        elif n.op not in (INPUT, CONST):
            if (n.op not in FORWARD or reg.forwards.get(n.op) is not OPERATORS[n.op].forward
                    or reg.pullbacks.get(n.op) is not PULLBACKS[n.op]):
                return False
    return True


def chunk_size(g: Scg, block: int) -> int:
    """Samples per vectorized chunk, keeping each node under ``MAX_FLOATS``."""
    biggest = max(max(int(np.prod(n.shape, dtype=np.int64)), 1) for n in g.nodes)
    return max(1, min(block, MAX_FLOATS // biggest))


def draws_per_sample(g: Scg) -> int:
    return sum(2 * ((int(np.prod(n.shape, dtype=np.int64)) + 1) // 2)
               for n in g.nodes if n.stochastic)


def advance(state: int, draws: int) -> int:
    """SplitMix64 state after ``draws`` uniforms."""
    return (state + draws * GOLDEN_GAMMA) & MASK64


def sample(g: Scg, theta: Mapping, state: int, m: int) -> list:
    """Node values (each with a leading axis of length ``m``) for ``m``
    consecutive samples starting from SplitMix state ``state``."""
    theta = check_assignment(g, theta)
    per = draws_per_sample(g)
    u = uniforms(state, m * per).reshape(m, per)
    at = 0
    xs = []
    for k, n in enumerate(g.nodes):
        pidx = g.parent_indices(k)
        if n.stochastic:
            bound = {p: xs[pidx[i]] for p, i in n.kind.binding.items()}
            mu, sigma = bound["mu"], bound["sigma"]
            if not np.all((sigma > 0) & (sigma < np.inf)):
                raise DomainError("gauss: sigma must be positive and finite")
            size = int(np.prod(n.shape, dtype=np.int64))
            width = 2 * ((size + 1) // 2)
            z = box_muller(u[:, at:at + width], size).reshape((m,) + n.shape)
            at += width
            xs.append(mu + sigma * z)
        elif n.op == INPUT:
            xs.append(np.broadcast_to(theta[n.id], (m,) + n.shape))
        elif n.op == CONST:
            xs.append(np.broadcast_to(g.const_value(n), (m,) + n.shape))
        else:
            xs.append(FORWARD[n.op](*[xs[j] for j in pidx]))
    return xs


def cost(g: Scg, xs) -> np.ndarray:
    return sum(xs[g.index[leaf]] for leaf in g.leaves)


def bprop(g: Scg, xs, params: tuple) -> np.ndarray:
    """Flattened gradient samples, one row per sample, columns in ``params`` order."""
    from .backprop import _plan
    m = xs[0].shape[0]
    if not params:
        return np.zeros((m, 0))
    seeds, steps, targets = _plan(g, params)
    adj = [None] * len(g.nodes)
    for k in seeds:
        adj[k] = np.ones(m)
    c = None
    for kind, k, name, pidx, outs in steps:
        if kind == "pull":
            a = adj[k]
            if a is None:
                continue
            pb = PULLBACK[name]
            inputs = [xs[j] for j in pidx]
            for i, j in outs:
                v = pb(inputs, xs[k], a, i)
                adj[j] = v if adj[j] is None else adj[j] + v
        else:
            if c is None:
                c = cost(g, xs)
            bound = {p: xs[j] for p, j in pidx}
            for p, j in outs:
                v = _col(c, xs[k].ndim - 1) * gauss_score(xs[k], bound, p)
                adj[j] = v if adj[j] is None else adj[j] + v
    cols = []
    for k in targets:
        a = adj[k]
        cols.append(np.zeros((m, int(np.prod(g.nodes[k].shape, dtype=np.int64))))
                    if a is None else np.broadcast_to(a, (m,) + g.nodes[k].shape).reshape(m, -1))
    return np.concatenate(cols, axis=1)
