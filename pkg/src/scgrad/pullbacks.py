"""Pullbacks for every operator in the vocabulary, and the Gaussian score."""
from __future__ import annotations

import numpy as np

from .registry import Registry
from .tensor import sigmoid


def _exp(inputs, out, adj, i):
    return adj * out


def _log(inputs, out, adj, i):
    return adj / inputs[0]


def _neg(inputs, out, adj, i):
    return -adj


def _square(inputs, out, adj, i):
    return 2.0 * inputs[0] * adj


def _softplus(inputs, out, adj, i):
    return adj * sigmoid(inputs[0])


def _sigmoid(inputs, out, adj, i):
    return adj * out * (1.0 - out)


def _add(inputs, out, adj, i):
    return np.array(adj, dtype=np.float64)


def _sub(inputs, out, adj, i):
    return np.array(adj if i == 0 else -adj, dtype=np.float64)


def _mul(inputs, out, adj, i):
    return adj * inputs[1 - i]


def _matvec(inputs, out, adj, i):
    w, x = inputs
    if i == 0:
        return np.outer(adj, x)
    return w.T @ adj


def _sum_all(inputs, out, adj, i):
    return np.full(np.shape(inputs[0]), float(adj))


def _gauss_logpdf(inputs, out, adj, i):
    z, mu, sigma = inputs
    r = (z - mu) / sigma
    if i == 0:
        return -adj * r / sigma
    if i == 1:
        return adj * r / sigma
    return adj * (r * r - 1.0) / sigma


def _std_gauss_logpdf(inputs, out, adj, i):
    return -adj * inputs[0]


def _gauss_kl_std(inputs, out, adj, i):
    mu, sigma = inputs
    if i == 0:
        return adj * mu
    return adj * (sigma - 1.0 / sigma)


def _bce(inputs, out, adj, i):
    x, p = inputs
    if i == 0:
        return -adj * (np.log(p) - np.log1p(-p))
    return -adj * (x / p - (1.0 - x) / (1.0 - p))


PULLBACKS = {
    "exp": _exp,
    "log": _log,
    "neg": _neg,
    "square": _square,
    "softplus": _softplus,
    "sigmoid": _sigmoid,
    "add": _add,
    "sub": _sub,
    "mul": _mul,
    "matvec": _matvec,
    "sum_all": _sum_all,
    "gauss_logpdf": _gauss_logpdf,
    "std_gauss_logpdf": _std_gauss_logpdf,
    "gauss_kl_std": _gauss_kl_std,
    "bce": _bce,
}


def gauss_score(x, params, name):
    """d/d(mu or sigma) of log N(x; mu, sigma^2), elementwise."""
    mu, sigma = params["mu"], params["sigma"]
    r = (x - mu) / sigma
    if name == "mu":
        return r / sigma
    if name == "sigma":
        return (r * r - 1.0) / sigma
    raise KeyError(name)


def build_default() -> Registry:
    reg = Registry()
    for name, fn in PULLBACKS.items():
        reg.register_pullback(name, fn)
    reg.register_score("gauss", gauss_score)
    return reg
