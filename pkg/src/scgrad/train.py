"""Variational autoencoder graphs, optimizers and the training loop."""
from __future__ import annotations

import math
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Mapping, Optional

import numpy as np

from .backprop import bprop_memo, sweep
from .dist import Rng
from .graph import INPUT, GraphBuilder, Scg, cost, dump_assignment, dump_graph, to_dist
from .tensor import ShapeError, tensor
from .verify import check_preconditions

INIT_STREAM, SHUFFLE_STREAM, SAMPLE_STREAM = 0, 1, 2


@dataclass(frozen=True)
class VaeDims:
    d_in: int
    d_h: int
    d_z: int

    def __post_init__(self):
        for name in ("d_in", "d_h", "d_z"):
            v = getattr(self, name)
            if not isinstance(v, (int, np.integer)) or isinstance(v, bool) or v < 1:
                raise ValueError(f"{name} must be a positive integer, got {v!r}")


def build_naive_vae(dims: VaeDims) -> Scg:
    """Two-layer encoder and decoder with a Gaussian latent and Bernoulli outputs.

    Leaves: ``nll`` (cross-entropy of the reconstruction against ``x``),
    ``log_q`` and ``neg_log_p``, so the expected cost is the negative
    evidence lower bound estimated purely by sampling.
    """
    b = GraphBuilder()
    b.input("x", (dims.d_in,))
    b.input("W1", (dims.d_h, dims.d_in))
    b.input("W_mu", (dims.d_z, dims.d_h))
    b.input("W_sigma", (dims.d_z, dims.d_h))
    b.input("W2", (dims.d_h, dims.d_z))
    b.input("W_out", (dims.d_in, dims.d_h))
    b.op("h_pre", "matvec", "W1", "x")
    b.op("h", "softplus", "h_pre")
    b.op("mu", "matvec", "W_mu", "h")
    b.op("sigma_pre", "matvec", "W_sigma", "h")
    b.op("sigma", "softplus", "sigma_pre")
    b.gauss("z", "mu", "sigma")
    b.op("d_pre", "matvec", "W2", "z")
    b.op("d", "softplus", "d_pre")
    b.op("logits", "matvec", "W_out", "d")
    b.op("recon", "sigmoid", "logits")
    b.op("nll", "bce", "x", "recon")
    b.op("log_q", "gauss_logpdf", "z", "mu", "sigma")
    b.op("log_p", "std_gauss_logpdf", "z")
    b.op("neg_log_p", "neg", "log_p")
    return b.build(params=["W1", "W_mu", "W_sigma", "W2", "W_out"])


def build_aevb(dims: VaeDims) -> Scg:
    from .transform import derive_aevb
    return derive_aevb(build_naive_vae(dims))


def data_input(g: Scg) -> str:
    """The single non-parameter input, which receives one example at a time."""
    params = set(g.params)
    free = [n.id for n in g.nodes if n.op == INPUT and n.id not in params]
    if len(free) != 1 or len(g.node(free[0]).shape) != 1:
        raise ValueError(f"graph needs exactly one vector data input, found {free}")
    return free[0]


def init_params(g: Scg, seed: int) -> dict:
    """Uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)], fan_in = trailing dimension."""
    rng = Rng.stream(seed, INIT_STREAM)
    out = {}
    for p in g.params:
        shape = g.node(p).shape
        fan_in = shape[-1] if shape else 1
        u, rng = rng.uniforms(int(np.prod(shape, dtype=np.int64)))
        bound = 1.0 / math.sqrt(fan_in)
        out[p] = tensor((2.0 * np.array(u) - 1.0) * bound, shape)
    return out


# -- optimizers ----------------------------------------------------------------

def _check_like(params: Mapping, other: Mapping, what: str):
    if set(params) != set(other):
        raise ShapeError(f"{what} keys {sorted(other)} differ from params {sorted(params)}")
    for k in params:
        if np.shape(params[k]) != np.shape(other[k]):
            raise ShapeError(f"{what}[{k!r}] has shape {np.shape(other[k])}, "
                             f"param has {np.shape(params[k])}")


def sgd_step(params: Mapping, grads: Mapping, lr: float) -> dict:
    _check_like(params, grads, "grads")
    return {k: tensor(params[k] - lr * np.asarray(grads[k])) for k in params}


@dataclass(frozen=True)
class AdamState:
    step: int
    m: dict
    v: dict
    alpha: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def adam_init(params: Mapping, **hyper) -> AdamState:
    zeros = {k: np.zeros(np.shape(v)) for k, v in params.items()}
    return AdamState(0, zeros, dict(zeros), **hyper)


def adam_step(state: AdamState, params: Mapping, grads: Mapping) -> tuple:
    """One bias-corrected ADAM update; returns ``(new_state, new_params)``."""
    _check_like(params, grads, "grads")
    _check_like(params, state.m, "first moments")
    t = state.step + 1
    m, v, new = {}, {}, {}
    for k in params:
        g = np.asarray(grads[k], dtype=np.float64)
        m[k] = state.beta1 * state.m[k] + (1.0 - state.beta1) * g
        v[k] = state.beta2 * state.v[k] + (1.0 - state.beta2) * g * g
        m_hat = m[k] / (1.0 - state.beta1**t)
        v_hat = v[k] / (1.0 - state.beta2**t)
        new[k] = tensor(params[k] - state.alpha * m_hat / (np.sqrt(v_hat) + state.eps))
    return AdamState(t, m, v, state.alpha, state.beta1, state.beta2, state.eps), new


# -- training loop -------------------------------------------------------------

@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    mean_cost: float
    seconds: float


@dataclass
class TrainResult:
    log: list
    params: dict
    adam: Optional[AdamState] = None


class TrainingError(RuntimeError):
    pass


class TrainingRefused(TrainingError):
    """Preconditions failed at the initial parameters."""

    def __init__(self, report):
        super().__init__("preconditions failed at initialization")
        self.report = report


class TrainingDiverged(TrainingError):
    """A non-finite cost or gradient; ``params`` holds the last finite values."""

    def __init__(self, message, params, checkpoint=None):
        super().__init__(message)
        self.params = params
        self.checkpoint = checkpoint


def binarize(images, threshold: float = 0.5) -> np.ndarray:
    return (np.asarray(images) > threshold).astype(np.float64)


def shuffled(n: int, rng: Rng) -> tuple:
    """Fisher-Yates permutation of ``range(n)`` driven by ``rng``."""
    order = list(range(n))
    for i in range(n - 1, 0, -1):
        u, rng = rng.next()
        j = int(u * (i + 1))
        order[i], order[j] = order[j], order[i]
    return order, rng


def checkpoint(g: Scg, params: Mapping, directory) -> Path:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    dump_graph(g, d / "graph.json")
    dump_assignment(params, d / "params.json")
    return d


def train(g: Scg, data, epochs: int, batch_size: int, seed: int,
          sink: Optional[Callable[[EpochRecord], None]] = None,
          params: Optional[Mapping] = None, checkpoint_dir=None,
          clock: Callable[[], float] = time.perf_counter) -> TrainResult:
    """Minibatch ADAM on the expected cost, one gradient sample per example.

    ``data`` is an ``(examples, d_in)`` array.  Each batch averages the
    ``bprop_memo`` samples of its examples; each epoch visits the examples
    in an order drawn from the seed.
    """
    if epochs < 0 or batch_size < 1:
        raise ValueError("epochs must be >= 0 and batch_size >= 1")
    data = np.asarray(data, dtype=np.float64)
    x_id = data_input(g)
    if data.ndim != 2 or data.shape[1] != g.node(x_id).shape[0] or len(data) == 0:
        raise ShapeError(f"data must be (examples, {g.node(x_id).shape[0]}), got {data.shape}")
    params = dict(init_params(g, seed) if params is None else params)
    pre = check_preconditions(g, {**params, x_id: tensor(data[0])})
    if not pre.passed:
        raise TrainingRefused(pre)
    names = tuple(g.params)
    state = adam_init(params)
    shuffle_rng = Rng.stream(seed, SHUFFLE_STREAM)
    rng = Rng.stream(seed, SAMPLE_STREAM)
    log = []
    checked = False
    for epoch in range(1, epochs + 1):
        start = clock()
        order, shuffle_rng = shuffled(len(data), shuffle_rng)
        costs = []
        for b in range(0, len(order), batch_size):
            batch = order[b:b + batch_size]
            total = {p: np.zeros(np.shape(params[p])) for p in names}
            batch_cost = 0.0
            for i in batch:
                theta = {**params, x_id: tensor(data[i])}
                xs, rng = to_dist(g, theta)._run(rng)
                if not checked:
                    bprop_memo(g, theta, xs, names)
                    checked = True
                grads = sweep(g, xs, names)
                batch_cost += cost(g, xs)
                for p in names:
                    total[p] += grads[p]
            grads = {p: total[p] / len(batch) for p in names}
            batch_cost /= len(batch)
            if not (math.isfinite(batch_cost) and all(np.all(np.isfinite(v)) for v in grads.values())):
                where = checkpoint(g, params, checkpoint_dir) if checkpoint_dir else None
                raise TrainingDiverged(
                    f"non-finite cost or gradient in epoch {epoch}, batch {b // batch_size}",
                    params, where)
            state, params = adam_step(state, params, grads)
            costs.append(batch_cost)
        rec = EpochRecord(epoch, float(np.mean(costs)), clock() - start)
        log.append(rec)
        if sink is not None:
            sink(rec)
    return TrainResult(log, params, state)


LOG_COLUMNS = "epoch,mean_cost,seconds"


def log_header(config: Mapping) -> str:
    items = " ".join(f"{k}={v}" for k, v in config.items())
    return f"# desk-scale config: {items}\n{LOG_COLUMNS}\n"


def format_record(rec: EpochRecord) -> str:
    return f"{rec.epoch},{rec.mean_cost!r},{rec.seconds:.6f}\n"
