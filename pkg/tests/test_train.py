import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from scgrad import mnist, verify
from scgrad.dist import Rng
from scgrad.graph import GraphBuilder, load_assignment, load_graph, well_formed
from scgrad.tensor import ShapeError, tensor
from scgrad.train import (AdamState, TrainingDiverged, TrainingRefused, VaeDims, adam_init, adam_step,
                          binarize, build_aevb, build_naive_vae, format_record, init_params,
                          log_header, sgd_step, shuffled, train)

DATA = "tests/data/mnist1k"


def test_vae_dims_validation():
    with pytest.raises(ValueError):
        VaeDims(0, 2, 1)
    with pytest.raises(ValueError):
        VaeDims(2, 2.5, 1)


def test_small_vae_fits_quadrature(vae_small):
    g, theta = vae_small
    assert well_formed(g).passed
    assert math.isfinite(verify.expected_cost(g, theta))


def test_expected_cost_at_zero_weights():
    g = build_naive_vae(VaeDims(2, 2, 1))
    theta = {p: tensor(np.zeros(g.node(p).shape)) for p in g.params}
    theta["x"] = tensor([1.0, 0.0])
    s = math.log(2.0)  # sigma = softplus(0)
    kl = -0.5 * (1 + math.log(s * s) - s * s)
    assert verify.expected_cost(g, theta) == pytest.approx(2 * math.log(2) + kl, abs=1e-12)


def test_init_reproducible_and_scaled():
    g = build_naive_vae(VaeDims(10, 4, 2))
    a, b = init_params(g, 5), init_params(g, 5)
    assert all(np.array_equal(a[p], b[p]) for p in g.params)
    assert not np.array_equal(a["W1"], init_params(g, 6)["W1"])
    assert np.max(np.abs(a["W1"])) <= 1 / math.sqrt(10)
    assert np.max(np.abs(a["W2"])) <= 1 / math.sqrt(2)


def test_adam_first_step():
    params = {"p": tensor(0.5)}
    state, new = adam_step(adam_init(params), params, {"p": tensor(1.0)})
    assert float(params["p"] - new["p"]) == pytest.approx(0.001, rel=1e-6)
    assert state.step == 1


def test_adam_zero_gradient():
    params = {"p": tensor([1.0, -2.0])}
    state = adam_init(params)
    state, params = adam_step(state, params, {"p": tensor([3.0, -1.0])})
    for _ in range(50):
        before = np.abs(state.m["p"]).sum() + state.v["p"].sum()
        state, params = adam_step(state, params, {"p": tensor([0.0, 0.0])})
        assert np.abs(state.m["p"]).sum() + state.v["p"].sum() < before
    # from fresh moments a zero gradient moves nothing
    fresh = {"q": tensor([1.0, 2.0])}
    _, out = adam_step(adam_init(fresh), fresh, {"q": tensor([0.0, 0.0])})
    assert np.array_equal(out["q"], fresh["q"])


@given(st.lists(st.floats(-5, 5).filter(lambda v: abs(v) > 1e-3), min_size=1, max_size=5))
def test_adam_first_step_opposes_gradient(g):
    params = {"w": tensor(np.zeros(len(g)))}
    _, new = adam_step(adam_init(params), params, {"w": tensor(g)})
    assert new["w"].shape == (len(g),)
    assert np.all(np.sign(new["w"]) == -np.sign(g))
    assert np.allclose(np.abs(new["w"]), 0.001, rtol=1e-4)


def test_adam_sign_degenerate_case():
    params = {"w": tensor([0.0, 0.0])}
    state = AdamState(0, {"w": np.zeros(2)}, {"w": np.zeros(2)}, alpha=0.1, beta1=0.0, beta2=0.0,
                      eps=0.0)
    _, new = adam_step(state, params, {"w": tensor([3.0, -0.2])})
    assert np.allclose(new["w"], [-0.1, 0.1], rtol=1e-15)


def test_optimizer_shape_errors():
    params = {"w": tensor([0.0, 0.0])}
    with pytest.raises(ShapeError):
        adam_step(adam_init(params), params, {"w": tensor([1.0])})
    with pytest.raises(ShapeError):
        sgd_step(params, {"v": tensor([1.0, 1.0])}, 0.1)


def test_sgd_examples():
    p = {"a": tensor(1.0)}
    assert float(sgd_step(p, {"a": tensor(2.0)}, 0.1)["a"]) == pytest.approx(0.8)
    assert sgd_step(p, {"a": tensor(2.0)}, 0.0)["a"] == p["a"]
    g = {"a": tensor(0.3)}
    two = sgd_step(sgd_step(p, g, 0.1), g, 0.1)
    one = sgd_step(p, {"a": tensor(0.6)}, 0.1)
    assert float(two["a"]) == pytest.approx(float(one["a"]), abs=1e-15)


def test_shuffle_is_permutation():
    order, r = shuffled(50, Rng.stream(1))
    assert sorted(order) == list(range(50))
    assert order != list(range(50))
    assert r.draws == 49


@pytest.fixture(scope="module")
def images():
    m = mnist.load_mnist_idx(*mnist.find_files(DATA))
    return binarize(m.load(200)[0])


def small_aevb():
    return build_aevb(VaeDims(784, 16, 2))


def test_training_reproducible(images):
    g = small_aevb()
    a = train(g, images, 2, 50, 3)
    b = train(g, images, 2, 50, 3)
    assert [r.mean_cost for r in a.log] == [r.mean_cost for r in b.log]
    assert all(np.array_equal(a.params[p], b.params[p]) for p in g.params)


def test_zero_epochs(images):
    g = small_aevb()
    init = init_params(g, 4)
    res = train(g, images, 0, 50, 4, params=init)
    assert res.log == [] and all(res.params[p] is init[p] for p in g.params)


def test_sink_and_log_format(images):
    got = []
    res = train(small_aevb(), images[:100], 1, 50, 0, sink=got.append)
    assert got == res.log and got[0].epoch == 1
    line = format_record(got[0])
    epoch, cost, secs = line.strip().split(",")
    assert int(epoch) == 1 and float(cost) == got[0].mean_cost
    header = log_header({"seed": 0})
    assert header.startswith("# desk-scale config") and header.endswith("epoch,mean_cost,seconds\n")


@pytest.mark.parametrize("seed", range(5))
def test_desk_losses_finite(images, seed):
    res = train(build_aevb(VaeDims(784, 64, 2)), images, 1, 100, seed)
    assert all(math.isfinite(r.mean_cost) for r in res.log)


def test_refuses_bad_graph(images):
    b = GraphBuilder()
    b.input("x", (784,))
    b.input("w", (784,))
    b.op("p", "mul", "w", "x")
    b.op("lp", "log", "p")
    b.op("s", "sum_all", "lp")
    with pytest.raises(TrainingRefused):
        train(b.build(params=["w"]), images, 1, 10, 0)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_checkpoints(images, tmp_path):
    g = small_aevb()
    params = init_params(g, 0)
    params["W_out"] = tensor(np.full(params["W_out"].shape, 1e308))
    with pytest.raises(TrainingDiverged) as e:
        train(g, images, 1, 50, 0, params=params, checkpoint_dir=tmp_path / "ck")
    assert e.value.checkpoint is not None
    assert load_graph(tmp_path / "ck" / "graph.json") == g
    saved = load_assignment(tmp_path / "ck" / "params.json")
    assert np.array_equal(saved["W_out"], params["W_out"])
