import json
import subprocess
import sys

import pytest

from scgrad import corpus
from scgrad.cli import main
from scgrad.graph import load_graph, well_formed
from scgrad.transform import derive_aevb

DATA = "tests/data/mnist1k"


@pytest.fixture(scope="module")
def cdir(tmp_path_factory):
    d = tmp_path_factory.mktemp("corpus")
    corpus.write_corpus(d)
    return d


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


def test_grad_check_all_passes(capsys):
    code, out, _ = run(capsys, "grad-check", "--trials", 20)
    assert code == 0 and json.loads(out)["failed"] == []


def test_grad_check_sabotaged_softplus(capsys):
    code, out, _ = run(capsys, "--sabotage", "softplus-grad", "grad-check", "--ops", "softplus,exp")
    assert code == 1 and json.loads(out)["failed"] == ["softplus"]


@pytest.mark.parametrize("argv", [["grad-check", "--ops", "tanh"], ["grad-check", "--bogus"],
                                  ["frobnicate"], ["unbiased-check", "--graph", "nope.json",
                                                   "--theta", "nope.json"]])
def test_input_errors_exit_3(capsys, argv):
    with pytest.raises(SystemExit) as e:
        sys.exit(main(argv))
    assert e.value.code == 3


def test_bad_env_seed(capsys, monkeypatch):
    monkeypatch.setenv("SCGRAD_SEED", "abc")
    code, _, err = run(capsys, "grad-check", "--ops", "neg", "--trials", 2)
    assert code == 3 and "SCGRAD_SEED" in err


def test_env_seed_used(capsys, monkeypatch, cdir):
    monkeypatch.setenv("SCGRAD_SEED", "11")
    _, out, _ = run(capsys, "unbiased-check", "--graph", cdir / "gauss_mean.graph.json",
                    "--theta", cdir / "gauss_mean.theta.json", "--n", 1000)
    assert json.loads(out)["seed"] == 11
    _, out, _ = run(capsys, "unbiased-check", "--graph", cdir / "gauss_mean.graph.json",
                    "--theta", cdir / "gauss_mean.theta.json", "--n", 1000, "--seed", 5)
    assert json.loads(out)["seed"] == 5


def test_unbiased_check_codes(capsys, cdir):
    def check(name, *extra):
        return run(capsys, *extra, "unbiased-check", "--graph", cdir / f"{name}.graph.json",
                   "--theta", cdir / f"{name}.theta.json", "--n", 20000, "--seed", 42)[0]

    assert check("chain") == 0
    assert check("vector_leaf") == 2
    assert check("duplicate_id") == 2
    assert check("softplus_at_pi", "--sabotage", "softplus-grad") == 1


def test_precheck(capsys, cdir):
    code, out, _ = run(capsys, "precheck", "--graph", cdir / "diamond.graph.json",
                       "--theta", cdir / "diamond.theta.json")
    assert code == 0 and json.loads(out)["passed"]
    code, _, _ = run(capsys, "precheck", "--graph", cdir / "duplicate_id.graph.json")
    assert code == 2


def test_transform_round_trip(capsys, cdir, tmp_path):
    out_path = tmp_path / "aevb.json"
    code, out, _ = run(capsys, "transform", "--graph", cdir / "vae_small.graph.json",
                       "--pass", "derive-aevb", "--out", out_path, "--check")
    res = json.loads(out)
    assert code == 0 and res["check"]["passed"]
    g = load_graph(out_path)
    assert well_formed(g).passed
    assert g == derive_aevb(load_graph(cdir / "vae_small.graph.json"))
    code, out, _ = run(capsys, "precheck", "--graph", out_path)
    assert code == 0


def test_transform_detects_kl_sign_bug(capsys, cdir):
    code, out, _ = run(capsys, "--sabotage", "kl-sign", "transform", "--graph",
                       cdir / "vae_small.graph.json", "--pass", "derive-aevb", "--check")
    assert code == 1 and not json.loads(out)["check"]["passed"]


def test_transform_noop_note(capsys, cdir):
    code, out, _ = run(capsys, "transform", "--graph", cdir / "chain.graph.json",
                       "--pass", "integrate-kl")
    res = json.loads(out)
    assert code == 0 and "no-op" in res["note"] and res["nodes_before"] == res["nodes_after"]


def test_eval(capsys, cdir):
    code, out, _ = run(capsys, "eval", "--graph", cdir / "gauss_mean.graph.json",
                       "--theta", cdir / "gauss_mean.theta.json")
    res = json.loads(out)
    assert code == 0 and res["method"] == "quadrature"
    assert res["expected_cost"] == pytest.approx(0.7, abs=1e-9)


@pytest.fixture(scope="module")
def aevb_desk(cdir):
    p = cdir / "aevb_desk.graph.json"
    assert main(["transform", "--graph", str(cdir / "vae_desk.graph.json"),
                 "--pass", "derive-aevb", "--out", str(p)]) == 0
    return p


def read_csv(path):
    lines = path.read_text().splitlines()
    assert lines[0].startswith("# ") and lines[1] == "epoch,mean_cost,seconds"
    return [line.split(",") for line in lines[2:]]


def test_train_log_reproducible(capsys, aevb_desk, tmp_path):
    logs = []
    for i in range(2):
        log = tmp_path / f"run{i}.csv"
        code, _, _ = run(capsys, "train", "--graph", aevb_desk, "--mnist", DATA, "--epochs", 5,
                         "--limit", 300, "--log", log, "--seed", 3,
                         "--checkpoint", tmp_path / f"ck{i}")
        assert code == 0
        logs.append(read_csv(log))
    a, b = logs
    assert len(a) == 5 and [r[0] for r in a] == ["1", "2", "3", "4", "5"]
    assert [r[:2] for r in a] == [r[:2] for r in b]
    assert (tmp_path / "ck0" / "params.json").read_bytes() == \
        (tmp_path / "ck1" / "params.json").read_bytes()


def test_train_zero_epochs(capsys, aevb_desk, tmp_path):
    log = tmp_path / "z.csv"
    code, _, _ = run(capsys, "train", "--graph", aevb_desk, "--mnist", DATA, "--epochs", 0,
                     "--log", log)
    assert code == 0 and read_csv(log) == []


def test_train_missing_data(capsys, aevb_desk, tmp_path):
    code, _, err = run(capsys, "train", "--graph", aevb_desk, "--mnist", tmp_path)
    assert code == 3 and "input error" in err


def test_module_entry_point():
    r = subprocess.run([sys.executable, "-m", "scgrad", "grad-check", "--ops", "neg",
                        "--trials", "3"], capture_output=True, text=True)
    assert r.returncode == 0 and json.loads(r.stdout)["passed"]
    r = subprocess.run([sys.executable, "-m", "scgrad"], capture_output=True, text=True)
    assert r.returncode == 3


def test_transform_check_at_desk_scale(capsys, cdir):
    code, out, _ = run(capsys, "transform", "--graph", cdir / "vae_desk.graph.json",
                       "--pass", "derive-aevb", "--check")
    res = json.loads(out)["check"]
    assert code == 0 and res["passed"] and res["details"]["mode"] == "quadrature"
    code, _, _ = run(capsys, "--sabotage", "kl-sign", "transform", "--graph",
                     cdir / "vae_desk.graph.json", "--pass", "derive-aevb", "--check")
    assert code == 1
