"""Command-line interface.

Exit codes: 0 pass, 1 check failure, 2 precondition failure or refusal,
3 input error (bad flags, unreadable or malformed files).
"""
from __future__ import annotations

import argparse
import contextlib
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import mnist, registry, sabotage, transform, verify
from .dist import OracleUnavailable, Rng
from .graph import INPUT, GraphError, dump_graph, load_assignment, load_graph, well_formed
from .ops import OPERATORS
from .registry import SELF_CHECK_TOL, check_pullback
from .report import CheckReport
from .tensor import tensor

EXIT_OK, EXIT_FAIL, EXIT_REFUSED, EXIT_INPUT = 0, 1, 2, 3
GRAD_CHECK_TRIALS = 100


class InputError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        sys.exit(EXIT_INPUT)


def default_seed() -> int:
    raw = os.environ.get("SCGRAD_SEED")
    if raw is None:
        return 0
    try:
        return int(raw, 0)
    except ValueError:
        raise InputError(f"SCGRAD_SEED must be an integer, got {raw!r}") from None


def _emit(obj) -> None:
    print(json.dumps(obj, sort_keys=True, indent=2))


def _load_graph(path):
    try:
        return load_graph(path)
    except OSError as e:
        raise InputError(f"cannot read graph: {e}") from None
    except GraphError as e:
        raise InputError(str(e)) from None


def _load_theta(path):
    try:
        return load_assignment(path)
    except OSError as e:
        raise InputError(f"cannot read assignment: {e}") from None
    except ValueError as e:
        raise InputError(f"{path}: {e}") from None


def seeded_assignment(g, seed: int) -> dict:
    """Values for every input: parameters as in training, other inputs uniform in [0, 1)."""
    from .train import init_params
    theta = init_params(g, seed)
    rng = Rng.stream(seed, 7)
    for n in g.nodes:
        if n.op == INPUT and n.id not in theta:
            u, rng = rng.uniforms(int(np.prod(n.shape, dtype=np.int64)))
            theta[n.id] = tensor(np.array(u).reshape(n.shape))
    return theta


def cmd_grad_check(args) -> int:
    names = sorted(OPERATORS) if args.ops == "all" else args.ops.split(",")
    unknown = [n for n in names if n not in OPERATORS]
    if unknown:
        raise InputError(f"unknown operator(s): {', '.join(unknown)}")
    reg = registry.current()
    results, failed = [], []
    for name in names:
        r = check_pullback(OPERATORS[name], reg.pullbacks[name], args.trials, seed=args.seed,
                           forward=reg.forwards[name])
        rep = CheckReport(f"grad-check:{name}", r.passed, measured=r.max_rel_err,
                          tolerance=SELF_CHECK_TOL, seed=args.seed,
                          details={"trials": args.trials})
        if not r.passed:
            rep.violations.append((name, f"pullback disagrees with finite differences "
                                         f"(max rel err {r.max_rel_err:.3g})"))
            failed.append(name)
        results.append(rep.to_dict())
    _emit({"passed": not failed, "failed": failed, "checks": results})
    return EXIT_FAIL if failed else EXIT_OK


def cmd_unbiased_check(args) -> int:
    g = _load_graph(args.graph)
    theta = _load_theta(args.theta)
    rep = verify.test_unbiased(g, theta, args.n, args.seed)
    _emit(rep.to_dict())
    if rep.passed:
        return EXIT_OK
    return EXIT_REFUSED if rep.details.get("refused") else EXIT_FAIL


def cmd_precheck(args) -> int:
    g = _load_graph(args.graph)
    theta = _load_theta(args.theta) if args.theta else seeded_assignment(g, args.seed)
    pre = verify.check_preconditions(g, theta)
    _emit(pre.to_dict())
    return EXIT_OK if pre.passed else EXIT_REFUSED


def cmd_transform(args) -> int:
    g = _load_graph(args.graph)
    wf = well_formed(g)
    if not wf.passed:
        _emit({"pass": args.pass_name, "well_formed": wf.to_dict()})
        return EXIT_REFUSED
    out, sites = transform.REWRITES[args.pass_name].run(g)
    result = {"pass": args.pass_name, "sites": [str(s) for s in sites],
              "nodes_before": len(g.nodes), "nodes_after": len(out.nodes)}
    if not sites:
        result["note"] = "no-op: no match for this pass; graph unchanged"
    if args.out:
        dump_graph(out, args.out)
        result["out"] = str(args.out)
    code = EXIT_OK
    if args.check:
        theta = _load_theta(args.theta) if args.theta else seeded_assignment(g, args.seed)
        rep = transform.check_equivalent(g, out, theta, seed=args.seed)
        result["check"] = rep.to_dict()
        code = EXIT_OK if rep.passed else EXIT_FAIL
    _emit(result)
    return code


def cmd_train(args) -> int:
    from . import train as T
    g = _load_graph(args.graph)
    try:
        images, _ = mnist.find_files(args.mnist)
        data = T.binarize(mnist.read_image_header(images).load(args.limit))
    except (OSError, mnist.IdxFormatError) as e:
        raise InputError(str(e)) from None
    config = {"graph": Path(args.graph).name, "images": len(data), "epochs": args.epochs,
              "batch": args.batch, "seed": args.seed, "optimizer": "adam"}
    with contextlib.ExitStack() as stack:
        sink = (stack.enter_context(open(args.log, "w", newline="")) if args.log
                else sys.stdout)
        sink.write(T.log_header(config))

        def record(rec):
            sink.write(T.format_record(rec))
            sink.flush()
        try:
            res = T.train(g, data, args.epochs, args.batch, args.seed, sink=record,
                          checkpoint_dir=args.checkpoint)
        except ValueError as e:
            raise InputError(str(e)) from None
        except T.TrainingRefused as e:
            print(json.dumps(e.report.to_dict(), sort_keys=True), file=sys.stderr)
            return EXIT_REFUSED
        except T.TrainingDiverged as e:
            print(f"training diverged: {e}; checkpoint: {e.checkpoint}", file=sys.stderr)
            return EXIT_FAIL
    if args.checkpoint:
        T.checkpoint(g, res.params, args.checkpoint)
    return EXIT_OK


def cmd_eval(args) -> int:
    g = _load_graph(args.graph)
    theta = _load_theta(args.theta)
    pre = verify.check_preconditions(g, theta)
    if not pre.well_formed.passed:
        _emit({"well_formed": pre.well_formed.to_dict()})
        return EXIT_REFUSED
    try:
        out = {"method": "quadrature", "expected_cost": verify.expected_cost(g, theta)}
    except OracleUnavailable as e:
        m = verify.mc_cost(g, theta, args.n, args.seed)
        out = {"method": "monte-carlo", "expected_cost": float(m.mean[0]),
               "se": float(m.se[0]), "n": args.n, "seed": args.seed,
               "oracle_unavailable": str(e)}
    _emit(out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="scgrad", description="Stochastic computation graph checks and training.")
    p.add_argument("--sabotage", choices=sabotage.SABOTAGES,
                   help="inject a known bug into the operator registry")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def seed_flag(sp):
        sp.add_argument("--seed", type=lambda s: int(s, 0), default=None,
                        help="random seed (default: $SCGRAD_SEED or 0)")

    sp = sub.add_parser("grad-check", help="finite-difference check of pullbacks")
    sp.add_argument("--ops", default="all", help="'all' or comma-separated operator names")
    sp.add_argument("--trials", type=int, default=GRAD_CHECK_TRIALS)
    seed_flag(sp)
    sp.set_defaults(func=cmd_grad_check)

    sp = sub.add_parser("unbiased-check", help="Monte Carlo unbiasedness test of bprop")
    sp.add_argument("--graph", required=True)
    sp.add_argument("--theta", required=True)
    sp.add_argument("--n", type=int, default=200_000)
    seed_flag(sp)
    sp.set_defaults(func=cmd_unbiased_check)

    sp = sub.add_parser("precheck", help="check the four bprop preconditions")
    sp.add_argument("--graph", required=True)
    sp.add_argument("--theta", help="assignment JSON (default: seeded initialization)")
    seed_flag(sp)
    sp.set_defaults(func=cmd_precheck)

    sp = sub.add_parser("transform", help="apply a graph rewrite")
    sp.add_argument("--graph", required=True)
    sp.add_argument("--pass", dest="pass_name", required=True, choices=sorted(transform.REWRITES))
    sp.add_argument("--out")
    sp.add_argument("--check", action="store_true", help="verify the rewrite preserves the objective")
    sp.add_argument("--theta", help="assignment for --check (default: seeded initialization)")
    seed_flag(sp)
    sp.set_defaults(func=cmd_transform)

    sp = sub.add_parser("train", help="train a VAE-style graph on MNIST")
    sp.add_argument("--graph", required=True)
    sp.add_argument("--mnist", required=True, help="directory with train-*-idx*-ubyte[.gz]")
    sp.add_argument("--epochs", type=int, default=5)
    sp.add_argument("--batch", type=int, default=100)
    sp.add_argument("--limit", type=int, default=1000, help="number of images to use")
    sp.add_argument("--log", help="CSV output (default: stdout)")
    sp.add_argument("--checkpoint", help="directory for graph and parameter checkpoints")
    seed_flag(sp)
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("eval", help="expected cost of a graph at an assignment")
    sp.add_argument("--graph", required=True)
    sp.add_argument("--theta", required=True)
    sp.add_argument("--n", type=int, default=100_000, help="Monte Carlo samples if quadrature is unavailable")
    seed_flag(sp)
    sp.set_defaults(func=cmd_eval)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.seed is None:
            args.seed = default_seed()
        ctx = (registry.use(sabotage.sabotaged_registry(args.sabotage)) if args.sabotage
               else contextlib.nullcontext())
        with ctx:
            return args.func(args)
    except InputError as e:
        print(f"scgrad: input error: {e}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
