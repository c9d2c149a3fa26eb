"""Command-line entry point: ``solve``, ``certify``, ``bench`` and ``gen``.

Exit codes: 0 success, 2 configuration error, 3 certification failure,
4 I/O error. A flat ``key = value`` file given with ``--config`` supplies
defaults that explicit flags override.
"""

from __future__ import annotations

import argparse
import itertools
import logging
import os
import sys

import numpy as np

from .data_io import (
    LibsvmParseError,
    build_graph_matrix,
    gen_dataset,
    gen_synthetic,
    load_libsvm,
    save_libsvm,
)
from .harness import emit_csv
from .inner import ScheduleParams
from .numerics import SeededRng
from .problem import make_fused_lasso
from .solvers import SolverConfig, run
from .stepsize_cert import Region, StepsizePair, certify, in_region, region_poly

__all__ = ["main", "build_parser", "read_config"]

log = logging.getLogger(__name__)

EXIT_OK, EXIT_CONFIG, EXIT_CERT, EXIT_IO = 0, 2, 3, 4


class ConfigError(ValueError):
    pass


def read_config(path) -> dict:
    """Flat ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    with open(path, encoding="utf-8") as fh:
        for n, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, val = line.partition("=")
            if not sep or not key.strip():
                raise ConfigError(f"{path}:{n}: expected 'key = value'")
            out[key.strip().replace("-", "_")] = val.strip()
    return out


def _mode(text):
    """``strict``/``adaptive`` or a number."""
    try:
        return float(text)
    except ValueError:
        if text not in ("strict", "adaptive"):
            raise argparse.ArgumentTypeError(f"expected strict, adaptive or a number, got {text!r}")
        return text


def _lmode(text):
    try:
        return float(text)
    except ValueError:
        if text not in ("zero", "linearized"):
            raise argparse.ArgumentTypeError(f"expected zero, linearized or a number, got {text!r}")
        return text


def _add_solver_flags(p):
    p.add_argument("--problem", choices=["fused-lasso", "quadratic", "alm"], default="fused-lasso",
                   help="instance kind")
    p.add_argument("--data", default=None, help="LIBSVM file (fused-lasso); synthetic if omitted")
    p.add_argument("--dims", type=int, nargs="+", default=None,
                   help="synthetic sizes: 'l N' for fused-lasso, 'n' otherwise")
    p.add_argument("--data-seed", type=int, default=0, help="seed of the synthetic instance")
    p.add_argument("--threshold", type=float, default=0.5,
                   help="feature-graph correlation threshold")
    p.add_argument("--mu", type=float, default=1e-5, help="l1 weight of the fused lasso")
    p.add_argument("--beta", type=float, default=None,
                   help="penalty; 0.001 for fused-lasso and 1.0 otherwise when omitted")
    p.add_argument("--tau", type=float, default=0.9, help="first dual stepsize")
    p.add_argument("--s", type=float, default=1.09, help="second dual stepsize")
    p.add_argument("--method", choices=["auto", "sas", "as-admm", "as-alm"], default="auto",
                   help="outer method; auto picks from the problem structure")
    p.add_argument("--L-mode", dest="L_mode", type=_lmode, default="zero",
                   help="y-step proximal term: zero, linearized or a weight sigma")
    p.add_argument("--estimator", choices=["plain", "svrg"], default="plain",
                   help="stochastic gradient estimator")
    p.add_argument("--deterministic", action="store_true",
                   help="use full gradients (N treated as 1)")
    p.add_argument("--mk-mode", type=_mode, default="strict",
                   help="proximal metric M_k: strict, adaptive or a fixed weight")
    p.add_argument("--rho-min", type=float, default=None,
                   help="adaptive M_k floor; a tenth of the strict weight when omitted")
    p.add_argument("--c1", type=float, default=None, help="schedule c1; 1/nu when omitted")
    p.add_argument("--c2", type=float, default=None, help="schedule c2; 1/(2 nu) when omitted")
    p.add_argument("--c3", type=float, default=1.0, help="schedule c3")
    p.add_argument("--rho", type=float, default=1.01, help="schedule exponent")
    p.add_argument("--m", type=int, default=5, help="minimum inner iterations")
    p.add_argument("--budget-iters", type=int, default=None,
                   help="outer iteration budget; 1000 when no budget is given")
    p.add_argument("--budget-sec", type=float, default=None, help="wall-clock budget in seconds")
    p.add_argument("--budget-grads", type=int, default=None,
                   help="budget in component-gradient evaluations")
    p.add_argument("--ergodic-frac", type=float, default=1.0 / 3.0,
                   help="budget fraction after which rows report the ergodic average")
    p.add_argument("--report-every", type=int, default=1, help="outer iterations between rows")
    p.add_argument("--tol", type=float, default=None, help="stop once opt_err <= tol")
    p.add_argument("--seed", type=int, default=0, help="solver seed")
    p.add_argument("--out", default=None, help="CSV output path")


def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.ArgumentDefaultsHelpFormatter
    parser = argparse.ArgumentParser(prog="sasadmm", description=__doc__, formatter_class=fmt)
    parser.add_argument("--log-level", default="WARNING", help="logging level")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve", help="run one solver instance", formatter_class=fmt)
    p.add_argument("--config", default=None, help="flat key = value file")
    _add_solver_flags(p)

    p = sub.add_parser("certify", help="check the stepsize region and matrix identities",
                       formatter_class=fmt)
    p.add_argument("--config", default=None, help="flat key = value file")
    p.add_argument("--tau", type=float, default=0.9, help="first dual stepsize")
    p.add_argument("--s", type=float, default=1.09, help="second dual stepsize")
    p.add_argument("--beta", type=float, default=1.0, help="penalty parameter")
    p.add_argument("--dim-b", type=int, nargs=2, default=[3, 4], metavar=("ROWS", "COLS"),
                   help="shape of the random B matrices")
    p.add_argument("--trials", type=int, default=100, help="random instances to certify")
    p.add_argument("--seed", type=int, default=0, help="seed of the random instances")

    p = sub.add_parser("bench", help="run a sweep defined in a config file", formatter_class=fmt)
    p.add_argument("--config", required=True,
                   help="solve options; comma-separated values span the sweep")
    p.add_argument("--out-dir", default="bench-out", help="directory for the per-cell CSVs")

    p = sub.add_parser("gen", help="write a synthetic LIBSVM dataset", formatter_class=fmt)
    p.add_argument("--config", default=None, help="flat key = value file")
    p.add_argument("--features", type=int, default=50, help="feature count l")
    p.add_argument("--samples", type=int, default=200, help="sample count N")
    p.add_argument("--flip", type=float, default=0.05, help="fraction of flipped labels")
    p.add_argument("--seed", type=int, default=0, help="generator seed")
    p.add_argument("--out", required=True, help="LIBSVM output path")
    return parser


def _subparser(parser, name):
    for act in parser._subparsers._group_actions:
        return act.choices[name]
    raise KeyError(name)


def _apply_config(parser, argv):
    """Parse twice so that file values become defaults below explicit flags."""
    args = parser.parse_args(argv)
    path = getattr(args, "config", None)
    if not path or args.command == "bench":
        return args
    sub = _subparser(parser, args.command)
    known = {a.dest: a for a in sub._actions}
    values = read_config(path)
    defaults = {}
    for key, text in values.items():
        act = known.get(key)
        if act is None or key in ("help", "config"):
            raise ConfigError(f"unknown config key {key!r}")
        defaults[key] = _convert(act, text)
    sub.set_defaults(**defaults)
    return parser.parse_args(argv)


def _convert(act, text):
    if isinstance(act, argparse._StoreTrueAction):
        return text.lower() in ("1", "true", "yes", "on")
    parts = text.split() if act.nargs in ("+", 2) else [text]
    conv = act.type or str
    try:
        vals = [conv(p) for p in parts]
    except (ValueError, argparse.ArgumentTypeError) as exc:
        raise ConfigError(f"bad value {text!r} for {act.dest}: {exc}") from None
    if act.choices is not None and any(v not in act.choices for v in vals):
        raise ConfigError(f"value {text!r} for {act.dest} not in {sorted(act.choices)}")
    return vals if act.nargs in ("+", 2) else vals[0]


# -- solve -------------------------------------------------------------------

def _build_problem(args):
    if args.problem == "fused-lasso":
        if args.data:
            ds = load_libsvm(args.data)
            G = build_graph_matrix(ds.features, args.threshold)
            return make_fused_lasso(ds.features, ds.labels, G, args.mu)
        dims = tuple(args.dims) if args.dims else None
        if dims is not None and len(dims) != 2:
            raise ConfigError("fused-lasso --dims takes two values: l N")
        prob, _ = gen_synthetic("fused-lasso", dims, seed=args.data_seed, mu=args.mu,
                                threshold=args.threshold)
        return prob
    if args.data:
        raise ConfigError("--data is only used with --problem fused-lasso")
    dims = tuple(args.dims) if args.dims else None
    if dims is not None and len(dims) != 1:
        raise ConfigError(f"{args.problem} --dims takes one value")
    prob, _ = gen_synthetic(args.problem, dims, seed=args.data_seed)
    return prob


def _solver_config(args, problem) -> SolverConfig:
    nu = problem.f.nu if problem.f.nu > 0 else 1.0
    sched = ScheduleParams(
        c1=args.c1 if args.c1 is not None else 1.0 / nu,
        c2=args.c2 if args.c2 is not None else 1.0 / (2.0 * nu),
        c3=args.c3, rho=args.rho, m=args.m, nu=nu,
    )
    beta = args.beta if args.beta is not None else (0.001 if args.problem == "fused-lasso" else 1.0)
    iters = args.budget_iters
    if iters is None and args.budget_sec is None and args.budget_grads is None:
        iters = 1000
    return SolverConfig(
        beta=beta, pair=StepsizePair(args.tau, args.s), L_mode=args.L_mode, schedule=sched,
        mk_mode=args.mk_mode, rho_min=args.rho_min, estimator=args.estimator,
        deterministic=args.deterministic, max_iters=iters, budget_seconds=args.budget_sec,
        budget_grads=args.budget_grads, ergodic_start_fraction=args.ergodic_frac,
        seed=args.seed, report_every=args.report_every, tol=args.tol,
    )


def cmd_solve(args, out=None) -> int:
    out = out or sys.stdout
    problem = _build_problem(args)
    cfg = _solver_config(args, problem)
    method = None if args.method == "auto" else args.method
    rec = run(problem, cfg, stepper=method)
    last = rec.rows[-1]
    if args.out:
        emit_csv(rec, args.out, extra={"problem": args.problem, "method": args.method})
    print(
        f"{args.problem}: iter={last.iter} mode={last.mode} obj={last.obj:.10g} "
        f"obj_err={last.obj_err:.3e} equ_err={last.equ_err:.3e} opt_err={last.opt_err:.3e}",
        file=out,
    )
    return EXIT_OK


# -- certify -----------------------------------------------------------------

def _random_psd(rng, n, rank=None):
    R = rng.normal(n * (rank or n)).reshape(n, rank or n)
    return R @ R.T


def cmd_certify(args, out=None) -> int:
    out = out or sys.stdout
    pair = StepsizePair(args.tau, args.s)
    if args.beta <= 0:
        raise ConfigError("beta must be positive")
    if not in_region(pair, Region.DELTA):
        t, s = pair.tau, pair.s
        why = []
        if not t + s > 0:
            why.append(f"tau + s = {t + s} is not positive")
        if not t <= 1:
            why.append(f"tau = {t} exceeds 1")
        if not region_poly(pair) >= 0:
            why.append(f"Delta polynomial -tau^2-s^2-tau*s+tau+s+1 = {region_poly(pair):g} < 0")
        print(f"FAIL: ({t}, {s}) is outside Delta: " + "; ".join(why), file=out)
        return EXIT_CERT
    rows, cols = args.dim_b
    rng = SeededRng(args.seed)
    worst_id, worst_rel, failures = 0.0, 0.0, 0
    n1 = 3
    for _ in range(args.trials):
        B = rng.normal(rows * cols).reshape(rows, cols)
        L = float(rng.random()) * np.eye(cols)
        D = _random_psd(rng, n1, rank=2)
        rep = certify(pair, args.beta, D, L, B)
        scale = max(1.0, args.beta, 1.0 / args.beta) * max(1.0, float(np.abs(B).max()) ** 2)
        tol = 1e-9 * scale
        ok = rep.ok and rep.identity_residual <= tol and rep.relation_residual <= tol
        failures += not ok
        worst_id = max(worst_id, rep.identity_residual / scale)
        worst_rel = max(worst_rel, rep.relation_residual / scale)
    w0, w1, w2 = certify(pair, args.beta, np.eye(1), np.eye(1), np.eye(1)).omegas
    print(
        f"({pair.tau}, {pair.s}) in Delta, polynomial {region_poly(pair):.6g}; "
        f"omega = ({w0:.6g}, {w1:.6g}, {w2:.6g})",
        file=out,
    )
    print(
        f"{args.trials} trials, B {rows}x{cols}: {args.trials - failures} passed; "
        f"max scaled identity residual {worst_id:.3e}, "
        f"max scaled Qt P - Q residual {worst_rel:.3e}",
        file=out,
    )
    return EXIT_OK if failures == 0 else EXIT_CERT


# -- bench and gen -----------------------------------------------------------

def cmd_bench(args, out=None) -> int:
    out = out or sys.stdout
    values = read_config(args.config)
    parser = build_parser()
    sub = _subparser(parser, "solve")
    known = {a.dest: a for a in sub._actions}
    axes = []
    for key, text in values.items():
        act = known.get(key)
        if act is None or key in ("help", "config", "out"):
            raise ConfigError(f"unknown bench key {key!r}")
        axes.append([(key, v.strip()) for v in text.split(",")])
    os.makedirs(args.out_dir, exist_ok=True)
    code = EXIT_OK
    for idx, cell in enumerate(itertools.product(*axes)):
        argv = ["solve"]
        for key, text in cell:
            act = known[key]
            flag = act.option_strings[-1]
            if isinstance(act, argparse._StoreTrueAction):
                if text.lower() in ("1", "true", "yes", "on"):
                    argv.append(flag)
            else:
                argv += [flag, *text.split()]
        path = os.path.join(args.out_dir, f"cell{idx:03d}.csv")
        argv += ["--out", path]
        print(f"cell {idx}: {' '.join(argv[1:])}", file=out)
        code = max(code, cmd_solve(parser.parse_args(argv), out))
    return code


def cmd_gen(args, out=None) -> int:
    out = out or sys.stdout
    ds = gen_dataset(args.features, args.samples, args.seed, flip=args.flip)
    save_libsvm(ds, args.out)
    print(f"wrote {ds.sample_count} samples x {ds.feature_count} features to {args.out}", file=out)
    return EXIT_OK


COMMANDS = {"solve": cmd_solve, "certify": cmd_certify, "bench": cmd_bench, "gen": cmd_gen}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = _apply_config(parser, argv)
    except SystemExit as exc:  # argparse usage errors and --help
        return int(exc.code or 0)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    logging.basicConfig(level=getattr(logging, str(args.log_level).upper(), logging.WARNING))
    try:
        return COMMANDS[args.command](args)
    except (OSError, LibsvmParseError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
