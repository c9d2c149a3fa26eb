"""Reference solutions, optimality certificates, rate fitting and CSV output."""

from __future__ import annotations

import csv
import logging

import numpy as np

from .inner import ScheduleParams
from .metrics import MetricRow, metrics
from .problem import ProblemSpec, QuadraticBlock, QuadraticSum, Solution, kkt_reference
from .solvers import SolverConfig, init_state, sas_admm_step, validate
from .stepsize_cert import StepsizePair

__all__ = [
    "CSV_HEADER",
    "MetricRow",
    "ReferenceError",
    "emit_csv",
    "metrics",
    "optimality_residual",
    "rate_fit",
    "read_csv",
    "reference_solution",
]

log = logging.getLogger(__name__)

CSV_HEADER = ("iter", "time_s", "mode", "obj", "obj_err", "equ_err", "opt_err")


class ReferenceError(RuntimeError):
    """The high-accuracy reference run failed to converge or to certify."""


def optimality_residual(problem: ProblemSpec, x, ys, lam, z=None) -> float:
    """Largest of the stationarity residuals and the constraint residual.

    For each nonsmooth block ``||y - prox_{g,1}(y + B^T lam)||``; for the
    smooth block ``||x - P_X(x - (grad f(x) - A^T lam))||``.
    """
    gx = problem.f.full_grad(x) - problem.A.T @ lam
    r = [float(np.linalg.norm(x - problem.X.project(x - gx)))]
    for blk, y in zip(problem.blocks, ys):
        r.append(float(np.linalg.norm(y - blk.g.prox(1.0, y + blk.B.T @ lam))))
    if problem.lead is not None and z is not None:
        r.append(float(np.linalg.norm(z - problem.lead.g.prox(1.0, z + problem.lead.B.T @ lam))))
    r.append(float(np.linalg.norm(problem.residual(x, ys, z))))
    return max(r)


def _is_quadratic(problem):
    return (
        isinstance(problem.f, QuadraticSum)
        and problem.lead is None
        and all(isinstance(b.g, QuadraticBlock) for b in problem.blocks)
    )


def reference_solution(problem: ProblemSpec, beta: float | None = None, tol: float = 1e-12,
                       max_iters: int = 1_000_000, certify_tol: float = 1e-8) -> Solution:
    """High-accuracy solution used as the error reference.

    Quadratic instances are solved through their KKT system. Other two-block
    instances use a deterministic full-gradient run (50 inner steps with
    ``eta = 1/(2 nu)``, strict ``M_k``) until successive iterates move by
    less than ``tol``, and the result must pass :func:`optimality_residual`
    at ``certify_tol``. The result is cached on ``problem.reference``.
    """
    if problem.reference is not None:
        return problem.reference
    if _is_quadratic(problem):
        problem.reference = kkt_reference(problem)
        return problem.reference
    if problem.n_blocks != 1 or problem.lead is not None:
        raise ValueError("reference runs support two-block instances only")
    nu = problem.f.nu if problem.f.nu > 0 else 1.0
    if beta is None:
        beta = 0.01 if problem.kind == "fused-lasso" else 1.0
    scalar, _ = problem.gram_scalar(problem.B)
    cfg = SolverConfig(
        beta=beta,
        pair=StepsizePair(0.9, 1.09),
        L_mode="zero" if scalar or problem.g.quadratic else "linearized",
        schedule=ScheduleParams.fixed(50, 1.0 / (2.0 * nu), nu=nu),
        mk_mode="strict",
        deterministic=True,
        max_iters=max_iters,
        ergodic_start_fraction=1.0,
    )
    cfg = validate(problem, cfg, sas_admm_step)
    st = init_state(problem, cfg)
    for _ in range(max_iters):
        prev = np.concatenate([st.x, *st.ys, st.lam])
        sas_admm_step(st, problem, cfg, st.rng)
        cur = np.concatenate([st.x, *st.ys, st.lam])
        if np.abs(cur - prev).max() < tol:
            break
    else:
        raise ReferenceError(f"reference run did not settle in {max_iters} iterations")
    res = optimality_residual(problem, st.x, st.ys, st.lam)
    if res > certify_tol:
        raise ReferenceError(f"reference optimality residual {res:g} exceeds {certify_tol:g}")
    log.info("reference settled after %d iterations, residual %.3g", st.k, res)
    problem.reference = Solution(
        x=st.x, ys=st.ys, lam=st.lam, F=problem.objective(st.x, st.ys)
    )
    return problem.reference


def rate_fit(rows, kappa: int = 0, min_rows: int = 5) -> float:
    """Least-squares slope of ``log(opt_err)`` against ``log(T)``.

    ``rows`` holds :class:`MetricRow` objects (ergodic rows are used, with
    ``T = iter - kappa``) or plain ``(T, err)`` pairs. Fewer than
    ``min_rows`` usable points is an error.
    """
    pts = []
    for r in rows:
        if isinstance(r, MetricRow):
            if r.mode != "ergodic":
                continue
            T, e = r.iter - kappa, r.opt_err
        else:
            T, e = r
        if T > 0 and e > 0 and np.isfinite(e):
            pts.append((T, e))
    if len(pts) < max(min_rows, 2):
        raise ValueError(f"rate_fit needs at least {min_rows} usable rows, got {len(pts)}")
    lt, le = np.log(np.array(pts)).T
    return float(np.polyfit(lt, le, 1)[0])


def _fmt(v) -> str:
    if isinstance(v, str):
        return v
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return "%.17g" % v


def emit_csv(record, path, extra: dict | None = None):
    """Write ``record`` as CSV with ``#`` comment lines echoing the config."""
    echo = dict(record.config)
    echo["seed"] = record.seed
    if record.ergodic_start is not None:
        echo["ergodic_start"] = record.ergodic_start
    echo.update(extra or {})
    with open(path, "w", newline="", encoding="utf-8") as fh:
        for key in sorted(echo):
            fh.write(f"# {key} = {echo[key]}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for r in record.rows:
            w.writerow([_fmt(getattr(r, k)) for k in CSV_HEADER])
    return path


def read_csv(path):
    """Parse a file written by :func:`emit_csv`; returns ``(rows, config)``."""
    config, lines = {}, []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.startswith("#"):
                key, _, val = line[1:].partition("=")
                config[key.strip()] = val.strip()
            else:
                lines.append(line)
    reader = csv.reader(lines)
    header = next(reader, None)
    if tuple(header or ()) != CSV_HEADER:
        raise ValueError(f"unexpected CSV header {header!r}")
    rows = []
    for rec in reader:
        it, t, mode, *vals = rec
        rows.append(MetricRow(int(it), float(t), mode, *map(float, vals)))
    return rows, config
