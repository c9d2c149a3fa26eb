"""Outer loops: symmetric ADMM with the accelerated stochastic x-step, its
single-block ALM form, and the three-block / multi-block extensions.

Every stepper mutates a :class:`SolverState` in place and returns it. The
driver :func:`run` owns budgets, ergodic averaging and metric rows.
"""

from __future__ import annotations

import copy
import logging
import math
import operator
import time
from dataclasses import dataclass, field
from functools import reduce

import numpy as np

from .inner import GradientEstimator, InnerConfig, MkController, ScheduleParams, schedule, xsub
from .metrics import MetricRow, metrics
from .numerics import SeededRng, as_dense, psd_certify
from .problem import ProblemSpec, SingleComponent, ZeroBlock
from .stepsize_cert import Region, StepsizePair, in_region, region_poly

__all__ = [
    "RunRecord",
    "SolverConfig",
    "SolverState",
    "as_admm_step",
    "as_alm_step",
    "certify_Mk",
    "gs3_step",
    "init_state",
    "pj_multiblock_step",
    "run",
    "sas_admm_step",
    "solve_block",
    "validate",
]

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SolverConfig:
    """Solver parameters.

    ``L_mode`` is ``"zero"``, ``"linearized"`` or a number ``sigma`` meaning
    ``L = sigma I``. ``mk_mode`` is ``"strict"``, ``"adaptive"`` or a number
    ``rho`` meaning ``M_k = rho I``. ``schedule=None`` takes the defaults
    built from the problem's ``nu``. At least one of the three budgets must
    be set; the first set one (iterations, gradients, seconds) also places
    the ergodic start.
    """

    beta: float = 1.0
    pair: StepsizePair = StepsizePair(0.9, 1.09)
    L_mode: object = "zero"
    schedule: ScheduleParams | None = None
    mk_mode: object = "strict"
    rho_min: float | None = None
    estimator: str = "plain"
    deterministic: bool = False
    max_iters: int | None = 1000
    budget_seconds: float | None = None
    budget_grads: int | None = None
    ergodic_start_fraction: float = 1.0 / 3.0
    seed: int = 0
    report_every: int = 1
    tol: float | None = None
    block_sigmas: tuple | None = None
    keep_trace: bool = False

    def echo(self) -> dict:
        d = {k: getattr(self, k) for k in self.__dataclass_fields__}
        d["tau"], d["s"] = self.pair.tau, self.pair.s
        del d["pair"]
        return d


@dataclass
class SolverState:
    k: int
    x: np.ndarray
    xbreve: np.ndarray
    ys: tuple
    lam: np.ndarray
    z: np.ndarray | None = None
    lam_half: np.ndarray | None = None
    lam_tilde: np.ndarray | None = None
    f: object = None
    est: GradientEstimator | None = None
    mk: MkController | None = None
    rng: SeededRng | None = None
    ergodic_on: bool = False
    count: int = 0
    sums: dict = field(default_factory=dict)
    trace: list | None = None

    @property
    def grad_evals(self) -> int:
        return self.est.grad_evals if self.est is not None else 0

    def ergodic_point(self):
        """``(x, ys, z, lam)`` of the running average of ``w_tilde``."""
        if self.count == 0:
            raise ValueError("no ergodic terms accumulated yet")
        S, T = self.sums, self.count
        z = S["z"] / T if S.get("z") is not None else None
        return S["x"] / T, tuple(y / T for y in S["ys"]), z, S["lam"] / T


@dataclass
class RunRecord:
    rows: list
    final: SolverState
    config: dict
    seed: int
    ergodic_start: int | None = None
    flags: dict = field(default_factory=dict)


# -- shared pieces -----------------------------------------------------------

def _resid(terms, b):
    """``(t_1 + t_2 + ...) - b`` in a fixed left-to-right order."""
    return reduce(operator.add, terms) - b


def solve_block(problem: ProblemSpec, blk, v, y_prev, beta: float, L):
    """Minimize ``g(y) + beta/2 ||B y - v||^2 + 1/2 ||y - y_prev||_L^2``.

    ``L`` is ``"zero"``, ``"linearized"`` (``L = gamma I - beta B^T B`` with
    ``gamma = 1.01 beta lambda_max(B^T B)``) or a number ``sigma``.
    """
    B, g = blk.B, blk.g
    if L == "linearized":
        gamma = 1.01 * beta * problem.sq_norm(B)
        if gamma == 0.0:
            return _degenerate(g, y_prev)
        yc = y_prev - beta * (B.T @ (B @ y_prev - v)) / gamma
        return g.prox(gamma, yc)
    sigma = 0.0 if L == "zero" else float(L)
    scalar, c2 = problem.gram_scalar(B)
    if scalar and c2 >= 0.0:
        gamma = beta * c2 + sigma
        if gamma == 0.0:
            return _degenerate(g, y_prev)
        if sigma == 0.0:
            point = (B.T @ v) / c2
        else:
            point = (beta * (B.T @ v) + sigma * y_prev) / gamma
        return g.prox(gamma, point)
    if g.quadratic:
        n = y_prev.shape[0]
        K = g.P + beta * as_dense(B.T @ B) + sigma * np.eye(n)
        return np.linalg.solve(K, beta * (B.T @ v) + sigma * y_prev - g.q)
    raise ValueError(
        "no exact solver for this y-subproblem (B^T B is not a multiple of the "
        "identity and g is not quadratic); use L_mode='linearized'"
    )


def _degenerate(g, y_prev):
    if isinstance(g, ZeroBlock):
        return y_prev.copy()
    raise ValueError("block with B = 0 needs g = 0 or a positive proximal weight")


def _inner(state: SolverState, problem, cfg: SolverConfig) -> InnerConfig:
    m_k, eta_k = schedule(state.k, cfg.schedule)
    return InnerConfig(m_k=m_k, eta_k=eta_k, H=problem.H, M_k=state.mk.rho)


def _x_step(state, problem, cfg, rng, r0):
    """``h = -A^T [lam - beta r0]`` then ``xsub``; returns ``A x^{k+1}``."""
    h = -(problem.A.T @ (state.lam - cfg.beta * r0))
    state.est.refresh(state.f, state.x)
    x_prev = state.x
    state.x, state.xbreve = xsub(
        state.x, state.xbreve, h, _inner(state, problem, cfg), state.est, state.f, problem.X, rng
    )
    return x_prev, problem.A @ state.x


def _finish(state, problem, r_full, x_prev):
    if state.trace is not None:
        state.trace.append(
            dict(
                x=state.x.copy(),
                ys=tuple(y.copy() for y in state.ys),
                z=None if state.z is None else state.z.copy(),
                lam=state.lam.copy(),
                lam_half=state.lam_half.copy(),
                lam_tilde=state.lam_tilde.copy(),
            )
        )
    if state.ergodic_on:
        S = state.sums
        if state.count == 0:
            S["x"] = state.x.copy()
            S["ys"] = [y.copy() for y in state.ys]
            S["z"] = None if state.z is None else state.z.copy()
            S["lam"] = state.lam_tilde.copy()
        else:
            S["x"] += state.x
            for acc, y in zip(S["ys"], state.ys):
                acc += y
            if state.z is not None:
                S["z"] += state.z
            S["lam"] += state.lam_tilde
        state.count += 1
    state.mk.update(x_prev, state.x, problem.A, float(np.linalg.norm(r_full)))
    state.k += 1
    return state


# -- steppers ----------------------------------------------------------------

def sas_admm_step(state: SolverState, problem: ProblemSpec, cfg: SolverConfig, rng):
    """One symmetric ADMM iteration with dual stepsizes ``(tau, s)``."""
    beta, tau, s = cfg.beta, cfg.pair.tau, cfg.pair.s
    A_b = problem.blocks[0]
    y = state.ys[0]
    By = A_b.B @ y
    r0 = _resid([problem.A @ state.x, By], problem.b)
    x_prev, Ax = _x_step(state, problem, cfg, rng, r0)
    r_half = _resid([Ax, By], problem.b)
    state.lam_tilde = state.lam - beta * r_half
    state.lam_half = state.lam - tau * beta * r_half
    v = state.lam_half / beta - _resid([Ax], problem.b)
    y = solve_block(problem, A_b, v, y, beta, cfg.L_mode)
    state.ys = (y,)
    r_full = _resid([Ax, A_b.B @ y], problem.b)
    state.lam = state.lam_half - s * beta * r_full
    return _finish(state, problem, r_full, x_prev)


def as_admm_step(state: SolverState, problem: ProblemSpec, cfg: SolverConfig, rng):
    """Accelerated stochastic ADMM: a single dual update with stepsize ``s``."""
    beta, s = cfg.beta, cfg.pair.s
    blk = problem.blocks[0]
    y = state.ys[0]
    By = blk.B @ y
    r0 = _resid([problem.A @ state.x, By], problem.b)
    x_prev, Ax = _x_step(state, problem, cfg, rng, r0)
    r_half = _resid([Ax, By], problem.b)
    state.lam_tilde = state.lam - beta * r_half
    state.lam_half = state.lam
    v = state.lam / beta - _resid([Ax], problem.b)
    y = solve_block(problem, blk, v, y, beta, cfg.L_mode)
    state.ys = (y,)
    r_full = _resid([Ax, blk.B @ y], problem.b)
    state.lam = state.lam - s * beta * r_full
    return _finish(state, problem, r_full, x_prev)


def as_alm_step(state: SolverState, problem: ProblemSpec, cfg: SolverConfig, rng):
    """Single-block augmented Lagrangian step with dual stepsize ``s`` in (0, 2]."""
    beta, s = cfg.beta, cfg.pair.s
    r0 = _resid([problem.A @ state.x], problem.b)
    x_prev, Ax = _x_step(state, problem, cfg, rng, r0)
    r_full = _resid([Ax], problem.b)
    state.lam_tilde = state.lam - beta * r_full
    state.lam_half = state.lam
    state.lam = state.lam - s * beta * r_full
    return _finish(state, problem, r_full, x_prev)


def gs3_step(state: SolverState, problem: ProblemSpec, cfg: SolverConfig, rng):
    """Gauss-Seidel three-block step: ``z``, then ``x``, then ``y``, then the duals."""
    beta, tau, s = cfg.beta, cfg.pair.tau, cfg.pair.s
    lead, blk = problem.lead, problem.blocks[0]
    y = state.ys[0]
    Ax0, By = problem.A @ state.x, blk.B @ y
    v = state.lam / beta - _resid([Ax0, By], problem.b)
    zmode = "zero" if problem.gram_scalar(lead.B)[0] else "linearized"
    state.z = solve_block(problem, lead, v, state.z, beta, zmode)
    Cz = lead.B @ state.z
    r0 = _resid([Ax0, By, Cz], problem.b)
    x_prev, Ax = _x_step(state, problem, cfg, rng, r0)
    r_half = _resid([Ax, By, Cz], problem.b)
    state.lam_tilde = state.lam - beta * r_half
    state.lam_half = state.lam - tau * beta * r_half
    v = state.lam_half / beta - _resid([Ax, Cz], problem.b)
    y = solve_block(problem, blk, v, y, beta, cfg.L_mode)
    state.ys = (y,)
    r_full = _resid([Ax, blk.B @ y, Cz], problem.b)
    state.lam = state.lam_half - s * beta * r_full
    return _finish(state, problem, r_full, x_prev)


def pj_multiblock_step(state: SolverState, problem: ProblemSpec, cfg: SolverConfig, rng):
    """Partially Jacobi step: ``x`` first, then all nonsmooth blocks in parallel."""
    beta, tau, s = cfg.beta, cfg.pair.tau, cfg.pair.s
    sigmas = cfg.block_sigmas
    Bys = [blk.B @ y for blk, y in zip(problem.blocks, state.ys)]
    r0 = _resid([problem.A @ state.x] + Bys, problem.b)
    x_prev, Ax = _x_step(state, problem, cfg, rng, r0)
    r_half = _resid([Ax] + Bys, problem.b)
    state.lam_tilde = state.lam - beta * r_half
    state.lam_half = state.lam - tau * beta * r_half
    new = []
    for i, (blk, y) in enumerate(zip(problem.blocks, state.ys)):
        others = [Ax] + [Bys[j] for j in range(len(Bys)) if j != i]
        v = state.lam_half / beta - _resid(others, problem.b)
        new.append(solve_block(problem, blk, v, y, beta, sigmas[i]))
    state.ys = tuple(new)
    r_full = _resid([Ax] + [blk.B @ y for blk, y in zip(problem.blocks, state.ys)], problem.b)
    state.lam = state.lam_half - s * beta * r_full
    return _finish(state, problem, r_full, x_prev)


STEPPERS = {
    "sas": sas_admm_step,
    "as-admm": as_admm_step,
    "as-alm": as_alm_step,
    "gs3": gs3_step,
    "pj": pj_multiblock_step,
}


def _pick_stepper(problem, stepper):
    if callable(stepper):
        return stepper
    if stepper is not None:
        try:
            return STEPPERS[stepper]
        except KeyError:
            raise ValueError(f"unknown stepper {stepper!r}") from None
    if problem.n_blocks == 0:
        return as_alm_step
    if problem.lead is not None:
        return gs3_step
    if problem.n_blocks > 1:
        return pj_multiblock_step
    return sas_admm_step


# -- setup and validation ----------------------------------------------------

def certify_Mk(problem: ProblemSpec, beta: float, rho: float) -> bool:
    """Check ``rho I - beta A^T A >= 0``: densely for small ``A``, by the
    spectral estimate otherwise."""
    A = problem.A
    if A.shape[1] <= 2000:
        AtA = as_dense(A.T @ A)
        S = rho * np.eye(A.shape[1]) - beta * AtA
        return psd_certify(S, 1e-12 * max(1.0, rho))
    return rho >= beta * problem.sq_norm(A)


def validate(problem: ProblemSpec, cfg: SolverConfig, stepper) -> SolverConfig:
    """Check ``cfg`` against ``problem`` and fill in derived defaults."""
    if not cfg.beta > 0:
        raise ValueError("beta must be positive")
    budgets = (cfg.max_iters, cfg.budget_grads, cfg.budget_seconds)
    if all(b is None for b in budgets):
        raise ValueError("no budget given")
    if cfg.max_iters is not None and cfg.max_iters < 0:
        raise ValueError("iteration budget must be nonnegative")
    if cfg.budget_grads is not None and cfg.budget_grads <= 0:
        raise ValueError("gradient budget must be positive")
    if cfg.budget_seconds is not None and cfg.budget_seconds <= 0:
        raise ValueError("time budget must be positive")
    if not 0.0 <= cfg.ergodic_start_fraction <= 1.0:
        raise ValueError("ergodic_start_fraction must lie in [0, 1]")
    if cfg.report_every < 1:
        raise ValueError("report_every must be at least 1")
    if cfg.estimator not in ("plain", "svrg"):
        raise ValueError(f"unknown estimator {cfg.estimator!r}")
    t, s = cfg.pair.tau, cfg.pair.s
    if stepper is as_alm_step:
        if problem.n_blocks:
            raise ValueError("the ALM stepper takes a problem without y-blocks")
        if not 0.0 < s <= 2.0:
            raise ValueError(f"AS-ALM needs s in (0, 2], got s={s}")
    else:
        if not problem.n_blocks:
            raise ValueError("this stepper needs at least one y-block")
        if not in_region(cfg.pair, Region.DELTA):
            raise ValueError(
                f"(tau, s) = ({t}, {s}) is outside the stepsize region: "
                f"tau+s={t + s}, tau<=1 is {t <= 1}, polynomial={region_poly(cfg.pair)}"
            )
    if stepper in (sas_admm_step, as_admm_step) and problem.n_blocks != 1:
        raise ValueError("the two-block steppers need exactly one y-block")
    if stepper is gs3_step:
        if problem.lead is None or problem.n_blocks != 1:
            raise ValueError("the Gauss-Seidel stepper needs a lead block and one y-block")
        C, A = as_dense(problem.lead.B), as_dense(problem.A)
        cta = np.abs(C.T @ A).max() if C.size and A.size else 0.0
        bound = 1e-12 * np.linalg.norm(C, 2) * np.linalg.norm(A, 2)
        if cta > bound:
            raise ValueError(f"the assumption C^T A = 0 is violated (max |C^T A| = {cta:g})")
    if stepper is pj_multiblock_step:
        q = problem.n_blocks
        sig = cfg.block_sigmas
        if sig is None or len(sig) != q:
            raise ValueError(f"pj stepper needs one proximal weight per block ({q})")
        for i, (blk, si) in enumerate(zip(problem.blocks, sig)):
            need = 1.01 * (q - 1) * cfg.beta * problem.sq_norm(blk.B)
            if si < need:
                raise ValueError(f"L_{i + 1} = {si} I violates L_i >= {need} I")
    if isinstance(cfg.L_mode, str):
        if cfg.L_mode not in ("zero", "linearized"):
            raise ValueError(f"unknown L_mode {cfg.L_mode!r}")
    elif cfg.L_mode < 0:
        raise ValueError("L = sigma I needs sigma >= 0")
    sched = cfg.schedule
    if sched is None:
        sched = ScheduleParams.defaults(problem.f.nu)
    elif problem.f.nu > 0 and sched.c2 > 1.0 / (2.0 * problem.f.nu) * (1 + 1e-12):
        raise ValueError(f"schedule c2={sched.c2} exceeds 1/(2 nu)={1 / (2 * problem.f.nu)}")
    return _replace(cfg, schedule=sched)


def _replace(cfg, **kw):
    d = {k: getattr(cfg, k) for k in cfg.__dataclass_fields__}
    d.update(kw)
    return SolverConfig(**d)


def init_state(problem: ProblemSpec, cfg: SolverConfig, x0=None, ys0=None, lam0=None, z0=None):
    """All-zero start (unless given) with ``xbreve^0 = x^0``."""
    x = np.zeros(problem.f.dim) if x0 is None else np.array(x0, dtype=float)
    ys = tuple(np.zeros(b.dim) if ys0 is None else np.array(ys0[i], dtype=float)
               for i, b in enumerate(problem.blocks))
    lam = np.zeros(problem.b.shape[0]) if lam0 is None else np.array(lam0, dtype=float)
    z = None
    if problem.lead is not None:
        z = np.zeros(problem.lead.dim) if z0 is None else np.array(z0, dtype=float)
    f = SingleComponent(problem.f) if cfg.deterministic else problem.f
    lam_max = problem.sq_norm(problem.A)
    mode = cfg.mk_mode
    if isinstance(mode, str):
        mk = MkController(mode, cfg.beta, lam_max, rho_min=cfg.rho_min)
    else:
        mk = MkController("fixed", cfg.beta, lam_max, value=float(mode))
    return SolverState(
        k=0, x=x, xbreve=x.copy(), ys=ys, lam=lam, z=z, f=f,
        est=GradientEstimator(cfg.estimator), mk=mk, rng=SeededRng(cfg.seed),
        trace=[] if cfg.keep_trace else None,
    )


# -- driver ------------------------------------------------------------------

def run(problem: ProblemSpec, cfg: SolverConfig, stepper=None, reporter=None, F_star=None,
        state=None) -> RunRecord:
    """Iterate ``stepper`` under the configured budget and collect metric rows.

    Rows before the ergodic start report the current iterate; later rows
    report the running average of ``w_tilde``. ``F_star`` defaults to the
    problem's reference solution.
    """
    stepper = _pick_stepper(problem, stepper)
    cfg = validate(problem, cfg, stepper)
    if F_star is None:
        from .harness import reference_solution

        F_star = reference_solution(problem).F
    if state is None:
        state = init_state(problem, cfg)
    flags = {"adaptive_mk": cfg.mk_mode == "adaptive"}
    if cfg.mk_mode == "adaptive":
        log.info("adaptive M_k carries no monotone D_k guarantee")

    frac = cfg.ergodic_start_fraction
    if cfg.max_iters is not None:
        kappa_it = math.floor(frac * cfg.max_iters)
    else:
        kappa_it = None
    rows: list = []
    t0 = time.perf_counter()
    ergodic_start = None

    def emit():
        if state.count:
            x, ys, z, lam = state.ergodic_point()
            mode = "ergodic"
        else:
            x, ys, z, lam = state.x, state.ys, state.z, state.lam
            mode = "iterate"
        obj, oe, ee, op = metrics(x, ys, lam, problem, F_star, z=z)
        row = MetricRow(state.k, time.perf_counter() - t0, mode, obj, oe, ee, op)
        rows.append(row)
        if reporter is not None:
            reporter(row)
        return row

    def exhausted():
        if cfg.max_iters is not None and state.k >= cfg.max_iters:
            return True
        if cfg.budget_grads is not None and state.grad_evals >= cfg.budget_grads:
            return True
        if cfg.budget_seconds is not None and time.perf_counter() - t0 >= cfg.budget_seconds:
            return True
        return False

    def ergodic_due():
        if kappa_it is not None:
            return state.k >= kappa_it
        if cfg.budget_grads is not None:
            return state.grad_evals >= frac * cfg.budget_grads
        return time.perf_counter() - t0 >= frac * cfg.budget_seconds

    last = emit()
    while not exhausted():
        if not state.ergodic_on and ergodic_due():
            state.ergodic_on = True
            ergodic_start = state.k
        stepper(state, problem, cfg, state.rng)
        if state.k % cfg.report_every == 0:
            last = emit()
            if cfg.tol is not None and last.opt_err <= cfg.tol:
                break
    if rows[-1].iter != state.k:
        emit()
    return RunRecord(
        rows=rows,
        final=_snapshot(state),
        config=cfg.echo(),
        seed=cfg.seed,
        ergodic_start=ergodic_start,
        flags=flags,
    )


def _snapshot(state):
    snap = copy.copy(state)
    snap.f = None
    snap.sums = copy.deepcopy(state.sums)
    return snap
