"""Accelerated stochastic inner loop for the x-subproblem.

``xsub`` runs ``m_k`` steps of an accelerated gradient scheme on

    min_x  f(x) + <h, x> + 1/2 ||x - x^k||_{M_k}^2,   x in X

with ``grad f`` replaced by a single-sample estimate ``d_t``. Metrics ``H`` and
``M_k`` are diagonal (stored as 1-D arrays or scalars) so each step is a
componentwise divide; a full 2-D ``H`` is accepted on the whole space only.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .numerics import as_dense
from .problem import Ball, WholeSpace

__all__ = [
    "GradientEstimator",
    "InnerConfig",
    "MkController",
    "ScheduleParams",
    "adaptive_Mk",
    "estimate_d",
    "sample_directions",
    "schedule",
    "xsub",
]

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ScheduleParams:
    """Constants of ``eta_k = min(c1/(m_k(m_k+1)), c2)``, ``m_k = max(ceil(c3 k^rho), m)``.

    When ``nu`` is given, ``c2 <= 1/(2 nu)`` is enforced.
    """

    c1: float
    c2: float
    c3: float = 1.0
    rho: float = 1.01
    m: int = 5
    nu: float | None = None

    def __post_init__(self):
        if min(self.c1, self.c2, self.c3) <= 0:
            raise ValueError("c1, c2, c3 must be positive")
        if self.rho < 1:
            raise ValueError("the exponent rho must be >= 1")
        if self.m < 1 or int(self.m) != self.m:
            raise ValueError("m must be a positive integer")
        if self.nu is not None and self.nu > 0 and self.c2 > 1.0 / (2.0 * self.nu) * (1 + 1e-12):
            raise ValueError(f"c2={self.c2} exceeds 1/(2 nu)={1.0 / (2.0 * self.nu)}")

    @classmethod
    def defaults(cls, nu: float, **overrides) -> "ScheduleParams":
        """``c1 = 1/nu``, ``c2 = 1/(2 nu)``, ``c3 = 1``, ``rho = 1.01``, ``m = 5``."""
        nu = nu if nu > 0 else 1.0
        kw = dict(c1=1.0 / nu, c2=1.0 / (2.0 * nu), c3=1.0, rho=1.01, m=5, nu=nu)
        kw.update(overrides)
        return cls(**kw)

    @classmethod
    def fixed(cls, m: int, eta: float, nu: float | None = None) -> "ScheduleParams":
        """A schedule returning ``(m, eta)`` for every ``k`` up to ~1e12."""
        return cls(c1=eta * m * (m + 1), c2=eta, c3=1e-12, rho=1.0, m=m, nu=nu)


def schedule(k: int, p: ScheduleParams) -> tuple[int, float]:
    """Inner iteration count and step parameter for outer iteration ``k``."""
    if k < 0:
        raise ValueError("k must be nonnegative")
    m_k = max(math.ceil(p.c3 * float(k) ** p.rho), p.m)
    eta_k = min(p.c1 / (m_k * (m_k + 1)), p.c2)
    return m_k, eta_k


@dataclass(frozen=True)
class InnerConfig:
    m_k: int
    eta_k: float
    H: object = 1.0  # scalar, 1-D diagonal, or 2-D matrix
    M_k: object = 1.0  # scalar or 1-D diagonal

    def __post_init__(self):
        if self.m_k < 1:
            raise ValueError("m_k must be at least 1")
        if not self.eta_k > 0:
            raise ValueError("eta_k must be positive")


class GradientEstimator:
    """Stochastic direction ``d_t = grad f_xi(xhat) + e_t`` with ``E[e_t] = 0``.

    ``plain`` uses ``e_t = 0``. ``svrg`` uses
    ``e_t = grad f(snap) - grad f_xi(snap)`` at a snapshot set by :meth:`refresh`.
    ``grad_evals`` counts component-gradient evaluations.
    """

    def __init__(self, mode: str = "plain"):
        if mode not in ("plain", "svrg"):
            raise ValueError(f"unknown estimator mode {mode!r}")
        self.mode = mode
        self.snapshot = None
        self.snapshot_grad = None
        self.grad_evals = 0

    def refresh(self, f, x):
        if self.mode == "svrg":
            self.snapshot = np.array(x, dtype=float)
            self.snapshot_grad = f.full_grad(self.snapshot)
            self.grad_evals += f.grad_cost

    @property
    def per_draw_cost(self) -> int:
        return 2 if self.mode == "svrg" else 1


def estimate_d(est: GradientEstimator, f, xhat, rng, xi=None):
    """Draw ``xi`` uniformly (unless given) and return ``(d, xi)``."""
    if xi is None:
        xi = rng.integers(f.n_components)
    g = f.component_grad(xi, xhat)
    unit = f.grad_cost // f.n_components or 1
    if est.mode == "svrg":
        if est.snapshot is None:
            raise RuntimeError("svrg estimator used before refresh()")
        g = (g - f.component_grad(xi, est.snapshot)) + est.snapshot_grad
        est.grad_evals += 2 * unit
    else:
        est.grad_evals += unit
    return g, xi


def sample_directions(est: GradientEstimator, f, xhat, rng, size: int):
    """``size`` independent draws of ``d`` at a fixed point, vectorized.

    Consumes the generator exactly like ``size`` calls to :func:`estimate_d`
    and returns the same directions, stacked row-wise.
    """
    xis = rng.integers(f.n_components, size)
    G = f.component_grads(xhat)
    D = G[xis]
    if est.mode == "svrg":
        if est.snapshot is None:
            raise RuntimeError("svrg estimator used before refresh()")
        Gs = f.component_grads(est.snapshot)
        D = (D - Gs[xis]) + est.snapshot_grad[None, :]
    return D, xis


def xsub(x1, xbreve1, h, cfg: InnerConfig, est: GradientEstimator, f, X=None, rng=None):
    """Run the accelerated inner loop; return ``(x_plus, xbreve_plus)``.

    ``x1`` is both the starting ``x_1`` and the proximal anchor ``x^k``.
    """
    X = X or WholeSpace()
    xk = np.asarray(x1, dtype=float)
    x = xk.copy()
    xb = np.array(xbreve1, dtype=float)
    h = np.asarray(h, dtype=float)
    H = cfg.H if np.ndim(cfg.H) != 0 else float(cfg.H)
    M = cfg.M_k if np.ndim(cfg.M_k) != 0 else float(cfg.M_k)
    full_H = np.ndim(H) == 2
    if full_H:
        H = as_dense(H)
        if not np.allclose(H, np.diag(np.diag(H))):
            if not isinstance(X, WholeSpace):
                raise ValueError("a non-diagonal H with a constrained X is not supported")
        else:
            H = np.diag(H).copy()
            full_H = False
    if isinstance(X, Ball) and (np.ptp(np.atleast_1d(H)) > 0 or np.ptp(np.atleast_1d(M)) > 0):
        raise ValueError("a ball constraint needs a scalar metric for project-after-solve")
    Mxk = M * xk
    constrained = not isinstance(X, WholeSpace)
    # one batch of indices equals m_k single draws from the counter-based rng
    xis = rng.integers(f.n_components, cfg.m_k).tolist()
    for t in range(1, cfg.m_k + 1):
        bt = 2.0 / (t + 1)
        gt = 2.0 / (t * cfg.eta_k)
        xhat = bt * xb + (1.0 - bt) * x
        d, _ = estimate_d(est, f, xhat, rng, xis[t - 1])
        if full_H:
            K = gt * H + np.diag(np.broadcast_to(M, xk.shape))
            xb = np.linalg.solve(K, gt * (H @ xb) + Mxk - d - h)
        else:
            xb = (gt * H * xb + Mxk - d - h) / (gt * H + M)
            if constrained:
                xb = X.project(xb)
        x = bt * xb + (1.0 - bt) * x
    return x, xb


class MkController:
    """Chooses ``M_k = rho_k I``.

    ``strict``: ``rho = 1.01 beta lambda_max(A^T A)``, constant.
    ``adaptive``: ``rho_k = max(rho_min, beta ||A dx||^2 / ||dx||^2)`` with
    ``rho_min`` doubled after 10 consecutive increases of the primal residual.
    ``fixed``: a user value, checked against ``beta lambda_max(A^T A)``.
    """

    def __init__(self, mode, beta, lam_max_AtA, rho_min=None, value=None, patience=10):
        if mode not in ("strict", "adaptive", "fixed"):
            raise ValueError(f"unknown M_k mode {mode!r}")
        self.mode = mode
        self.beta = beta
        self.lam_max = lam_max_AtA
        self.strict_rho = 1.01 * beta * lam_max_AtA
        self.patience = patience
        if mode == "fixed":
            if value is None:
                raise ValueError("fixed M_k mode needs a value")
            if value < beta * lam_max_AtA * (1 - 1e-12):
                raise ValueError(
                    f"M_k = {value} I violates M_k - beta A^T A >= 0 "
                    f"(needs >= {beta * lam_max_AtA})"
                )
            self.rho = float(value)
        else:
            self.rho = self.strict_rho
        self.rho_min = float(rho_min) if rho_min is not None else 0.1 * self.strict_rho or 1e-12
        if mode == "adaptive":
            self.rho = max(self.rho_min, 1e-300)
        self.streak = 0
        self.prev_res = None

    def state(self) -> dict:
        return dict(rho=self.rho, rho_min=self.rho_min, streak=self.streak, prev_res=self.prev_res)

    def load(self, st: dict):
        self.rho = st["rho"]
        self.rho_min = st["rho_min"]
        self.streak = st["streak"]
        self.prev_res = st["prev_res"]

    def update(self, prev_x, cur_x, A, residual_norm=None) -> float:
        if self.mode != "adaptive":
            return self.rho
        if residual_norm is not None:
            if self.prev_res is not None and residual_norm > self.prev_res:
                self.streak += 1
                if self.streak >= self.patience:
                    self.rho_min *= 2.0
                    self.streak = 0
                    log.debug("raising rho_min to %g", self.rho_min)
            else:
                self.streak = 0
            self.prev_res = residual_norm
        if prev_x is None:
            self.rho = max(self.rho_min, self.rho)
            return self.rho
        self.rho = adaptive_Mk(prev_x, cur_x, A, self.beta, self.rho_min, self.rho)
        return self.rho


def adaptive_Mk(prev_x, cur_x, A, beta, rho_min, prev_rho):
    """``max(rho_min, beta ||A dx||^2 / ||dx||^2)``; keeps ``prev_rho`` when ``dx = 0``."""
    dx = np.asarray(cur_x, dtype=float) - np.asarray(prev_x, dtype=float)
    d1 = float(dx @ dx)
    if d1 == 0.0:
        return prev_rho
    Adx = A @ dx
    d2 = float(Adx @ Adx)
    return max(rho_min, beta * d2 / d1)
