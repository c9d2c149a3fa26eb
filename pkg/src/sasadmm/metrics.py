"""Per-row convergence measures shared by the solvers and the harness."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = ["MetricRow", "metrics"]


@dataclass(frozen=True)
class MetricRow:
    iter: int
    time_s: float
    mode: str  # "iterate" or "ergodic"
    obj: float
    obj_err: float
    equ_err: float
    opt_err: float


def metrics(x, ys, lam, problem, F_star, z=None) -> tuple[float, float, float, float]:
    """Return ``(obj, obj_err, equ_err, opt_err)`` at the point ``(x, ys, z)``.

    ``obj_err = |F - F*| / max(F*, 1)``, ``equ_err = ||K w - b||`` and
    ``opt_err`` is the larger of the two. ``lam`` is accepted for symmetry
    with the iterate triple but does not enter the measures.
    """
    if not math.isfinite(F_star):
        raise ValueError("F_star must be finite")
    obj = problem.objective(x, ys, z)
    obj_err = abs(obj - F_star) / max(F_star, 1.0)
    equ_err = float(np.linalg.norm(problem.residual(x, ys, z)))
    return obj, obj_err, equ_err, max(obj_err, equ_err)
