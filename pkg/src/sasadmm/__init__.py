"""Symmetric accelerated stochastic ADMM with certification tools."""

from .numerics import SeededRng, psd_certify, spectral_norm_est, weighted_norm_sq
from .problem import ProblemSpec, make_fused_lasso, make_quadratic_test, nonsmooth_fixture
from .solvers import RunRecord, SolverConfig, run
from .stepsize_cert import Region, StepsizePair, certify, in_region

__all__ = [
    "ProblemSpec",
    "Region",
    "RunRecord",
    "SeededRng",
    "SolverConfig",
    "StepsizePair",
    "certify",
    "in_region",
    "make_fused_lasso",
    "make_quadratic_test",
    "nonsmooth_fixture",
    "psd_certify",
    "run",
    "spectral_norm_est",
    "weighted_norm_sq",
]
