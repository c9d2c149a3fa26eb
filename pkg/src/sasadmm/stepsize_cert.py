"""Dual stepsize regions and the block matrices of the convergence analysis.

Everything here is dense and meant for certification and tests; the solvers
never build these matrices.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .numerics import as_dense, psd_certify

__all__ = [
    "CertReport",
    "Region",
    "StepsizePair",
    "build_L_tilde",
    "build_P",
    "build_alm_matrices",
    "build_analysis_matrices",
    "build_multiblock_matrices",
    "certify",
    "certify_alm",
    "identity_defect",
    "in_region",
    "omega_coeffs",
    "region_poly",
    "vi_map",
]


class Region(enum.Enum):
    DELTA0 = "Delta0"
    DELTA1 = "Delta1"
    DELTA = "Delta"


@dataclass(frozen=True)
class StepsizePair:
    """Dual stepsizes: ``tau`` after the x-update, ``s`` after the y-update."""

    tau: float
    s: float

    def __post_init__(self):
        if not (math.isfinite(self.tau) and math.isfinite(self.s)):
            raise ValueError(f"stepsizes must be finite, got ({self.tau}, {self.s})")


@dataclass(frozen=True)
class CertReport:
    identity_residual: float
    qtilde_psd: bool
    omegas: tuple[float, float, float]
    region_member: bool
    relation_residual: float = 0.0  # max |Qtilde P - Q|

    @property
    def ok(self) -> bool:
        return self.region_member and self.qtilde_psd


def region_poly(p: StepsizePair) -> float:
    """``-tau^2 - s^2 - tau*s + tau + s + 1``, evaluated left to right in floats."""
    t, s = p.tau, p.s
    return -t * t - s * s - t * s + t + s + 1.0


def in_region(p: StepsizePair, r: Region = Region.DELTA) -> bool:
    """Membership test with plain float comparisons and no slack."""
    t, s = p.tau, p.s
    if r is Region.DELTA:
        return t + s > 0 and t <= 1 and region_poly(p) >= 0
    if r is Region.DELTA1:
        return t + s > 0 and t <= 1 and region_poly(p) > 0
    if r is Region.DELTA0:
        return (
            0 < s < (1.0 + math.sqrt(5.0)) / 2.0
            and t + s > 0
            and -1 < t < 1
            and abs(t) < 1 + s - s * s
        )
    raise ValueError(f"unknown region {r!r}")


def omega_coeffs(p: StepsizePair, beta: float) -> tuple[float, float, float]:
    """Coefficients of the lower bound on the G-tilde norm.

    ``omega0 = (2 - tau - s - (1-s)^2/(1+tau)) * beta`` is computed through the
    equal form ``beta * poly / (1 + tau)`` so its sign matches the region
    polynomial exactly.
    """
    t, s = p.tau, p.s
    if not 1.0 + t > 0:
        raise ValueError(f"omega coefficients need 1 + tau > 0, got tau={t}")
    if beta <= 0:
        raise ValueError("beta must be positive")
    w0 = beta * region_poly(p) / (1.0 + t)
    w1 = (1.0 - s) ** 2 / (1.0 + t) * beta
    w2 = (1.0 - t) / (1.0 + t)
    return w0, w1, w2


def _blocks(*rows):
    return np.block([[as_dense(b) for b in row] for row in rows])


def build_P(p: StepsizePair, beta: float, B, n1: int) -> np.ndarray:
    """Matrix ``P`` with ``w^k - w^{k+1} = P (w^k - w_tilde^k)``; ``w = (x, y, lam)``."""
    B = as_dense(B)
    n, n2 = B.shape
    Z = np.zeros
    return _blocks(
        [np.eye(n1), Z((n1, n2)), Z((n1, n))],
        [Z((n2, n1)), np.eye(n2), Z((n2, n))],
        [Z((n, n1)), -p.s * beta * B, (p.tau + p.s) * np.eye(n)],
    )


def build_analysis_matrices(p: StepsizePair, beta: float, Dk, L, B):
    """Return ``(Q, Qtilde, Gtilde)`` for the two-block method."""
    t, s = p.tau, p.s
    if not t + s > 0:
        raise ValueError("tau + s must be positive (P is singular otherwise)")
    Dk, L, B = as_dense(Dk), as_dense(L), as_dense(B)
    n1 = Dk.shape[0]
    n, n2 = B.shape
    BtB = B.T @ B
    I = np.eye(n)
    Z = np.zeros
    Q = _blocks(
        [Dk, Z((n1, n2)), Z((n1, n))],
        [Z((n2, n1)), L + beta * BtB, -t * B.T],
        [Z((n, n1)), -B, I / beta],
    )
    c = t / (t + s)
    Qt = _blocks(
        [Dk, Z((n1, n2)), Z((n1, n))],
        [Z((n2, n1)), L + (1.0 - t * s / (t + s)) * beta * BtB, -c * B.T],
        [Z((n, n1)), -c * B, I / (beta * (t + s))],
    )
    Gt = _blocks(
        [Dk, Z((n1, n2)), Z((n1, n))],
        [Z((n2, n1)), L + (1.0 - s) * beta * BtB, (s - 1.0) * B.T],
        [Z((n, n1)), (s - 1.0) * B, (2.0 - t - s) / beta * I],
    )
    return Q, Qt, Gt


def identity_defect(P, Qt, Gt) -> np.ndarray:
    """``Gt - (P^T Qt + Qt P - P^T Qt P)``."""
    return Gt - (P.T @ Qt + Qt @ P - P.T @ Qt @ P)


def build_L_tilde(Bs, Ls, beta: float) -> np.ndarray:
    """Proximal matrix of the Jacobi multi-block update: ``L_i`` on the diagonal,
    ``-beta B_i^T B_j`` off it."""
    Bs = [as_dense(B) for B in Bs]
    Ls = [as_dense(L) for L in Ls]
    q = len(Bs)
    rows = []
    for i in range(q):
        rows.append([Ls[i] if i == j else -beta * Bs[i].T @ Bs[j] for j in range(q)])
    return _blocks(*rows)


def build_multiblock_matrices(p: StepsizePair, beta: float, Dk, Bs, Ls):
    """``(Q, Qtilde, Gtilde)`` for the Jacobi multi-block method, written block by block."""
    t, s = p.tau, p.s
    if not t + s > 0:
        raise ValueError("tau + s must be positive")
    Dk = as_dense(Dk)
    Bs = [as_dense(B) for B in Bs]
    Ls = [as_dense(L) for L in Ls]
    q = len(Bs)
    n = Bs[0].shape[0]
    n1 = Dk.shape[0]
    sizes = [B.shape[1] for B in Bs]
    Z = np.zeros
    I = np.eye(n)
    a = t * s / (t + s)
    c = t / (t + s)

    def assemble(diag, off, col, corner, row=None):
        row = col if row is None else row
        rows = [[Dk] + [Z((n1, m)) for m in sizes] + [Z((n1, n))]]
        for i in range(q):
            r = [Z((sizes[i], n1))]
            for j in range(q):
                r.append(diag(i) if i == j else off(i, j))
            r.append(col(i).T)
            rows.append(r)
        rows.append([Z((n, n1))] + [row(j) for j in range(q)] + [corner])
        return _blocks(*rows)

    Q = assemble(
        lambda i: Ls[i] + beta * Bs[i].T @ Bs[i],
        lambda i, j: Z((sizes[i], sizes[j])),
        lambda i: -t * Bs[i],
        I / beta,
        row=lambda j: -Bs[j],
    )
    Qt = assemble(
        lambda i: Ls[i] + (1.0 - a) * beta * Bs[i].T @ Bs[i],
        lambda i, j: -a * beta * Bs[i].T @ Bs[j],
        lambda i: -c * Bs[i],
        I / ((t + s) * beta),
    )
    Gt = assemble(
        lambda i: Ls[i] + (1.0 - s) * beta * Bs[i].T @ Bs[i],
        lambda i, j: -s * beta * Bs[i].T @ Bs[j],
        lambda i: (s - 1.0) * Bs[i],
        (2.0 - t - s) / beta * I,
    )
    return Q, Qt, Gt


def build_alm_matrices(s: float, beta: float, Dk, n: int):
    """``(P, Q, Qtilde, Gtilde)`` of the single-block ALM variant, ``w = (x, lam)``."""
    if not s > 0:
        raise ValueError("s must be positive")
    Dk = as_dense(Dk)
    n1 = Dk.shape[0]
    Z = np.zeros
    I = np.eye(n)

    def diag(top, bottom):
        return _blocks([top, Z((n1, n))], [Z((n, n1)), bottom])

    P = diag(np.eye(n1), s * I)
    Q = diag(Dk, I / beta)
    Qt = diag(Dk, I / (s * beta))
    Gt = diag(Dk, (2.0 - s) / beta * I)
    return P, Q, Qt, Gt


def _scale(M) -> float:
    m = float(np.abs(M).max()) if M.size else 0.0
    return m if m > 0 else 1.0


def certify(p: StepsizePair, beta: float, Dk, L, B) -> CertReport:
    """Check the P-identity, ``Qtilde P = Q``, PSD-ness of ``Qtilde`` and region membership."""
    Q, Qt, Gt = build_analysis_matrices(p, beta, Dk, L, B)
    P = build_P(p, beta, B, as_dense(Dk).shape[0])
    resid = float(np.abs(identity_defect(P, Qt, Gt)).max())
    rel = float(np.abs(Qt @ P - Q).max())
    psd = psd_certify(Qt, 1e-9 * _scale(Qt))
    return CertReport(
        identity_residual=resid,
        qtilde_psd=psd,
        omegas=omega_coeffs(p, beta),
        region_member=in_region(p, Region.DELTA),
        relation_residual=rel,
    )


def certify_alm(s: float, beta: float, Dk, n: int) -> CertReport:
    P, Q, Qt, Gt = build_alm_matrices(s, beta, Dk, n)
    resid = float(np.abs(identity_defect(P, Qt, Gt)).max())
    rel = float(np.abs(Qt @ P - Q).max())
    return CertReport(
        identity_residual=resid,
        qtilde_psd=psd_certify(Qt, 1e-9 * _scale(Qt)),
        omegas=(0.0, 0.0, 0.0),
        region_member=0 < s <= 2,
        relation_residual=rel,
    )


def vi_map(w, A, B, b) -> np.ndarray:
    """``J(w) = (-A^T lam, -B^T lam, A x + B y - b)`` for ``w = (x, y, lam)``."""
    x, y, lam = (np.asarray(v, dtype=float) for v in w)
    A, B = as_dense(A), as_dense(B)
    b = np.asarray(b, dtype=float)
    if A.shape != (b.shape[0], x.shape[0]) or B.shape != (b.shape[0], y.shape[0]):
        raise ValueError("dimension mismatch in vi_map")
    if lam.shape != b.shape:
        raise ValueError("lam and b must have the same length")
    return np.concatenate([-A.T @ lam, -B.T @ lam, A @ x + B @ y - b])
