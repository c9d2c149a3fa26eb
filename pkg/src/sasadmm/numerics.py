"""Small numerical kernels: weighted norms, spectral estimates, PSD checks and
a counter-based random source.

Dense matrices are plain ``numpy.ndarray`` objects and sparse ones are
``scipy.sparse.csr_matrix``; every helper here accepts either.
"""

from __future__ import annotations

import warnings

import numpy as np
import scipy.sparse as sp

__all__ = [
    "ConvergenceWarning",
    "SeededRng",
    "as_dense",
    "is_scalar_identity",
    "psd_certify",
    "spectral_norm_est",
    "weighted_norm_sq",
]


class ConvergenceWarning(RuntimeWarning):
    """An iterative estimate stopped at its iteration cap."""


def as_dense(M) -> np.ndarray:
    if sp.issparse(M):
        return M.toarray()
    return np.asarray(M, dtype=float)


def weighted_norm_sq(x, G) -> float:
    """Return the quadratic form ``x^T G x``.

    ``G`` may be a dense or sparse matrix, or a 1-D array taken as a diagonal.
    No definiteness is required, so the result can be negative.
    """
    x = np.asarray(x, dtype=float)
    if x.ndim != 1:
        raise ValueError(f"x must be 1-D, got shape {x.shape}")
    if not sp.issparse(G):
        G = np.asarray(G, dtype=float)
        if G.ndim == 1:
            if G.shape[0] != x.shape[0]:
                raise ValueError(f"dimension mismatch: diag {G.shape} vs x {x.shape}")
            return float(np.dot(x, G * x))
    if G.shape != (x.shape[0], x.shape[0]):
        raise ValueError(f"dimension mismatch: G {G.shape} vs x {x.shape}")
    return float(np.dot(x, G @ x))


def spectral_norm_est(M, tol: float = 1e-10, max_it: int = 10_000, rng=None) -> float:
    """Estimate the largest singular value of ``M`` by power iteration on ``M^T M``.

    Iteration stops once the Rayleigh estimate changes by less than ``tol``
    relative. The start vector is drawn from ``rng`` (a fixed seed if omitted),
    so the result is reproducible. Hitting ``max_it`` emits a
    :class:`ConvergenceWarning` and returns the current estimate.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    if rng is None:
        rng = SeededRng(0)
    n = M.shape[1]
    if n == 0 or M.shape[0] == 0:
        return 0.0
    v = rng.normal(n)
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(max_it):
        w = M.T @ (M @ v)
        w = np.asarray(w, dtype=float).ravel()
        new_lam = float(np.linalg.norm(w))
        if new_lam == 0.0:
            return 0.0
        v = w / new_lam
        if abs(new_lam - lam) <= tol * new_lam:
            return float(np.sqrt(new_lam))
        lam = new_lam
    warnings.warn(
        f"power iteration did not converge in {max_it} iterations", ConvergenceWarning, stacklevel=2
    )
    return float(np.sqrt(lam))


def psd_certify(S, shift: float = 0.0) -> bool:
    """Return True when ``S + shift*I`` admits a Cholesky factorization.

    A floor of ``1e-10 * (1 + |trace|/n)`` is added to ``shift`` so that
    singular PSD matrices (smallest eigenvalue exactly 0) certify.
    """
    if shift < 0:
        raise ValueError("shift must be nonnegative")
    S = as_dense(S)
    if S.ndim != 2 or S.shape[0] != S.shape[1]:
        raise ValueError(f"S must be square, got shape {S.shape}")
    n = S.shape[0]
    if n == 0:
        return True
    scale = np.abs(S).max()
    if np.abs(S - S.T).max() > 1e-10 * scale:
        raise ValueError("S is not symmetric")
    slack = shift + 1e-10 * (1.0 + abs(np.trace(S)) / n)
    try:
        np.linalg.cholesky(0.5 * (S + S.T) + slack * np.eye(n))
    except np.linalg.LinAlgError:
        return False
    return True


def is_scalar_identity(G, rtol: float = 1e-12) -> tuple[bool, float]:
    """Check whether square ``G`` equals ``c * I``; return ``(flag, c)``."""
    D = as_dense(G)
    n = D.shape[0]
    if n == 0:
        return True, 0.0
    c = float(np.trace(D)) / n
    dev = np.abs(D - c * np.eye(n)).max()
    return bool(dev <= rtol * max(1.0, abs(c))), c


_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_U30, _U27, _U31, _U11 = (np.uint64(k) for k in (30, 27, 31, 11))


def _splitmix64(seed: np.uint64, counters: np.ndarray) -> np.ndarray:
    # uint64 array arithmetic wraps modulo 2**64, as splitmix64 requires
    z = seed + (counters + np.uint64(1)) * _GAMMA
    z = (z ^ (z >> _U30)) * _MIX1
    z = (z ^ (z >> _U27)) * _MIX2
    return z ^ (z >> _U31)


class SeededRng:
    """Counter-based splitmix64 generator.

    Draw ``i`` depends only on ``(seed, i)``, so a batch of ``n`` draws equals
    ``n`` single draws, and streams are identical across platforms and numpy
    versions.
    """

    def __init__(self, seed: int = 0, counter: int = 0):
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self.counter = int(counter)

    def __repr__(self):
        return f"SeededRng(seed={self.seed}, counter={self.counter})"

    def copy(self) -> "SeededRng":
        return SeededRng(self.seed, self.counter)

    def bits(self, size: int) -> np.ndarray:
        ctr = np.arange(self.counter, self.counter + size, dtype=np.uint64)
        self.counter += size
        return _splitmix64(np.uint64(self.seed), ctr)

    def random(self, size: int | None = None):
        """Uniform doubles in [0, 1) with 53 random bits."""
        n = 1 if size is None else int(size)
        u = (self.bits(n) >> _U11).astype(np.float64) * (1.0 / 9007199254740992.0)
        return float(u[0]) if size is None else u

    def integers(self, n: int, size: int | None = None):
        """Uniform integers in ``{0, ..., n-1}``."""
        if n <= 0:
            raise ValueError("n must be positive")
        k = 1 if size is None else int(size)
        u = (self.bits(k) >> _U11).astype(np.float64) * (1.0 / 9007199254740992.0)
        idx = np.minimum(np.floor(u * n).astype(np.int64), n - 1)
        return int(idx[0]) if size is None else idx

    def normal(self, size: int) -> np.ndarray:
        """Standard normal samples by the Box-Muller transform."""
        size = int(size)
        m = (size + 1) // 2
        u = self.random(2 * m)
        u1 = 1.0 - u[:m]  # in (0, 1]
        r = np.sqrt(-2.0 * np.log(u1))
        theta = 2.0 * np.pi * u[m:]
        return np.concatenate([r * np.cos(theta), r * np.sin(theta)])[:size]
