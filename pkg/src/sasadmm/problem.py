"""Problem instances: smooth finite sums, nonsmooth blocks, feasible sets and
linear constraints, plus exact KKT solutions for quadratic test problems.

A two-block instance reads::

    min  f(x) + g(y)   s.t.  A x + B y = b,   x in X,  y in Y

with ``f = (1/N) sum_j f_j``. Multi-block instances carry several ``(g_i, B_i)``
pairs, and the Gauss-Seidel three-block variant adds a leading ``(l, C)`` pair.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.special import expit

from .numerics import SeededRng, as_dense, is_scalar_identity, psd_certify, spectral_norm_est

__all__ = [
    "Ball",
    "Block",
    "Box",
    "L1Norm",
    "LogisticSum",
    "ProblemSpec",
    "QuadraticBlock",
    "QuadraticSum",
    "SingleComponent",
    "SmoothSum",
    "Solution",
    "WholeSpace",
    "ZeroBlock",
    "kkt_reference",
    "logistic_component",
    "make_fused_lasso",
    "make_quadratic_test",
    "nonsmooth_fixture",
    "soft_shrink",
]


# -- feasible sets -----------------------------------------------------------

class WholeSpace:
    kind = "whole-space"

    def project(self, v):
        return np.array(v, dtype=float)

    def contains(self, v, tol=0.0):
        return bool(np.all(np.isfinite(v)))

    def __repr__(self):
        return "WholeSpace()"


class Box:
    kind = "box"

    def __init__(self, lo, hi):
        self.lo = np.asarray(lo, dtype=float)
        self.hi = np.asarray(hi, dtype=float)
        if np.any(self.lo > self.hi):
            raise ValueError("box requires lo <= hi")

    def project(self, v):
        return np.clip(v, self.lo, self.hi)

    def contains(self, v, tol=0.0):
        return bool(np.all(v >= self.lo - tol) and np.all(v <= self.hi + tol))

    def __repr__(self):
        return f"Box(lo={self.lo!r}, hi={self.hi!r})"


class Ball:
    kind = "ball"

    def __init__(self, center, radius):
        self.center = np.asarray(center, dtype=float)
        self.radius = float(radius)
        if self.radius < 0:
            raise ValueError("radius must be nonnegative")

    def project(self, v):
        d = np.asarray(v, dtype=float) - self.center
        nrm = np.linalg.norm(d)
        if nrm <= self.radius:
            return np.array(v, dtype=float)
        return self.center + d * (self.radius / nrm)

    def contains(self, v, tol=0.0):
        return bool(np.linalg.norm(np.asarray(v) - self.center) <= self.radius + tol)

    def __repr__(self):
        return f"Ball(center={self.center!r}, radius={self.radius})"


# -- smooth finite sums ------------------------------------------------------

class SmoothSum:
    """Average ``f(x) = (1/N) sum_j f_j(x)`` of smooth convex components.

    Subclasses provide the per-component oracle and a matrix of all component
    gradients. ``nu`` is the Lipschitz constant of every ``grad f_j`` measured
    in the ``H``-metric, ``grad_cost`` the number of component-gradient
    evaluations one full gradient costs.
    """

    n_components: int
    dim: int
    nu: float

    @property
    def grad_cost(self) -> int:
        return self.n_components

    def component_value(self, j, x) -> float:
        raise NotImplementedError

    def component_grad(self, j, x) -> np.ndarray:
        raise NotImplementedError

    def component_grads(self, x) -> np.ndarray:
        """All component gradients stacked as an ``(N, dim)`` array."""
        return np.stack([self.component_grad(j, x) for j in range(self.n_components)])

    def full_value(self, x) -> float:
        return float(np.mean([self.component_value(j, x) for j in range(self.n_components)]))

    def full_grad(self, x) -> np.ndarray:
        return self.component_grads(x).mean(axis=0)


def logistic_component(a, label, x):
    """Value and gradient of ``log(1 + exp(-label * a^T x))``, overflow-safe."""
    if label not in (-1, 1, -1.0, 1.0):
        raise ValueError(f"label must be +1 or -1, got {label}")
    a = np.asarray(a, dtype=float)
    z = label * float(np.dot(a, x))
    value = float(np.logaddexp(0.0, -z))
    # 1 / (1 + exp(z)) without overflow
    if z >= 0:
        e = np.exp(-z)
        w = e / (1.0 + e)
    else:
        w = 1.0 / (1.0 + np.exp(z))
    return value, -label * w * a


def _sigmoid_neg(z):
    """Vectorized ``1 / (1 + exp(z))``."""
    return expit(-z)


class LogisticSum(SmoothSum):
    """Logistic loss over the rows of a CSR feature matrix."""

    def __init__(self, features, labels, H=None):
        self.features = sp.csr_matrix(features, dtype=float)
        self.features.sort_indices()
        self.labels = np.asarray(labels, dtype=float)
        if not np.all(np.isin(self.labels, (-1.0, 1.0))):
            raise ValueError("labels must be in {-1, +1}")
        self.n_components, self.dim = self.features.shape
        if self.labels.shape != (self.n_components,):
            raise ValueError("one label per feature row required")
        self.H = np.ones(self.dim) if H is None else np.asarray(H, dtype=float)
        X = self.features
        # 1/4 * max_j a_j^T H^{-1} a_j
        sq = np.asarray(X.multiply(X) @ (1.0 / self.H)).ravel()
        self.nu = 0.25 * float(sq.max()) if sq.size else 0.0
        self._indptr, self._indices, self._data = X.indptr, X.indices, X.data
        # dense copies are much faster for the full-gradient products when
        # the matrix is not actually sparse
        dense = X.nnz > 0.25 * X.shape[0] * X.shape[1] and X.shape[0] * X.shape[1] <= 5_000_000
        self._X = X.toarray() if dense else X
        self._XT = self._X.T.copy() if dense else X.T.tocsr()

    def _row(self, j):
        lo, hi = self._indptr[j], self._indptr[j + 1]
        return self._indices[lo:hi], self._data[lo:hi]

    def component_value(self, j, x):
        idx, vals = self._row(j)
        z = self.labels[j] * float(vals @ x[idx])
        return float(np.logaddexp(0.0, -z))

    def component_grad(self, j, x):
        idx, vals = self._row(j)
        b = self.labels[j]
        z = b * float(vals @ x[idx])
        w = np.exp(-z) / (1.0 + np.exp(-z)) if z >= 0 else 1.0 / (1.0 + np.exp(z))
        g = np.zeros(self.dim)
        g[idx] = -b * w * vals
        return g

    def _margins(self, x):
        return self.labels * (self._X @ x)

    def full_value(self, x):
        return float(np.mean(np.logaddexp(0.0, -self._margins(x))))

    def full_grad(self, x):
        coef = -self.labels * _sigmoid_neg(self._margins(x))
        return (self._XT @ coef) / self.n_components

    def component_grads(self, x):
        coef = -self.labels * _sigmoid_neg(self._margins(x))
        if isinstance(self._X, np.ndarray):
            return self._X * coef[:, None]
        return self.features.multiply(coef[:, None]).toarray()


class QuadraticSum(SmoothSum):
    """Components ``f_j(x) = 1/2 x^T P x + q_j^T x + const`` sharing one Hessian."""

    def __init__(self, P, q_components, const=0.0, H=None):
        self.P = as_dense(P)
        self.Q = np.atleast_2d(np.asarray(q_components, dtype=float))
        self.const = float(const)
        self.n_components, self.dim = self.Q.shape
        if self.P.shape != (self.dim, self.dim):
            raise ValueError("P and q dimensions disagree")
        self.H = np.ones(self.dim) if H is None else np.asarray(H, dtype=float)
        r = 1.0 / np.sqrt(self.H)
        self.nu = float(np.linalg.eigvalsh(r[:, None] * self.P * r[None, :]).max())
        self.q = self.Q.mean(axis=0)

    def component_value(self, j, x):
        return float(0.5 * x @ (self.P @ x) + self.Q[j] @ x + self.const)

    def component_grad(self, j, x):
        return self.P @ x + self.Q[j]

    def component_grads(self, x):
        return (self.P @ x)[None, :] + self.Q

    def full_value(self, x):
        return float(0.5 * x @ (self.P @ x) + self.q @ x + self.const)

    def full_grad(self, x):
        return self.P @ x + self.q


class SingleComponent(SmoothSum):
    """View of ``f`` as a single-component sum, for deterministic full-gradient runs."""

    def __init__(self, f: SmoothSum):
        self.base = f
        self.n_components = 1
        self.dim = f.dim
        self.nu = f.nu
        self.H = getattr(f, "H", None)

    @property
    def grad_cost(self):
        return self.base.grad_cost

    def component_value(self, j, x):
        return self.base.full_value(x)

    def component_grad(self, j, x):
        return self.base.full_grad(x)

    def component_grads(self, x):
        return self.base.full_grad(x)[None, :]

    def full_value(self, x):
        return self.base.full_value(x)

    def full_grad(self, x):
        return self.base.full_grad(x)


# -- nonsmooth blocks --------------------------------------------------------

def soft_shrink(kappa, v):
    """Componentwise ``sign(v) * max(|v| - kappa, 0)``, the prox of ``kappa*||.||_1``."""
    if kappa < 0:
        raise ValueError("kappa must be nonnegative")
    v = np.asarray(v, dtype=float)
    return np.sign(v) * np.maximum(np.abs(v) - kappa, 0.0)


class L1Norm:
    """``mu * ||y||_1``; a box feasible set keeps the prox separable."""

    quadratic = False

    def __init__(self, mu, feasible=None):
        if mu < 0:
            raise ValueError("mu must be nonnegative")
        self.mu = float(mu)
        self.feasible = feasible or WholeSpace()
        if isinstance(self.feasible, Ball):
            raise ValueError("l1 prox over a ball is not supported")

    def value(self, y):
        return self.mu * float(np.abs(y).sum())

    def prox(self, gamma, v):
        return self.feasible.project(soft_shrink(self.mu / gamma, v))


class QuadraticBlock:
    """``1/2 y^T P y + q^T y`` used as the y-block objective."""

    quadratic = True

    def __init__(self, P, q):
        self.P = as_dense(P)
        self.q = np.asarray(q, dtype=float)
        self.feasible = WholeSpace()

    def value(self, y):
        return float(0.5 * y @ (self.P @ y) + self.q @ y)

    def prox(self, gamma, v):
        n = self.q.shape[0]
        return np.linalg.solve(self.P + gamma * np.eye(n), gamma * np.asarray(v) - self.q)


class ZeroBlock:
    """The zero function over a feasible set; its prox is the projection."""

    quadratic = False

    def __init__(self, dim, feasible=None):
        self.dim = dim
        self.feasible = feasible or WholeSpace()

    def value(self, y):
        return 0.0

    def prox(self, gamma, v):
        return self.feasible.project(v)


@dataclass
class Block:
    """One nonsmooth term together with its constraint matrix."""

    g: object
    B: object

    @property
    def dim(self) -> int:
        return self.B.shape[1]


# -- instances ---------------------------------------------------------------

@dataclass
class Solution:
    x: np.ndarray
    ys: tuple
    lam: np.ndarray
    F: float
    z: np.ndarray | None = None


@dataclass
class ProblemSpec:
    """A linearly constrained separable instance.

    ``blocks`` empty means the ALM problem ``min f(x) s.t. Ax = b``; ``lead`` is
    the extra block updated first in the Gauss-Seidel three-block method.
    """

    f: SmoothSum
    A: object
    b: np.ndarray
    blocks: tuple = ()
    X: object = field(default_factory=WholeSpace)
    H: np.ndarray | None = None
    lead: Block | None = None
    kind: str = "generic"
    reference: Solution | None = None
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        self.b = np.asarray(self.b, dtype=float)
        self.blocks = tuple(self.blocks)
        n = self.b.shape[0]
        if self.A.shape != (n, self.f.dim):
            raise ValueError(f"A has shape {self.A.shape}, expected {(n, self.f.dim)}")
        for blk in self.blocks + ((self.lead,) if self.lead else ()):
            if blk.B.shape[0] != n:
                raise ValueError("block matrix row count must match b")
        if self.H is None:
            self.H = np.ones(self.f.dim)

    @property
    def B(self):
        return self.blocks[0].B

    @property
    def g(self):
        return self.blocks[0].g

    @property
    def n_blocks(self) -> int:
        return len(self.blocks)

    def sq_norm(self, M) -> float:
        """Cached ``lambda_max(M^T M)`` of a constraint matrix."""
        key = ("sq", id(M))
        if key not in self._cache:
            if min(M.shape) <= 500:
                s = np.linalg.norm(as_dense(M), 2) if M.shape[0] and M.shape[1] else 0.0
            else:
                s = spectral_norm_est(M, tol=1e-12)
            self._cache[key] = float(s) ** 2
        return self._cache[key]

    def gram_scalar(self, M) -> tuple[bool, float]:
        """Cached test whether ``M^T M = c I``; returns ``(flag, c)``."""
        key = ("gram", id(M))
        if key not in self._cache:
            G = M.T @ M
            self._cache[key] = is_scalar_identity(G)
        return self._cache[key]

    def residual(self, x, ys=(), z=None) -> np.ndarray:
        r = self.A @ x
        for blk, y in zip(self.blocks, ys):
            r = r + blk.B @ y
        if self.lead is not None and z is not None:
            r = r + self.lead.B @ z
        return r - self.b

    def objective(self, x, ys=(), z=None) -> float:
        val = self.f.full_value(x)
        for blk, y in zip(self.blocks, ys):
            val += blk.g.value(y)
        if self.lead is not None and z is not None:
            val += self.lead.g.value(z)
        return float(val)


def make_fused_lasso(features, labels, G, mu, H=None) -> ProblemSpec:
    """Graph-guided fused lasso with logistic loss, split as ``A x - y = 0``, ``A = [G; I]``."""
    if mu <= 0:
        raise ValueError("mu must be positive")
    f = LogisticSum(features, labels, H=H)
    l = f.dim
    G = sp.csr_matrix(G, dtype=float) if G is not None else sp.csr_matrix((0, l))
    if G.shape[1] != l:
        raise ValueError("graph matrix column count must equal the feature count")
    A = sp.vstack([G, sp.identity(l, format="csr")], format="csr")
    n = A.shape[0]
    B = -sp.identity(n, format="csr")
    return ProblemSpec(
        f=f, A=A, b=np.zeros(n), blocks=(Block(L1Norm(mu), B),), H=f.H, kind="fused-lasso"
    )


def _check_psd(M, name):
    M = as_dense(M)
    if M.size and not psd_certify(M):
        raise ValueError(f"{name} must be symmetric positive semidefinite")
    return M


def make_quadratic_test(P1, q1, P2, q2, A, B, b, N=1, rng=None, spread=1.0, const=0.0):
    """Quadratic instance with ``f`` split into ``N`` components.

    Components share the Hessian ``P1`` and have linear terms ``q1 + o_j`` with
    zero-mean offsets ``o_j``. Passing ``P2=None`` gives the ALM problem
    without a y-block.
    """
    P1 = _check_psd(P1, "P1")
    q1 = np.asarray(q1, dtype=float)
    n1 = q1.shape[0]
    if N > 1:
        rng = rng or SeededRng(0)
        off = spread * rng.normal(N * n1).reshape(N, n1)
        off -= off.mean(axis=0)
        Q = q1[None, :] + off
    else:
        Q = q1[None, :]
    f = QuadraticSum(P1, Q, const=const)
    A = as_dense(A).reshape(-1, n1)
    blocks = ()
    if P2 is not None:
        P2 = _check_psd(P2, "P2")
        q2 = np.asarray(q2, dtype=float)
        blocks = (Block(QuadraticBlock(P2, q2), as_dense(B).reshape(-1, q2.shape[0])),)
    kind = "quadratic" if blocks else "alm"
    b = np.atleast_1d(np.asarray(b, dtype=float))
    return ProblemSpec(f=f, A=A, b=b, blocks=blocks, kind=kind)


def kkt_reference(problem: ProblemSpec) -> Solution:
    """Solve the KKT system of a strictly convex quadratic instance directly."""
    f = problem.f
    if not isinstance(f, QuadraticSum):
        raise ValueError("kkt_reference needs a quadratic smooth part")
    for blk in problem.blocks:
        if not isinstance(blk.g, QuadraticBlock):
            raise ValueError("kkt_reference needs quadratic blocks")
    A = as_dense(problem.A)
    b = problem.b
    n = b.shape[0]
    mats = [f.P] + [blk.g.P for blk in problem.blocks]
    cons = [A] + [as_dense(blk.B) for blk in problem.blocks]
    rhs_top = [-f.q] + [-blk.g.q for blk in problem.blocks]
    sizes = [M.shape[0] for M in mats]
    total = sum(sizes)
    K = np.zeros((total + n, total + n))
    off = 0
    for M, C in zip(mats, cons):
        m = M.shape[0]
        K[off:off + m, off:off + m] = M
        K[off:off + m, total:] = -C.T
        K[total:, off:off + m] = C
        off += m
    rhs = np.concatenate(rhs_top + [b])
    try:
        sol = np.linalg.solve(K, rhs)
    except np.linalg.LinAlgError as exc:
        raise ValueError("singular KKT matrix") from exc
    scale = max(1.0, float(np.abs(K).max()) * max(1.0, float(np.abs(sol).max())))
    if np.abs(K @ sol - rhs).max() > 1e-10 * scale:
        raise ValueError("KKT solve inaccurate; matrix is near singular")
    parts = np.split(sol[:total], np.cumsum(sizes)[:-1])
    x, ys = parts[0], tuple(parts[1:])
    lam = sol[total:]
    return Solution(x=x, ys=ys, lam=lam, F=problem.objective(x, ys))


def nonsmooth_fixture() -> ProblemSpec:
    """``min 1/2 (x-1)^2 + |y|  s.t.  x - y = 0`` with solution ``(0, 0, -1)``, ``F* = 1/2``.

    Optimality by hand: ``0 in (x-1) + d|x|`` at ``x = 0``; then
    ``lam = grad f(0) = -1``.
    """
    f = QuadraticSum(np.eye(1), np.array([[-1.0]]), const=0.5)
    prob = ProblemSpec(
        f=f,
        A=np.eye(1),
        b=np.zeros(1),
        blocks=(Block(L1Norm(1.0), -np.eye(1)),),
        kind="nonsmooth-fixture",
    )
    prob.reference = Solution(x=np.zeros(1), ys=(np.zeros(1),), lam=np.array([-1.0]), F=0.5)
    return prob
