"""LIBSVM text I/O, the correlation feature graph, and synthetic instances."""

from __future__ import annotations

import io
import logging
import warnings
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .numerics import SeededRng
from .problem import kkt_reference, make_fused_lasso, make_quadratic_test

__all__ = [
    "Dataset",
    "LibsvmParseError",
    "build_graph_matrix",
    "gen_dataset",
    "gen_synthetic",
    "load_libsvm",
    "parse_libsvm",
    "save_libsvm",
    "write_libsvm",
]

log = logging.getLogger(__name__)


class LibsvmParseError(ValueError):
    def __init__(self, line: int, token: str, reason: str):
        self.line, self.token, self.reason = line, token, reason
        super().__init__(f"line {line}: {reason} (token {token!r})")


@dataclass
class Dataset:
    features: sp.csr_matrix  # N x l
    labels: np.ndarray  # entries in {-1, +1}

    def __post_init__(self):
        self.features = sp.csr_matrix(self.features, dtype=float)
        self.labels = np.asarray(self.labels, dtype=float)
        if self.labels.shape != (self.features.shape[0],):
            raise ValueError("one label per sample required")
        if not np.all(np.isin(self.labels, (-1.0, 1.0))):
            raise ValueError("labels must be -1 or +1")

    @property
    def sample_count(self) -> int:
        return self.features.shape[0]

    @property
    def feature_count(self) -> int:
        return self.features.shape[1]

    def normalized(self) -> "Dataset":
        """Copy with every nonzero column scaled to unit Euclidean norm."""
        F = self.features.tocsc(copy=True)
        norms = np.sqrt(np.asarray(F.multiply(F).sum(axis=0))).ravel()
        norms[norms == 0] = 1.0
        return Dataset((F @ sp.diags(1.0 / norms)).tocsr(), self.labels.copy())


def _label(tok: str, lineno: int) -> float:
    try:
        v = float(tok)
    except ValueError:
        raise LibsvmParseError(lineno, tok, "non-numeric label") from None
    if v == 1.0:
        return 1.0
    if v == -1.0:
        return -1.0
    if v == 0.0:
        warnings.warn(f"line {lineno}: label 0 mapped to -1", stacklevel=3)
        return -1.0
    raise LibsvmParseError(lineno, tok, "label is not binary")


def parse_libsvm(stream, n_features: int | None = None) -> Dataset:
    """Read ``<label> <idx>:<val> ...`` lines with 1-based increasing indices.

    ``stream`` is any iterable of text lines (an open file, ``io.StringIO``).
    Blank lines are skipped. Labels ``+1``/``1`` map to +1 and ``-1``/``0``
    to -1. The feature count is the largest index seen unless given.
    """
    if isinstance(stream, str):
        stream = io.StringIO(stream)
    labels, indptr, indices, data = [], [0], [], []
    for lineno, raw in enumerate(stream, start=1):
        toks = raw.split()
        if not toks:
            continue
        labels.append(_label(toks[0], lineno))
        last = 0
        for tok in toks[1:]:
            idx_s, sep, val_s = tok.partition(":")
            if not sep:
                raise LibsvmParseError(lineno, tok, "expected index:value")
            try:
                idx = int(idx_s)
                val = float(val_s)
            except ValueError:
                raise LibsvmParseError(lineno, tok, "non-numeric index or value") from None
            if idx < 1:
                raise LibsvmParseError(lineno, tok, "indices are 1-based")
            if idx <= last:
                raise LibsvmParseError(lineno, tok, "indices must increase strictly")
            if n_features is not None and idx > n_features:
                raise LibsvmParseError(lineno, tok, f"index exceeds feature count {n_features}")
            last = idx
            indices.append(idx - 1)
            data.append(val)
        indptr.append(len(indices))
    if not labels:
        raise LibsvmParseError(0, "", "empty input")
    l = n_features if n_features is not None else (max(indices) + 1 if indices else 0)
    X = sp.csr_matrix(
        (np.array(data, dtype=float), np.array(indices, dtype=np.int64), np.array(indptr)),
        shape=(len(labels), l),
    )
    return Dataset(X, np.array(labels))


def write_libsvm(ds: Dataset, stream) -> None:
    """Write ``ds`` so that :func:`parse_libsvm` reproduces it exactly."""
    X = ds.features
    for i in range(ds.sample_count):
        lo, hi = X.indptr[i], X.indptr[i + 1]
        parts = ["+1" if ds.labels[i] > 0 else "-1"]
        parts += [f"{j + 1}:{float(v)!r}" for j, v in zip(X.indices[lo:hi], X.data[lo:hi])]
        stream.write(" ".join(parts) + "\n")


def load_libsvm(path, n_features: int | None = None) -> Dataset:
    with open(path, encoding="utf-8") as fh:
        return parse_libsvm(fh, n_features)


def save_libsvm(ds: Dataset, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        write_libsvm(ds, fh)


def build_graph_matrix(features, threshold: float) -> sp.csr_matrix:
    """Edge-difference matrix over feature pairs with ``|corr| >= threshold``.

    Each edge ``(i, j)``, ``i < j``, yields a row with +1 at ``i`` and -1 at
    ``j``; rows are in lexicographic ``(i, j)`` order. Zero-variance columns
    take part in no edge.
    """
    if not 0.0 < threshold <= 1.0:
        raise ValueError("threshold must lie in (0, 1]")
    F = features.toarray() if sp.issparse(features) else np.asarray(features, dtype=float)
    N, l = F.shape
    if N < 2:
        raise ValueError("at least two samples are needed for correlations")
    std = F.std(axis=0)
    live = np.flatnonzero(std > 0)
    dead = np.flatnonzero(std == 0)
    if dead.size:
        log.info("excluding %d zero-variance columns from the graph: %s", dead.size, dead.tolist())
    rows_i, rows_j = [], []
    if live.size >= 2:
        C = np.corrcoef(F[:, live], rowvar=False)
        iu, ju = np.triu_indices(live.size, k=1)
        hit = np.abs(C[iu, ju]) >= threshold - 1e-12
        rows_i, rows_j = live[iu[hit]], live[ju[hit]]
    E = len(rows_i)
    r = np.repeat(np.arange(E), 2)
    c = np.column_stack([rows_i, rows_j]).ravel() if E else np.zeros(0, dtype=int)
    v = np.tile([1.0, -1.0], E)
    return sp.csr_matrix((v, (r, c)), shape=(E, l))


def gen_dataset(l: int = 50, N: int = 200, seed: int = 0, flip: float = 0.05,
                group: int = 2, density: float = 0.2) -> Dataset:
    """Gaussian features with correlated column groups and logistic-model labels.

    Columns within a group share a common factor, so the correlation graph
    has edges inside groups. Features are scaled by ``1/sqrt(l)``. The ground
    truth is sparse and constant on each group. A label is the sign of the
    margin plus standard logistic noise, and a fraction ``flip`` of the
    labels is then flipped.
    """
    if l < 1 or N < 1:
        raise ValueError("dimensions must be positive")
    rng = SeededRng(seed)
    n_groups = -(-l // group)
    base = rng.normal(N * n_groups).reshape(N, n_groups)
    noise = rng.normal(N * l).reshape(N, l)
    g_of = np.arange(l) // group
    F = (0.9 * base[:, g_of] + np.sqrt(1 - 0.81) * noise) / np.sqrt(l)
    active = rng.random(n_groups) < density
    active[rng.integers(n_groups)] = True
    amp = rng.normal(n_groups) * active
    x_true = amp[g_of]
    u = np.maximum(rng.random(N), 2.0**-53)
    eps = np.log(u) - np.log1p(-u)
    labels = np.where(F @ x_true + eps >= 0, 1.0, -1.0)
    labels[rng.random(N) < flip] *= -1.0
    return Dataset(sp.csr_matrix(F), labels)


def gen_synthetic(kind: str, dims=None, seed: int = 0, mu: float = 1e-5, threshold: float = 0.5,
                  N_components: int = 1):
    """Build a synthetic instance; returns ``(problem, reference or None)``.

    ``fused-lasso``: ``dims = (l, N)``, default ``(50, 200)``.
    ``quadratic``: ``dims = (n,)``; ``n = 1`` is the fixture with solution
    ``(1, 1, 1)``; larger ``n`` draws a random strictly convex instance.
    ``alm``: ``dims = (n,)``; ``n = 1`` is ``min x^2/2 s.t. x = 1``.
    """
    if kind == "fused-lasso":
        l, N = dims or (50, 200)
        ds = gen_dataset(l, N, seed)
        G = build_graph_matrix(ds.features, threshold)
        return make_fused_lasso(ds.features, ds.labels, G, mu), None
    rng = SeededRng(seed)
    (n,) = dims or (1,)
    if n < 1:
        raise ValueError("dimensions must be positive")
    if kind == "quadratic":
        if n == 1:
            args = (np.eye(1), [0.0], np.eye(1), [0.0], np.eye(1), np.eye(1), [2.0])
        else:
            R1 = rng.normal(n * n).reshape(n, n)
            R2 = rng.normal(n * n).reshape(n, n)
            args = (
                np.eye(n) + R1 @ R1.T / n, rng.normal(n),
                np.eye(n) + R2 @ R2.T / n, rng.normal(n),
                np.eye(n) + 0.3 * rng.normal(n * n).reshape(n, n), np.eye(n), rng.normal(n),
            )
        prob = make_quadratic_test(*args, N=N_components, rng=rng)
    elif kind == "alm":
        if n == 1:
            args = (np.eye(1), [0.0], None, None, np.eye(1), None, [1.0])
        else:
            R = rng.normal(n * n).reshape(n, n)
            m = max(1, n // 2)
            args = (np.eye(n) + R @ R.T / n, rng.normal(n), None, None,
                    rng.normal(m * n).reshape(m, n), None, rng.normal(m))
        prob = make_quadratic_test(*args, N=N_components, rng=rng)
    else:
        raise ValueError(f"unknown synthetic kind {kind!r}")
    prob.reference = kkt_reference(prob)
    return prob, prob.reference
