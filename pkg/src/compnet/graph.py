"""Sample similarity graphs: distances, k-NN symmetrization, block graphs, corruption."""

from __future__ import annotations

from typing import Optional

import numpy as np
import pandas as pd
from scipy.spatial.distance import cdist, pdist, squareform

from .composition import clr_transform


class GraphError(ValueError):
    pass


def check_graph(r, binary: bool = False) -> np.ndarray:
    """Validate a similarity graph: square, symmetric, nonnegative, zero diagonal."""
    r = np.asarray(r, dtype=float)
    if r.ndim != 2 or r.shape[0] != r.shape[1]:
        raise GraphError(f"graph must be square, got shape {r.shape}")
    if not np.all(np.isfinite(r)) or np.any(r < 0):
        raise GraphError("graph weights must be finite and nonnegative")
    if np.any(np.diag(r) != 0):
        raise GraphError("graph diagonal must be zero")
    if not np.array_equal(r, r.T):
        raise GraphError("graph must be symmetric")
    if binary and not np.all((r == 0) | (r == 1)):
        raise GraphError("graph must be binary (0/1 entries)")
    return r


def check_distance(d) -> np.ndarray:
    d = np.asarray(d, dtype=float)
    if d.ndim != 2 or d.shape[0] != d.shape[1]:
        raise GraphError("distance matrix must be square")
    if np.any(d < 0) or np.any(np.diag(d) != 0) or not np.array_equal(d, d.T):
        raise GraphError("distance matrix must be symmetric, nonnegative, zero diagonal")
    return d


# ---------------------------------------------------------------- distances


def _split_columns(df: pd.DataFrame):
    numeric = [c for c in df.columns if pd.api.types.is_numeric_dtype(df[c])]
    categorical = [c for c in df.columns if c not in numeric]
    return numeric, categorical


def gower_cross(a: pd.DataFrame, b: pd.DataFrame, ranges: Optional[dict] = None) -> np.ndarray:
    """Gower dissimilarity between every row of ``a`` and every row of ``b``.

    Numeric columns contribute ``|u - v| / range`` (zero when the range is
    zero), categorical columns contribute a 0/1 mismatch; the result is the
    unweighted mean over columns. ``ranges`` maps numeric columns to
    ``(min, max)``; by default they come from ``a`` and rows of ``b`` are
    clamped into them.
    """
    if a.shape[1] == 0:
        raise GraphError("no covariates for Gower")
    if list(a.columns) != list(b.columns):
        raise GraphError("covariate columns differ")
    numeric, categorical = _split_columns(a)
    total = np.zeros((len(a), len(b)))
    for c in numeric:
        u = a[c].to_numpy(dtype=float)
        v = b[c].to_numpy(dtype=float)
        lo, hi = ranges[c] if ranges and c in ranges else (u.min(), u.max())
        span = hi - lo
        if span > 0:
            u = np.clip(u, lo, hi)
            v = np.clip(v, lo, hi)
            total += np.abs(u[:, None] - v[None, :]) / span
    for c in categorical:
        u = a[c].astype(str).to_numpy()
        v = b[c].astype(str).to_numpy()
        total += (u[:, None] != v[None, :]).astype(float)
    return total / a.shape[1]


def gower_distance(covariates: pd.DataFrame) -> np.ndarray:
    if covariates is None or covariates.shape[1] == 0:
        raise GraphError("no covariates for Gower")
    d = gower_cross(covariates, covariates)
    d = (d + d.T) / 2  # exact already; guards rounding in the mean
    np.fill_diagonal(d, 0.0)
    return d


def aitchison_distance(data) -> np.ndarray:
    """Euclidean distance between clr rows (log-ratio distance)."""
    zc = clr_transform(data)
    return squareform(pdist(zc, metric="euclidean"))


def numeric_ranges(df: pd.DataFrame) -> dict:
    numeric, _ = _split_columns(df)
    return {c: (float(df[c].min()), float(df[c].max())) for c in numeric}


def aitchison_cross(a, b) -> np.ndarray:
    """Log-ratio distance from each row of ``a`` to each row of ``b``."""
    return cdist(clr_transform(a), clr_transform(b), metric="euclidean")


# ---------------------------------------------------------------- graphs


def knn_rows(d_cross, k: int) -> np.ndarray:
    """Neighbour weights for new samples: 1 on the k closest reference columns.

    Same stable lowest-index tie rule as :func:`knn_indicator`.
    """
    d = np.atleast_2d(np.asarray(d_cross, dtype=float))
    if not 1 <= k <= d.shape[1]:
        raise GraphError(f"k must satisfy 1 <= k <= {d.shape[1]} (k={k})")
    out = np.zeros_like(d)
    for q, row in enumerate(d):
        out[q, np.argsort(row, kind="stable")[:k]] = 1.0
    return out


def knn_indicator(d, k: int) -> np.ndarray:
    """``S[i, j] = 1`` iff j is one of the k nearest neighbours of i (self excluded).

    Ties go to the lowest sample index.
    """
    d = check_distance(d)
    n = d.shape[0]
    if not 1 <= k < n:
        raise GraphError(f"k must satisfy 1 <= k < n (k={k}, n={n})")
    s = np.zeros((n, n))
    for i in range(n):
        row = d[i].copy()
        row[i] = np.inf
        nearest = np.argsort(row, kind="stable")[:k]
        s[i, nearest] = 1.0
    return s


def knn_graph(d, k: int = 5) -> np.ndarray:
    """Symmetrized k-NN graph ``(S + S^T) / 2``; entries in {0, 0.5, 1}."""
    s = knn_indicator(d, k)
    return check_graph((s + s.T) / 2)


def cluster_block_graph(labels) -> np.ndarray:
    labels = np.asarray(labels)
    if labels.size == 0:
        raise GraphError("labels must be nonempty")
    r = (labels[:, None] == labels[None, :]).astype(float)
    np.fill_diagonal(r, 0.0)
    return r


def corrupt_graph(r_true, p_keep: float, seed=None) -> np.ndarray:
    """Keep each unordered pair with probability ``p_keep``, otherwise flip it 0 <-> 1."""
    r_true = check_graph(r_true, binary=True)
    if not 0 <= p_keep <= 1:
        raise GraphError("p_keep must lie in [0, 1]")
    n = r_true.shape[0]
    rng = np.random.default_rng(seed)
    iu = np.triu_indices(n, k=1)
    flip = rng.random(iu[0].size) >= p_keep
    upper = r_true[iu].copy()
    upper[flip] = 1.0 - upper[flip]
    r = np.zeros_like(r_true)
    r[iu] = upper
    return r + r.T


def restrict(r, rows, cols) -> np.ndarray:
    return np.asarray(r)[np.ix_(np.asarray(rows, int), np.asarray(cols, int))]


# ---------------------------------------------------------------- file formats


def read_graph(path, fmt: str = "dense", n: Optional[int] = None) -> np.ndarray:
    """Read a graph stored as an n x n CSV (``dense``) or ``i,j,weight`` triplets.

    Triplet indices are 0-based; each listed pair is mirrored.
    """
    if fmt == "dense":
        r = np.loadtxt(path, delimiter=",", ndmin=2)
    elif fmt == "triplet":
        df = pd.read_csv(path)
        i = df["i"].to_numpy(dtype=int)
        j = df["j"].to_numpy(dtype=int)
        w = df["weight"].to_numpy(dtype=float)
        size = n if n is not None else int(max(i.max(initial=-1), j.max(initial=-1))) + 1
        r = np.zeros((size, size))
        r[i, j] = w
        r[j, i] = w
    else:
        raise ValueError(f"unknown graph format {fmt!r}")
    return check_graph(r)


def write_graph(path, r, fmt: str = "dense") -> None:
    r = check_graph(r)
    if fmt == "dense":
        np.savetxt(path, r, delimiter=",", fmt="%.10g")
    elif fmt == "triplet":
        i, j = np.nonzero(np.triu(r, k=1))
        pd.DataFrame({"i": i, "j": j, "weight": r[i, j]}).to_csv(path, index=False)
    else:
        raise ValueError(f"unknown graph format {fmt!r}")
