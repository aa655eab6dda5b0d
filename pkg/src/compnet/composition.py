"""Compositional data: simplex checks, closure, log and clr transforms, CSV I/O."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import pandas as pd

SIMPLEX_TOL = 1e-9


class SimplexError(ValueError):
    """Raised when data is not in the open simplex."""


def validate_simplex(values, tol: float = SIMPLEX_TOL) -> bool:
    """True iff every entry is > 0 and the entries sum to one within ``tol``."""
    x = np.asarray(values, dtype=float)
    if x.ndim != 1 or x.size == 0 or not np.all(np.isfinite(x)):
        return False
    return bool(np.all(x > 0) and abs(x.sum() - 1.0) <= tol)


@dataclass(frozen=True)
class Composition:
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if not validate_simplex(v):
            raise SimplexError("not in open simplex")
        object.__setattr__(self, "values", v)

    @property
    def p(self) -> int:
        return self.values.size


def close(counts, zero_replacement: Optional[float] = 1.0) -> Composition:
    """Replace zeros by ``zero_replacement`` and rescale to unit sum.

    With ``zero_replacement=None`` zeros are kept, so an all-zero vector (or any
    vector containing a zero) cannot be closed.
    """
    c = np.asarray(counts, dtype=float)
    if c.ndim != 1 or c.size < 2:
        raise ValueError("counts must be a vector with at least 2 entries")
    if np.any(c < 0) or not np.all(np.isfinite(c)):
        raise ValueError("counts must be finite and nonnegative")
    if zero_replacement is None:
        if not np.any(c > 0):
            raise ValueError("degenerate count vector")
    else:
        if zero_replacement <= 0:
            raise ValueError("zero_replacement must be positive")
        c = np.where(c == 0, zero_replacement, c)
    return Composition(c / c.sum())


def close_rows(counts, zero_replacement: Optional[float] = 1.0) -> np.ndarray:
    """Row-wise :func:`close` for an ``(n, p)`` array."""
    counts = np.atleast_2d(np.asarray(counts, dtype=float))
    return np.vstack([close(row, zero_replacement).values for row in counts])


def logistic_closure(c) -> Composition:
    """Map a real vector to the simplex by ``exp(c) / sum(exp(c))``."""
    c = np.asarray(c, dtype=float)
    if not np.all(np.isfinite(c)):
        raise ValueError("logistic_closure needs finite input")
    e = np.exp(c - c.max())
    return Composition(e / e.sum())


@dataclass
class CompositionalDataset:
    """``n`` compositions (rows of ``x``) with responses and optional covariates."""

    x: np.ndarray
    y: np.ndarray
    covariates: Optional[pd.DataFrame] = None
    feature_names: Sequence[str] = field(default_factory=list)
    sample_ids: Sequence[str] = field(default_factory=list)

    def __post_init__(self):
        self.x = np.atleast_2d(np.asarray(self.x, dtype=float))
        self.y = np.asarray(self.y, dtype=float).reshape(-1)
        n, p = self.x.shape
        if n < 1 or p < 2:
            raise ValueError("need n >= 1 samples and p >= 2 parts")
        if self.y.size != n:
            raise ValueError(f"{self.y.size} responses for {n} samples")
        bad = [i for i in range(n) if not validate_simplex(self.x[i])]
        if bad:
            raise SimplexError(f"not in open simplex (rows {bad[:5]})")
        if self.covariates is not None and len(self.covariates) != n:
            raise ValueError("covariates must have one row per sample")
        if not self.feature_names:
            self.feature_names = [f"x{j + 1}" for j in range(p)]
        if not self.sample_ids:
            self.sample_ids = [str(i + 1) for i in range(n)]
        self.feature_names = list(self.feature_names)
        self.sample_ids = list(self.sample_ids)

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def p(self) -> int:
        return self.x.shape[1]

    def subset(self, idx) -> "CompositionalDataset":
        idx = np.asarray(idx, dtype=int)
        cov = None if self.covariates is None else self.covariates.iloc[idx].reset_index(drop=True)
        return CompositionalDataset(
            self.x[idx], self.y[idx], cov, list(self.feature_names),
            [self.sample_ids[i] for i in idx],
        )


def _as_matrix(data) -> np.ndarray:
    if isinstance(data, CompositionalDataset):
        return data.x
    if isinstance(data, Composition):
        return data.values[None, :]
    return np.atleast_2d(np.asarray(data, dtype=float))


def log_transform(data) -> np.ndarray:
    """Elementwise natural log of the compositions, shape ``(n, p)``."""
    x = _as_matrix(data)
    if np.any(~(x > 0)):
        raise SimplexError("not in open simplex")
    return np.log(x)


def clr_transform(data) -> np.ndarray:
    """Centered log-ratio: log-proportions minus their row mean."""
    z = log_transform(data)
    return z - z.mean(axis=1, keepdims=True)


# ---------------------------------------------------------------- CSV I/O


def read_dataset(
    path,
    response: Optional[str],
    features: Optional[Sequence[str]] = None,
    covariates: Optional[Sequence[str]] = None,
    id_column: str = "id",
    counts: Optional[bool] = None,
    zero_replacement: Optional[float] = 1.0,
    categorical: Optional[Sequence[str]] = None,
) -> CompositionalDataset:
    """Load a one-row-per-sample CSV.

    Feature columns default to every numeric column that is neither the id,
    the response, nor a listed covariate. ``counts=None`` guesses: rows that
    already sum to one are treated as proportions, anything else as counts
    and closed with ``zero_replacement``. Covariate columns are categorical
    iff non-numeric unless named in ``categorical``. ``response=None`` loads
    unlabeled samples (y is NaN).
    """
    df = pd.read_csv(path, encoding="utf-8")
    if response is not None and response not in df.columns:
        raise ValueError(f"response column {response!r} not in {path}")
    cov_cols = list(covariates or [])
    if features is None:
        skip = {id_column, response, *cov_cols}
        features = [c for c in df.columns
                    if c not in skip and pd.api.types.is_numeric_dtype(df[c])]
    features = list(features)
    missing = [c for c in features + cov_cols if c not in df.columns]
    if missing:
        raise ValueError(f"columns not found in {path}: {missing}")
    raw = df[features].to_numpy(dtype=float)
    if counts is None:
        counts = not np.allclose(raw.sum(axis=1), 1.0, atol=SIMPLEX_TOL, rtol=0)
    if counts:
        x = close_rows(raw, zero_replacement)
    else:
        if np.any(raw <= 0):
            if zero_replacement is None:
                raise SimplexError("not in open simplex")
            # already-closed data: explicit multiplicative replacement, then re-close
            raw = np.where(raw <= 0, zero_replacement, raw)
        x = raw / raw.sum(axis=1, keepdims=True)
    cov = None
    if cov_cols:
        cov = df[cov_cols].copy()
        for c in categorical or []:
            cov[c] = cov[c].astype(str)
    ids = df[id_column].astype(str).tolist() if id_column in df.columns else []
    y = np.full(len(df), np.nan) if response is None else df[response].to_numpy(dtype=float)
    return CompositionalDataset(x, y, cov, features, ids)


def write_log_features(path, dataset: CompositionalDataset) -> None:
    z = log_transform(dataset)
    out = pd.DataFrame(z, columns=dataset.feature_names)
    out.insert(0, "id", dataset.sample_ids)
    out.to_csv(path, index=False, float_format="%.6g")
