"""Choosing (lambda1, lambda2) by k-fold or leave-one-out cross-validation.

Held-out samples get coefficients from the Weber predictor, with weights
taken from the full graph restricted to (held-out rows x training columns).
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .baseline import ClFit, fit_cl, predict_cl
from .composition import CompositionalDataset, log_transform
from .graph import check_graph
from .solver import FitResult, SolverConfig, fit_arrays
from .weber import WeberConfig, predict_coefficients

MODES = ("proposed", "snl", "cl")


def mse(y_true, y_pred) -> float:
    y_true = np.asarray(y_true, dtype=float).reshape(-1)
    y_pred = np.asarray(y_pred, dtype=float).reshape(-1)
    if y_true.size != y_pred.size or y_true.size == 0:
        raise ValueError("mse needs two nonempty vectors of equal length")
    return float(np.mean((y_true - y_pred) ** 2))


def r_squared(y_true, y_pred) -> float:
    y_true = np.asarray(y_true, dtype=float).reshape(-1)
    y_pred = np.asarray(y_pred, dtype=float).reshape(-1)
    if y_true.size != y_pred.size:
        raise ValueError("length mismatch")
    ss_tot = ((y_true - y_true.mean()) ** 2).sum()
    if ss_tot == 0:
        raise ValueError("R^2 undefined: response has zero variance")
    return float(1.0 - ((y_true - y_pred) ** 2).sum() / ss_tot)


@dataclass(frozen=True)
class CvGrid:
    lambda1_values: tuple
    lambda2_values: tuple

    def __post_init__(self):
        l1 = tuple(sorted(float(v) for v in self.lambda1_values))
        l2 = tuple(sorted(float(v) for v in self.lambda2_values))
        if not l1 or not l2:
            raise ValueError("grid must be nonempty")
        if min(l1) < 0 or min(l2) < 0:
            raise ValueError("grid values must be nonnegative")
        object.__setattr__(self, "lambda1_values", l1)
        object.__setattr__(self, "lambda2_values", l2)

    @classmethod
    def default(cls, points: int = 7) -> "CvGrid":
        vals = tuple(np.logspace(-2, 1, points))
        return cls(vals, vals)


@dataclass
class CvReport:
    mode: str
    lambda1_values: tuple
    lambda2_values: tuple
    mean_mse: np.ndarray
    sd_mse: np.ndarray
    fold_mse: np.ndarray
    predictions: np.ndarray  # (n_l1, n_l2, n) out-of-fold predictions
    folds: list
    seed: Optional[int]
    isolated: list = field(default_factory=list)

    @property
    def best_index(self):
        # row-major argmin: smallest lambda1, then smallest lambda2, on ties
        flat = int(np.argmin(self.mean_mse))
        return np.unravel_index(flat, self.mean_mse.shape)

    @property
    def best(self):
        i, j = self.best_index
        return self.lambda1_values[i], self.lambda2_values[j]

    @property
    def best_predictions(self) -> np.ndarray:
        i, j = self.best_index
        return self.predictions[i, j]

    def cells(self):
        for a, l1 in enumerate(self.lambda1_values):
            for c, l2 in enumerate(self.lambda2_values):
                yield {"lambda1": l1, "lambda2": l2,
                       "mse_mean": float(self.mean_mse[a, c]), "mse_sd": float(self.sd_mse[a, c])}

    def to_json(self) -> dict:
        l1, l2 = self.best
        return {
            "mode": self.mode,
            "best": {"lambda1": l1, "lambda2": l2},
            "cells": list(self.cells()),
            "folds": [f.tolist() for f in self.folds],
            "seed": self.seed,
            "isolated_validation_samples": self.isolated,
        }


def kfold_split(n: int, k: int, seed) -> list:
    """Random partition of ``range(n)`` into ``k`` folds whose sizes differ by at most one."""
    if not 2 <= k <= n:
        raise ValueError(f"need 2 <= k <= n (k={k}, n={n})")
    perm = np.random.default_rng(seed).permutation(n)
    return [np.sort(f) for f in np.array_split(perm, k)]


def weber_for(mode: str, weber_config: Optional[WeberConfig] = None) -> WeberConfig:
    cfg = weber_config or WeberConfig()
    return replace(cfg, zero_sum=(mode == "proposed"))


def solver_for(mode: str, base: Optional[SolverConfig], lambda1: float, lambda2: float) -> SolverConfig:
    base = base or SolverConfig(trace_objective=False)
    return replace(base, lambda1=lambda1, lambda2=lambda2, zero_sum=(mode == "proposed"))


def fit_model(z, y, r, mode: str, lambda1: float, lambda2: float,
              base_config: Optional[SolverConfig] = None):
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}")
    if mode == "cl":
        return fit_cl(z, y, lambda2, base_config or SolverConfig(trace_objective=False))
    return fit_arrays(z, y, r, solver_for(mode, base_config, lambda1, lambda2))


def predict_new(model, mode: str, z_new, weight_rows, weber_config: Optional[WeberConfig] = None):
    """Predicted responses for new samples; returns ``(y_hat, coefs, isolated_mask)``."""
    z_new = np.atleast_2d(z_new)
    if isinstance(model, ClFit):
        coefs = np.tile(model.beta, (z_new.shape[0], 1))
        return np.atleast_1d(predict_cl(model, z_new)), coefs, np.zeros(z_new.shape[0], bool)
    coefs, isolated = predict_coefficients(model.w, weight_rows, weber_for(mode, weber_config))
    return np.einsum("ij,ij->i", z_new, coefs), coefs, isolated


def predict_validation(model, mode, z_valid, weight_rows, weber_config=None) -> np.ndarray:
    return predict_new(model, mode, z_valid, weight_rows, weber_config)[0]


def _run_fold(z, y, r, train, valid, mode, l1_values, l2_values, base_config, weber_config,
              center):
    preds = np.empty((len(l1_values), len(l2_values), valid.size))
    isolated = np.zeros(valid.size, dtype=bool)
    r_train = r[np.ix_(train, train)]
    weights = r[np.ix_(valid, train)]
    shift = y[train].mean() if center else 0.0
    for a, l1 in enumerate(l1_values):
        for c, l2 in enumerate(l2_values):
            model = fit_model(z[train], y[train] - shift, r_train, mode, l1, l2, base_config)
            preds[a, c], _, iso = predict_new(model, mode, z[valid], weights, weber_config)
            preds[a, c] += shift
            isolated |= iso
    return preds, isolated


def kfold_cv(data: CompositionalDataset, r, grid: CvGrid, k: int = 5, mode: str = "proposed",
             seed=0, base_config: Optional[SolverConfig] = None,
             weber_config: Optional[WeberConfig] = None, folds: Optional[Sequence] = None,
             n_jobs: int = 1, center_response: bool = False) -> CvReport:
    """Grid search by k-fold CV; folds may run on ``n_jobs`` threads.

    Each fold writes only its own slots, so the report does not depend on
    ``n_jobs``. ``center_response`` subtracts the training-fold mean of y
    before fitting and adds it back to the predictions.
    """
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}")
    z = log_transform(data)
    y = data.y
    n = data.n
    r = check_graph(r)
    if r.shape != (n, n):
        raise ValueError("graph does not match the dataset")
    folds = list(folds) if folds is not None else kfold_split(n, k, seed)
    l1_values = (0.0,) if mode == "cl" else grid.lambda1_values
    l2_values = grid.lambda2_values

    jobs = []
    for valid in folds:
        valid = np.asarray(valid, dtype=int)
        train = np.setdiff1d(np.arange(n), valid)
        jobs.append((z, y, r, train, valid, mode, l1_values, l2_values, base_config, weber_config,
                     center_response))
    if n_jobs > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            outs = list(pool.map(lambda a: _run_fold(*a), jobs))
    else:
        outs = [_run_fold(*a) for a in jobs]

    shape = (len(l1_values), len(l2_values))
    predictions = np.empty(shape + (n,))
    fold_mse = np.empty(shape + (len(folds),))
    isolated = []
    for f, (valid, (preds, iso)) in enumerate(zip(folds, outs)):
        valid = np.asarray(valid, dtype=int)
        predictions[..., valid] = preds
        fold_mse[..., f] = ((preds - y[valid]) ** 2).mean(axis=-1)
        isolated.extend(int(i) for i in valid[iso])
    sd = fold_mse.std(axis=-1, ddof=1) if len(folds) > 1 else np.zeros(shape)
    return CvReport(mode, tuple(l1_values), tuple(l2_values), fold_mse.mean(axis=-1), sd,
                    fold_mse, predictions, [np.asarray(f) for f in folds], seed, sorted(isolated))


def loocv(data: CompositionalDataset, r, grid: CvGrid, mode: str = "proposed",
          base_config: Optional[SolverConfig] = None,
          weber_config: Optional[WeberConfig] = None, n_jobs: int = 1,
          center_response: bool = False):
    """Leave-one-out CV; returns the report and the held-out predictions at the best cell."""
    if data.n < 3:
        raise ValueError("LOOCV needs at least 3 samples")
    folds = [np.array([i]) for i in range(data.n)]
    report = kfold_cv(data, r, grid, data.n, mode, seed=None, base_config=base_config,
                      weber_config=weber_config, folds=folds, n_jobs=n_jobs,
                      center_response=center_response)
    return report, report.best_predictions.copy()


def fit_best(data: CompositionalDataset, r, report: CvReport, mode: str,
             base_config: Optional[SolverConfig] = None):
    l1, l2 = report.best
    return fit_model(log_transform(data), data.y, check_graph(r), mode, l1, l2, base_config)
