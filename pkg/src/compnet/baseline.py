"""Shared-coefficient baseline: zero-sum constrained lasso on log-proportions.

    min_beta  sum_i (y_i - z_i.beta)^2 + lam ||beta||_1   s.t. 1.beta = 0

solved with the same splitting as the multi-task solver (sparse copy ``b``,
multipliers ``t`` and ``u``), minus the pairwise copies.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .solver import SolverConfig, SolverDivergence, soft_threshold


@dataclass
class ClFit:
    beta: np.ndarray
    sparse: np.ndarray
    iterations: int
    converged: bool
    trace: list
    lam: float

    def to_json(self) -> dict:
        return {
            "w": [self.beta.tolist()],
            "b": [self.sparse.tolist()],
            "iterations": self.iterations,
            "converged": self.converged,
            "trace": self.trace,
            "clusters": None,
            "mode": "cl",
            "shared": True,
            "lambda": self.lam,
        }


def fit_cl(z, y, lam: float, config: SolverConfig = SolverConfig()) -> ClFit:
    z = np.atleast_2d(np.asarray(z, dtype=float))
    y = np.asarray(y, dtype=float).reshape(-1)
    n, p = z.shape
    if n < 1 or p < 2 or y.size != n:
        raise ValueError("need n >= 1 rows, p >= 2 columns and one response per row")
    if lam < 0:
        raise ValueError("lambda must be nonnegative")
    phi, psi = config.phi, config.psi
    factor = cho_factor(2.0 * z.T @ z + phi * np.eye(p) + psi * np.ones((p, p)))
    zty2 = 2.0 * z.T @ y

    beta = np.zeros(p)
    b = np.zeros(p)
    t = np.zeros(p)
    u = 0.0
    trace = []
    converged = False
    it = 0
    for it in range(1, config.max_iters + 1):
        beta_old = beta
        beta = cho_solve(factor, zty2 - t + phi * b - u)
        b = soft_threshold(beta + t / phi, lam / phi)
        t = t + phi * (beta - b)
        row = beta.sum()
        u += psi * row
        primal = max(np.linalg.norm(beta - b), abs(row))
        dual = np.linalg.norm(beta - beta_old)
        entry = {"iter": it, "primal": float(primal), "dual": float(dual), "row_sum": float(abs(row))}
        if config.trace_objective:
            entry["objective"] = float(((y - z @ beta) ** 2).sum() + lam * np.abs(beta).sum())
        trace.append(entry)
        if not np.isfinite(primal + dual):
            raise SolverDivergence(it, entry)
        if primal <= config.tol_primal and dual <= config.tol_dual and abs(row) <= config.tol_sum:
            converged = True
            break
    return ClFit(beta=beta, sparse=b, iterations=it, converged=converged, trace=trace, lam=lam)


def predict_cl(fit: ClFit, z_new) -> np.ndarray | float:
    z_new = np.asarray(z_new, dtype=float)
    if z_new.shape[-1] != fit.beta.size:
        raise ValueError(f"expected {fit.beta.size} log-features, got {z_new.shape[-1]}")
    out = z_new @ fit.beta
    return float(out) if np.ndim(out) == 0 else out
