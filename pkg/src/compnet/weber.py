"""Coefficients for unseen samples: a weighted geometric median of fitted rows.

The new row solves

    min_w  sum_i r_i ||w - w_hat_i||_2    s.t.  1.w = 0

by ADMM with one consensus copy ``m_i`` per anchor, multipliers ``u_i`` for
``m_i = w`` and ``v`` for the zero-sum constraint.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels


class IsolatedSampleError(ValueError):
    pass


@dataclass(frozen=True)
class WeberConfig:
    mu: float = 1.0
    eta: float = 1.0
    max_iters: int = 5000
    tol: float = 1e-6
    zero_sum: bool = True

    def __post_init__(self):
        if self.mu <= 0 or (self.zero_sum and self.eta <= 0):
            raise ValueError("mu and eta must be positive")
        if self.max_iters < 1 or self.tol <= 0:
            raise ValueError("max_iters and tol must be positive")


@dataclass
class WeberResult:
    w: np.ndarray
    iterations: int
    converged: bool


def weber_objective(w, anchors, weights) -> float:
    anchors = np.atleast_2d(anchors)
    return float(np.asarray(weights) @ np.linalg.norm(anchors - np.asarray(w)[None, :], axis=1))


def weber_m_step(x, anchor, weight, mu):
    """Prox of ``(weight/mu) ||. - anchor||_2`` evaluated at ``x``."""
    if mu <= 0:
        raise ValueError("mu must be positive")
    x = np.asarray(x, dtype=float)
    anchor = np.asarray(anchor, dtype=float)
    d = x - anchor
    nrm = np.linalg.norm(d)
    rad = weight / mu
    if nrm < kernels.WEBER_EPS or nrm <= rad:
        return anchor.copy()
    return x - rad * d / nrm


def update_weber_w(m, u, v, config: WeberConfig, n_total=None):
    """Closed-form w-step: ``(mu n I + eta 1 1^T)^-1 [mu sum(m_i + u_i/mu) - v 1]``.

    Uses Sherman-Morrison; ``n_total`` defaults to the number of rows of ``m``.
    """
    m = np.atleast_2d(m)
    u = np.atleast_2d(u)
    n = m.shape[0] if n_total is None else n_total
    p = m.shape[1]
    mu = config.mu
    eta = config.eta if config.zero_sum else 0.0
    rhs = mu * (m + u / mu).sum(0) - v
    return (rhs - eta / (mu * n + eta * p) * rhs.sum()) / (mu * n)


def solve_weber(anchors, weights, config: WeberConfig = WeberConfig()) -> WeberResult:
    """ADMM for the (optionally zero-sum constrained) weighted geometric median."""
    anchors = np.atleast_2d(np.asarray(anchors, dtype=float))
    weights = np.asarray(weights, dtype=float).reshape(-1)
    if weights.size != anchors.shape[0]:
        raise ValueError("one weight per anchor required")
    if np.any(weights < 0) or not np.all(np.isfinite(weights)):
        raise ValueError("weights must be finite and nonnegative")
    if not np.any(weights > 0):
        raise IsolatedSampleError("isolated sample: no neighbors in graph")

    pos = weights > 0
    anc = np.ascontiguousarray(anchors[pos])
    wts = np.ascontiguousarray(weights[pos])
    n_idle = int((~pos).sum())
    k, p = anc.shape
    if k == 1:
        # one active anchor: the minimizer is its projection, no iterations needed
        w = anc[0] - anc[0].mean() if config.zero_sum else anc[0].copy()
        return WeberResult(w=w, iterations=0, converged=True)
    w = np.zeros(p)
    m = np.zeros((k, p))
    u = np.zeros((k, p))
    u_idle = np.zeros(p)
    eta = config.eta if config.zero_sum else 0.0
    it, converged, finite = kernels.weber_solve(anc, wts, n_idle, w, m, u, u_idle, config.mu, eta,
                                                config.max_iters, config.tol, config.zero_sum)
    if not finite:
        raise FloatingPointError(f"Weber ADMM diverged at iteration {it}")
    return WeberResult(w=w, iterations=it, converged=converged)


def predict_response(w, z):
    """``z . w`` for one sample, or row-wise for matrices."""
    w = np.asarray(w, dtype=float)
    z = np.asarray(z, dtype=float)
    if w.shape != z.shape:
        raise ValueError(f"shape mismatch: w {w.shape} vs z {z.shape}")
    if w.ndim == 1:
        return float(z @ w)
    return np.einsum("ij,ij->i", z, w)


def predict_coefficients(anchors, weight_rows, config: WeberConfig = WeberConfig(),
                         fallback: str = "mean"):
    """Weber coefficients for each row of ``weight_rows`` (new x train).

    Rows without any positive weight get the mean of the anchors when
    ``fallback='mean'`` (flagged in the returned mask), otherwise raise.
    """
    anchors = np.atleast_2d(anchors)
    weight_rows = np.atleast_2d(weight_rows)
    out = np.empty((weight_rows.shape[0], anchors.shape[1]))
    isolated = np.zeros(weight_rows.shape[0], dtype=bool)
    for q, row in enumerate(weight_rows):
        if not np.any(row > 0):
            if fallback != "mean":
                raise IsolatedSampleError("isolated sample: no neighbors in graph")
            isolated[q] = True
            mean = anchors.mean(0)
            if config.zero_sum:
                mean = mean - mean.mean()
            out[q] = mean
            continue
        out[q] = solve_weber(anchors, row, config).w
    return out, isolated
