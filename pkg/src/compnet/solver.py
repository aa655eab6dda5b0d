"""Sparse network lasso for per-sample log-contrast models, fitted by ADMM.

Minimizes over the rows ``w_i`` of an ``n x p`` coefficient matrix

    sum_i (y_i - z_i.w_i)^2 + lambda1 sum_{i>j} r_ij ||w_i - w_j||_2
                            + lambda2 sum_i ||w_i||_1,   s.t. 1.w_i = 0,

where ``z_i`` are log-proportions. ``zero_sum=False`` drops the constraint
(the SNL variant). Each row gets one copy ``a_ij`` per neighbour, a sparse
copy ``b_i`` and a multiplier for the row sum; all start at zero.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
from scipy.cluster.hierarchy import fcluster, linkage
from scipy.linalg import cho_factor, cho_solve
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from . import kernels
from .composition import CompositionalDataset, log_transform
from .graph import check_graph


class SolverDivergence(RuntimeError):
    def __init__(self, iteration, residuals):
        self.iteration = iteration
        self.residuals = residuals
        super().__init__(f"divergence at iteration {iteration}")


@dataclass(frozen=True)
class SolverConfig:
    lambda1: float = 1.0
    lambda2: float = 1.0
    rho: float = 1.0
    phi: float = 1.0
    psi: float = 1.0
    max_iters: int = 2000
    tol_primal: float = 1e-5
    tol_dual: float = 1e-5
    # row sums must also fall below this before a run counts as converged
    tol_sum: float = 1e-7
    zero_sum: bool = True
    trace_objective: bool = True
    # store copies/duals for zero-weight pairs explicitly (same iterates, slower)
    keep_zero_pairs: bool = False

    def __post_init__(self):
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ValueError("lambda1 and lambda2 must be nonnegative")
        if self.rho <= 0 or self.phi <= 0:
            raise ValueError("rho and phi must be positive")
        if self.zero_sum and self.psi <= 0:
            raise ValueError("psi must be positive when zero_sum is on")
        if self.max_iters < 1:
            raise ValueError("max_iters must be positive")
        if min(self.tol_primal, self.tol_dual, self.tol_sum) <= 0:
            raise ValueError("tolerances must be positive")


@dataclass
class AdmmState:
    """Iterates of the ADMM. See :mod:`compnet.kernels` for the edge layout."""

    w: np.ndarray
    b: np.ndarray
    t: np.ndarray
    u: np.ndarray
    ei: np.ndarray
    ej: np.ndarray
    wt: np.ndarray
    idle: np.ndarray
    a_i: np.ndarray
    a_j: np.ndarray
    s_i: np.ndarray
    s_j: np.ndarray

    @classmethod
    def zeros(cls, r: np.ndarray, p: int, keep_zero_pairs: bool = False) -> "AdmmState":
        n = r.shape[0]
        if keep_zero_pairs:
            ei, ej = np.tril_indices(n, k=-1)
        else:
            ei, ej = np.nonzero(np.tril(r, k=-1))
        ei = ei.astype(np.int64)
        ej = ej.astype(np.int64)
        deg = np.bincount(ei, minlength=n) + np.bincount(ej, minlength=n)
        n_edges = ei.size
        return cls(
            w=np.zeros((n, p)), b=np.zeros((n, p)), t=np.zeros((n, p)), u=np.zeros(n),
            ei=ei, ej=ej, wt=r[ei, ej].astype(float),
            idle=(n - 1 - deg).astype(float),
            a_i=np.zeros((n_edges, p)), a_j=np.zeros((n_edges, p)),
            s_i=np.zeros((n_edges, p)), s_j=np.zeros((n_edges, p)),
        )

    def copy(self) -> "AdmmState":
        return AdmmState(**{k: v.copy() for k, v in self.__dict__.items()})

    def pair(self, i: int, j: int):
        """Return ``(a_ij, a_ji, s_ij, s_ji)`` for samples ``i != j``."""
        hi, lo = max(i, j), min(i, j)
        hit = np.nonzero((self.ei == hi) & (self.ej == lo))[0]
        if hit.size:
            e = hit[0]
            a_hi, a_lo, s_hi, s_lo = self.a_i[e], self.a_j[e], self.s_i[e], self.s_j[e]
        else:
            # zero-weight pair: copy is the owner's current row, dual is zero
            zero = np.zeros(self.w.shape[1])
            a_hi, a_lo, s_hi, s_lo = self.w[hi].copy(), self.w[lo].copy(), zero, zero
        if i == hi:
            return a_hi, a_lo, s_hi, s_lo
        return a_lo, a_hi, s_lo, s_hi

    def pair_sum(self, i: int) -> np.ndarray:
        """``sum_{j != i} (a_ij - s_ij)`` for the next w-update of row ``i``."""
        acc = self.idle[i] * self.w[i]
        fwd = self.ei == i
        bwd = self.ej == i
        acc = acc + (self.a_i[fwd] - self.s_i[fwd]).sum(0) + (self.a_j[bwd] - self.s_j[bwd]).sum(0)
        return acc


@dataclass
class FitResult:
    b: np.ndarray
    w: np.ndarray
    iterations: int
    converged: bool
    trace: list
    config: SolverConfig
    cluster_labels: Optional[np.ndarray] = None
    state: Optional[AdmmState] = field(default=None, repr=False)

    @property
    def coef(self) -> np.ndarray:
        return self.b

    def to_json(self) -> dict:
        return {
            "w": self.w.tolist(),
            "b": self.b.tolist(),
            "iterations": self.iterations,
            "converged": self.converged,
            "trace": self.trace,
            "clusters": None if self.cluster_labels is None else [int(c) for c in self.cluster_labels],
            "mode": "proposed" if self.config.zero_sum else "snl",
            "shared": False,
            "config": {k: v for k, v in self.config.__dict__.items()},
        }


# ---------------------------------------------------------------- single updates


def soft_threshold(x, lam):
    """``sign(x) * max(|x| - lam, 0)``, elementwise."""
    if np.any(np.asarray(lam) < 0):
        raise ValueError("threshold must be nonnegative")
    out = np.sign(x) * np.maximum(np.abs(x) - lam, 0.0)
    return out + 0.0 if np.ndim(out) else float(out) + 0.0


def fusion_theta(vi, vj, lambda1, r_ij, rho) -> float:
    """Mixing weight of the pairwise prox; lies in [0.5, 1]."""
    if rho <= 0:
        raise ValueError("rho must be positive")
    pen = lambda1 * r_ij
    if pen == 0:
        return 1.0
    nrm = float(np.linalg.norm(np.asarray(vi) - np.asarray(vj)))
    if nrm < kernels.THETA_EPS:
        return 0.5
    return max(1.0 - pen / (rho * nrm), 0.5)


def update_a_pair(vi, vj, lambda1, r_ij, rho):
    """Prox of ``lambda1 r_ij ||a_ij - a_ji||`` at ``(w_i + s_ij, w_j + s_ji)``."""
    vi = np.asarray(vi, dtype=float)
    vj = np.asarray(vj, dtype=float)
    theta = fusion_theta(vi, vj, lambda1, r_ij, rho)
    return theta * vi + (1 - theta) * vj, (1 - theta) * vi + theta * vj


def update_b(w, t, lambda2, phi):
    if phi <= 0:
        raise ValueError("phi must be positive")
    return soft_threshold(np.asarray(w) + np.asarray(t) / phi, lambda2 / phi)


def update_duals(state: AdmmState, config: SolverConfig) -> AdmmState:
    """Dual ascent on ``s``, ``t`` and (with the constraint) ``u``, in place."""
    state.s_i += config.rho * (state.w[state.ei] - state.a_i)
    state.s_j += config.rho * (state.w[state.ej] - state.a_j)
    state.t += config.phi * (state.w - state.b)
    if config.zero_sum:
        state.u += config.psi * state.w.sum(axis=1)
    return state


def system_matrix(z_i, n: int, config: SolverConfig) -> np.ndarray:
    p = z_i.size
    m = 2.0 * np.outer(z_i, z_i) + (config.rho * (n - 1) + config.phi) * np.eye(p)
    if config.zero_sum:
        m += config.psi * np.ones((p, p))
    return m


def solve_w_subproblem(i: int, state: AdmmState, z, y, config: SolverConfig) -> np.ndarray:
    """Exact minimizer of the augmented Lagrangian over row ``i`` (direct solve)."""
    n = state.w.shape[0]
    z_i = np.asarray(z[i], dtype=float)
    rhs = 2.0 * y[i] * z_i + config.rho * state.pair_sum(i) - state.t[i] + config.phi * state.b[i]
    if config.zero_sum:
        rhs = rhs - state.u[i]
    if not np.all(np.isfinite(rhs)):
        raise ValueError("non-finite inputs to w-update")
    return cho_solve(cho_factor(system_matrix(z_i, n, config)), rhs)


# ---------------------------------------------------------------- objective / fit


def objective(w, z, y, r, lambda1, lambda2) -> float:
    """Penalized loss, each unordered pair counted once."""
    w = np.atleast_2d(np.asarray(w, dtype=float))
    z = np.atleast_2d(np.asarray(z, dtype=float))
    y = np.asarray(y, dtype=float).reshape(-1)
    r = np.asarray(r, dtype=float)
    n = w.shape[0]
    if z.shape != w.shape or y.size != n or r.shape != (n, n):
        raise ValueError("shape mismatch between w, z, y and r")
    ei, ej = np.nonzero(np.tril(r, k=-1))
    return kernels.objective_numpy(z, y, w, ei, ej, r[ei, ej], lambda1, lambda2)


def fit_arrays(z, y, r, config: SolverConfig, init: Optional[AdmmState] = None) -> FitResult:
    z = np.ascontiguousarray(np.atleast_2d(z), dtype=float)
    y = np.ascontiguousarray(y, dtype=float).reshape(-1)
    n, p = z.shape
    r = check_graph(r)
    if r.shape != (n, n) or y.size != n:
        raise ValueError("graph, features and responses disagree on n")
    if init is None:
        state = AdmmState.zeros(r, p, config.keep_zero_pairs)
    else:
        state = init.copy()
        if state.w.shape != (n, p):
            raise ValueError("warm start has the wrong shape")
    diag = config.rho * (n - 1) + config.phi
    gmat = kernels.rank2_factors(z, diag, config.psi if config.zero_sum else 0.0)
    acc = kernels.pair_accumulate(n, state.ei, state.ej, state.a_i, state.a_j,
                                  state.s_i, state.s_j)

    trace = []
    converged = False
    it = 0
    for it in range(1, config.max_iters + 1):
        res = kernels.admm_sweep(
            z, y, gmat, diag, state.ei, state.ej, state.wt, state.idle,
            state.w, state.a_i, state.a_j, state.s_i, state.s_j,
            state.b, state.t, state.u, acc,
            config.lambda1, config.lambda2, config.rho, config.phi, config.psi,
            config.zero_sum,
        )
        res_pair, res_b, res_sum, res_dw = res
        primal = max(res_pair, res_b, res_sum)
        entry = {"iter": it, "primal": primal, "dual": res_dw, "row_sum": res_sum}
        if config.trace_objective:
            entry["objective"] = kernels.network_objective(
                z, y, state.w, state.ei, state.ej, state.wt, config.lambda1, config.lambda2)
        trace.append(entry)
        # kernel max-reductions skip NaN, so check the iterate itself
        if not (np.isfinite(primal) and np.isfinite(res_dw) and np.isfinite(state.w).all()):
            raise SolverDivergence(it, entry)
        if (primal <= config.tol_primal and res_dw <= config.tol_dual
                and res_sum <= config.tol_sum):
            converged = True
            break
    return FitResult(b=state.b.copy(), w=state.w.copy(), iterations=it, converged=converged,
                     trace=trace, config=config, state=state)


def fit(data: CompositionalDataset, r, config: SolverConfig,
        init: Optional[AdmmState] = None) -> FitResult:
    """Fit the per-sample model on ``data`` with similarity graph ``r``."""
    return fit_arrays(log_transform(data), data.y, r, config, init)


# ---------------------------------------------------------------- clusters


def _relabel(labels) -> np.ndarray:
    """Relabel to 0, 1, ... in order of first appearance."""
    mapping = {}
    return np.array([mapping.setdefault(c, len(mapping)) for c in labels], dtype=int)


def extract_clusters(w, tau: Optional[float] = None, n_clusters: Optional[int] = None) -> np.ndarray:
    """Group rows of ``w``.

    With ``tau``: connected components of ``{(i, j): max|w_i - w_j| < tau}``.
    With ``n_clusters``: complete-linkage agglomerative clustering cut at that
    many clusters.
    """
    w = np.atleast_2d(np.asarray(w, dtype=float))
    n = w.shape[0]
    if (tau is None) == (n_clusters is None):
        raise ValueError("give exactly one of tau or n_clusters")
    if n == 1:
        return np.zeros(1, dtype=int)
    if tau is not None:
        if tau <= 0:
            raise ValueError("tau must be positive")
        dist = np.abs(w[:, None, :] - w[None, :, :]).max(axis=2)
        i, j = np.nonzero(dist < tau)
        adj = coo_matrix((np.ones(i.size), (i, j)), shape=(n, n))
        _, labels = connected_components(adj, directed=False)
        return _relabel(labels)
    tree = linkage(w, method="complete", metric="euclidean")
    return _relabel(fcluster(tree, t=n_clusters, criterion="maxclust"))


def with_lambdas(config: SolverConfig, lambda1: float, lambda2: float) -> SolverConfig:
    return replace(config, lambda1=lambda1, lambda2=lambda2)
