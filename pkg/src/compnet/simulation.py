"""Synthetic three-cluster benchmark with a corrupted block graph."""

from __future__ import annotations

import logging
from dataclasses import dataclass, asdict
from typing import Optional, Sequence

import numpy as np

from .composition import CompositionalDataset, log_transform
from .graph import cluster_block_graph, corrupt_graph

log = logging.getLogger(__name__)

TRUE_COEFS = np.array([
    [1.0, -0.8, 0.6, 0.0, 0.0, -1.5, -0.5, 1.2],
    [0.0, -0.5, 1.0, 1.2, 0.1, -1.0, 0.0, -0.8],
    [0.0, 0.0, 0.0, 0.8, 1.0, 0.0, -0.8, -1.0],
])

# stream ids for the per-replicate generators
_DATA, _GRAPH, _SPLIT, _FOLDS = 0, 1, 2, 3


def replicate_rng(seed: int, replicate: int, stream: int) -> np.random.Generator:
    """Counter-based (Philox) generator keyed by (seed, replicate, stream)."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, replicate, stream])))


@dataclass(frozen=True)
class SimSpec:
    p: int = 30
    n_per_cluster: int = 40
    n_train: int = 100
    n_valid: int = 20
    p_keep: float = 0.99
    noise_sd: float = 0.1
    replicates: int = 10
    seed: int = 0

    def __post_init__(self):
        if self.p < 8:
            raise ValueError("p must be at least 8 (true coefficients use 8 slots)")
        if 3 * self.n_per_cluster != self.n_train + self.n_valid:
            raise ValueError("3 * n_per_cluster must equal n_train + n_valid")
        if not 0 <= self.p_keep <= 1:
            raise ValueError("p_keep must lie in [0, 1]")
        if self.noise_sd < 0 or self.replicates < 1:
            raise ValueError("noise_sd must be nonnegative and replicates positive")


@dataclass
class SimDataset:
    dataset: CompositionalDataset
    true_w: np.ndarray
    labels: np.ndarray
    true_graph: np.ndarray
    observed_graph: np.ndarray

    @property
    def sample_w(self) -> np.ndarray:
        """True coefficient row of every sample."""
        return self.true_w[self.labels]


def true_coefficients(p: int) -> np.ndarray:
    out = np.zeros((3, p))
    out[:, :8] = TRUE_COEFS
    return out


def latent_covariance(p: int, base: float = 0.2) -> np.ndarray:
    idx = np.arange(p)
    return base ** np.abs(idx[:, None] - idx[None, :])


def latent_mean(p: int) -> np.ndarray:
    omega = np.zeros(p)
    omega[:5] = np.log(0.5 * p)
    return omega


def draw_latent(rng: np.random.Generator, n: int, p: int) -> np.ndarray:
    chol = np.linalg.cholesky(latent_covariance(p))
    return latent_mean(p) + rng.standard_normal((n, p)) @ chol.T


def generate_dataset(spec: SimSpec, replicate: int = 0) -> SimDataset:
    n = 3 * spec.n_per_cluster
    rng = replicate_rng(spec.seed, replicate, _DATA)
    c = draw_latent(rng, n, spec.p)
    e = np.exp(c - c.max(axis=1, keepdims=True))
    x = e / e.sum(axis=1, keepdims=True)
    labels = np.repeat(np.arange(3), spec.n_per_cluster)
    true_w = true_coefficients(spec.p)
    z = log_transform(x)
    y = np.einsum("ij,ij->i", z, true_w[labels])
    if spec.noise_sd > 0:
        y = y + spec.noise_sd * rng.standard_normal(n)
    true_graph = cluster_block_graph(labels)
    observed = corrupt_graph(true_graph, spec.p_keep, replicate_rng(spec.seed, replicate, _GRAPH))
    ds = CompositionalDataset(x, y, feature_names=[f"x{j + 1}" for j in range(spec.p)])
    return SimDataset(ds, true_w, labels, true_graph, observed)


def stratified_split(labels, n_valid: int, seed: int, replicate: int = 0):
    """Pick ``n_valid`` validation samples spread as evenly as possible over clusters.

    The clusters that receive the extra samples rotate with ``seed + replicate``.
    Returns sorted ``(train_idx, valid_idx)``.
    """
    labels = np.asarray(labels)
    groups = np.unique(labels)
    g = groups.size
    base, extra = divmod(n_valid, g)
    shift = (seed + replicate) % g
    rng = replicate_rng(seed, replicate, _SPLIT)
    valid = []
    for k, lab in enumerate(groups):
        take = base + (1 if (k - shift) % g < extra else 0)
        members = np.nonzero(labels == lab)[0]
        valid.extend(rng.choice(members, size=take, replace=False).tolist())
    valid = np.sort(np.array(valid, dtype=int))
    train = np.setdiff1d(np.arange(labels.size), valid)
    return train, valid


def _fit_and_score(sim: SimDataset, train, valid, method, grid, folds, seed, replicate,
                   solver_defaults, weber_config, n_jobs=1):
    from .selection import fit_best, kfold_cv, predict_validation

    data = sim.dataset
    r = sim.observed_graph
    report = kfold_cv(data.subset(train), r[np.ix_(train, train)], grid, folds, method,
                      seed=seed * 1000 + replicate, base_config=solver_defaults,
                      weber_config=weber_config, n_jobs=n_jobs)
    model = fit_best(data.subset(train), r[np.ix_(train, train)], report, method,
                     base_config=solver_defaults)
    z_valid = log_transform(data.x[valid])
    y_hat = predict_validation(model, method, z_valid, r[np.ix_(valid, train)], weber_config)
    err = float(np.mean((data.y[valid] - y_hat) ** 2))
    return err, report, model


def run_benchmark(spec: SimSpec, grid=None, methods: Sequence[str] = ("proposed", "snl", "cl"),
                  cv_folds: int = 5, solver_defaults=None, weber_config=None,
                  replicates: Optional[Sequence[int]] = None, keep_models: bool = False,
                  n_jobs: int = 1):
    """Run the simulation study; returns ``(table_rows, per_replicate_records)``.

    Solver failures are recorded per replicate and skipped in the summary.
    """
    from .selection import CvGrid

    grid = grid or CvGrid.default()
    reps = range(spec.replicates) if replicates is None else replicates
    records = []
    for rep in reps:
        sim = generate_dataset(spec, rep)
        train, valid = stratified_split(sim.labels, spec.n_valid, spec.seed, rep)
        for method in methods:
            rec = {"replicate": rep, "method": method}
            try:
                err, report, model = _fit_and_score(sim, train, valid, method, grid, cv_folds,
                                                    spec.seed, rep, solver_defaults, weber_config,
                                                    n_jobs)
                rec.update(mse=err, best=report.best)
                if keep_models:
                    rec.update(model=model, labels=sim.labels[train], report=report)
            except Exception as exc:  # recorded, not fatal
                log.warning("replicate %d, %s failed: %s", rep, method, exc)
                rec.update(mse=float("nan"), error=str(exc))
            log.info("replicate %d %s mse=%.4g", rep, method, rec["mse"])
            records.append(rec)
    return summarize(records, spec), records


def summarize(records, spec: SimSpec):
    rows = []
    methods = list(dict.fromkeys(r["method"] for r in records))
    for method in methods:
        errs = np.array([r["mse"] for r in records if r["method"] == method], dtype=float)
        ok = errs[np.isfinite(errs)]
        rows.append({
            "method": method,
            "p": spec.p,
            "p_keep": spec.p_keep,
            "mse_mean": float(ok.mean()) if ok.size else float("nan"),
            "mse_sd": float(ok.std(ddof=1)) if ok.size > 1 else float("nan"),
            "replicates": int(ok.size),
        })
    return rows


def spec_dict(spec: SimSpec) -> dict:
    return asdict(spec)
