"""Display-oriented summary of a fitted coefficient matrix."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .solver import extract_clusters


@dataclass
class ReportBundle:
    coefficients: np.ndarray
    thresholded: np.ndarray
    selected: list
    cluster_labels: Optional[np.ndarray]
    order: np.ndarray
    threshold: float

    def to_json(self) -> dict:
        return {
            "threshold": self.threshold,
            "selected_variables": self.selected,
            "cluster_labels": None if self.cluster_labels is None
            else [int(c) for c in self.cluster_labels],
            "order": [int(i) for i in self.order],
            "thresholded": self.thresholded[self.order].tolist(),
        }


def cmd_report(coefficients, threshold: float = 0.05, n_clusters: Optional[int] = None,
               feature_names: Optional[Sequence[str]] = None,
               cluster_labels=None) -> ReportBundle:
    """Zero out ``|w_ij| < threshold`` for display and list the surviving variables.

    Samples are ordered by cluster label (complete-linkage with ``n_clusters``
    if given, else ``cluster_labels``), stable within clusters. The fit itself
    is never modified.
    """
    w = np.atleast_2d(np.asarray(coefficients, dtype=float))
    n, p = w.shape
    names = list(feature_names) if feature_names is not None else [f"x{j + 1}" for j in range(p)]
    if len(names) != p:
        raise ValueError("one feature name per column required")
    keep = np.abs(w) >= threshold
    shown = np.where(keep, w, 0.0)
    selected = [names[j] for j in range(p) if keep[:, j].any()]
    labels = None
    if n_clusters is not None:
        labels = extract_clusters(w, n_clusters=min(n_clusters, n))
    elif cluster_labels is not None:
        labels = np.asarray(cluster_labels, dtype=int)
    order = np.arange(n) if labels is None else np.argsort(labels, kind="stable")
    return ReportBundle(w, shown, selected, labels, order, threshold)
