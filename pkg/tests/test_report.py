import numpy as np
import pytest

from compnet.report import cmd_report


def test_threshold_extremes(rng):
    w = rng.normal(size=(5, 4))
    assert cmd_report(w, threshold=np.inf).selected == []
    assert cmd_report(w, threshold=0).selected == ["x1", "x2", "x3", "x4"]


def test_thresholding_is_display_only(rng):
    w = rng.normal(size=(4, 3)) * 0.1
    before = w.copy()
    bundle = cmd_report(w, threshold=0.05, feature_names=["a", "b", "c"])
    np.testing.assert_array_equal(w, before)
    assert np.all((bundle.thresholded == 0) | (np.abs(w) >= 0.05))
    np.testing.assert_array_equal(bundle.coefficients, before)


def test_block_ordering(rng):
    centers = rng.normal(size=(3, 5)) * 4
    labels_true = rng.permutation(np.repeat([0, 1, 2], 4))
    w = centers[labels_true] + rng.normal(scale=0.01, size=(12, 5))
    bundle = cmd_report(w, n_clusters=3)
    ordered = labels_true[bundle.order]
    # each true block is contiguous after ordering
    changes = np.count_nonzero(np.diff(ordered))
    assert changes == 2
    out = bundle.to_json()
    assert len(out["order"]) == 12 and len(out["cluster_labels"]) == 12


def test_names_and_given_labels(rng):
    w = rng.normal(size=(3, 2))
    b = cmd_report(w, cluster_labels=[1, 0, 1])
    assert b.order.tolist() == [1, 0, 2]
    with pytest.raises(ValueError):
        cmd_report(w, feature_names=["only-one"])
