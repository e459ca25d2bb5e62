import numpy as np
import pytest

from distillkit import _kernels_py
from distillkit._backend import backend_name, kernels
from distillkit.core import DistillkitError
from distillkit.trees import (
    RegressionTree,
    fit_tree,
    sorted_column_index,
    tree_predict,
    tree_split_gains,
)

from reference import (
    brute_force_tree,
    dyadic_targets,
    tree_structures_equal,
)

# 6-row, 2-feature instance; feature 1 mirrors feature 0 so the root has an
# exactly tied cross-feature candidate, and both children have within-feature
# threshold ties.  Expected structure frozen from the enumeration oracle.
X6 = np.array([[0.0, 5.0], [1.0, 4.0], [2.0, 3.0],
               [3.0, 2.0], [4.0, 1.0], [5.0, 0.0]])
Y6 = np.array([0.0, 0.5, 1.0, 4.0, 4.5, 5.0])
TREE6_EXPECTED = {
    "kind": "split", "feature_index": 0, "threshold": 2.5,
    "left": {
        "kind": "split", "feature_index": 0, "threshold": 0.5,
        "left": {"kind": "leaf", "value": 0.0, "n_samples": 1,
                 "squared_error": 0.0},
        "right": {"kind": "leaf", "value": 0.75, "n_samples": 2,
                  "squared_error": 0.125},
    },
    "right": {
        "kind": "split", "feature_index": 0, "threshold": 3.5,
        "left": {"kind": "leaf", "value": 4.0, "n_samples": 1,
                 "squared_error": 0.0},
        "right": {"kind": "leaf", "value": 4.75, "n_samples": 2,
                  "squared_error": 0.125},
    },
}


class TestFitBasics:
    def test_two_point_stump(self):
        t = fit_tree(np.array([[0.0], [1.0]]), np.array([0.0, 1.0]),
                     max_depth=1, min_samples_leaf=1)
        assert t.to_json() == {
            "kind": "split", "feature_index": 0, "threshold": 0.5,
            "left": {"kind": "leaf", "value": 0.0, "n_samples": 1,
                     "squared_error": 0.0},
            "right": {"kind": "leaf", "value": 1.0, "n_samples": 1,
                      "squared_error": 0.0},
        }

    def test_constant_targets_single_leaf(self):
        X = np.random.default_rng(0).normal(size=(30, 4))
        t = fit_tree(X, np.full(30, 2.5), max_depth=5, min_samples_leaf=1)
        assert t.n_nodes == 1
        assert t.predict_row(X[3]) == 2.5

    def test_too_few_rows_gives_mean_leaf(self):
        t = fit_tree(np.array([[0.0], [1.0], [2.0]]),
                     np.array([1.0, 2.0, 6.0]),
                     max_depth=3, min_samples_leaf=2)
        assert t.n_nodes == 1
        assert t.predict_row([5.0]) == 3.0

    def test_six_row_instance_matches_frozen_oracle_output(self):
        t = fit_tree(X6, Y6, max_depth=2, min_samples_leaf=1)
        assert t.to_json() == TREE6_EXPECTED
        # and the oracle agrees with its own frozen output
        assert brute_force_tree(X6, Y6, 2, 1) == TREE6_EXPECTED

    def test_non_finite_rejected(self):
        with pytest.raises(DistillkitError):
            fit_tree(np.array([[np.nan], [1.0]]), np.array([0.0, 1.0]))
        with pytest.raises(DistillkitError):
            fit_tree(np.array([[0.0], [1.0]]), np.array([np.inf, 1.0]))


class TestPredict:
    def test_single_leaf_everywhere(self):
        t = fit_tree(np.zeros((4, 2)), np.array([1.0, 1.0, 3.0, 3.0]),
                     max_depth=2, min_samples_leaf=1)
        assert t.n_nodes == 1  # constant feature, no valid split
        for x in ([0.0, 0.0], [9.0, -9.0]):
            assert tree_predict(t, x) == 2.0

    def test_boundary_routes_left(self):
        t = fit_tree(np.array([[0.0], [1.0]]), np.array([0.0, 1.0]),
                     max_depth=1, min_samples_leaf=1)
        assert tree_predict(t, [0.0]) == 0.0
        assert tree_predict(t, [0.5]) == 0.0  # value == threshold goes left
        assert tree_predict(t, [0.500001]) == 1.0

    def test_dimension_mismatch(self):
        t = fit_tree(X6, Y6, max_depth=1, min_samples_leaf=1)
        with pytest.raises(DistillkitError):
            t.predict_row([1.0])

    def test_batch_matches_rows(self):
        rng = np.random.default_rng(5)
        X = rng.normal(size=(100, 3))
        y = rng.normal(size=100)
        t = fit_tree(X, y, max_depth=4, min_samples_leaf=2)
        Q = rng.normal(size=(40, 3))
        batch = t.predict(Q)
        assert np.array_equal(batch, [t.predict_row(q) for q in Q])

    def test_piecewise_constant_between_thresholds(self):
        rng = np.random.default_rng(6)
        X = rng.normal(size=(60, 2))
        t = fit_tree(X, rng.normal(size=60), max_depth=3, min_samples_leaf=3)
        thresholds = sorted(t.threshold[t.feature >= 0])
        x = X[7].copy()
        base = t.predict_row(x)
        # nudges too small to cross any threshold leave the output unchanged
        for j in range(2):
            x2 = x.copy()
            gaps = [abs(x[j] - th) for th in thresholds]
            eps = min(g for g in gaps if g > 0) / 2 if gaps else 0.1
            x2[j] += eps * 0.5
            assert t.predict_row(x2) == base


class TestSplitGains:
    def test_single_leaf_all_zero(self):
        t = fit_tree(np.zeros((4, 3)), np.ones(4), 2, 1)
        assert np.array_equal(tree_split_gains(t), np.zeros(3))

    def test_one_split_is_one_hot(self):
        X = np.zeros((4, 3))
        X[:, 2] = [0.0, 0.0, 1.0, 1.0]
        t = fit_tree(X, np.array([0.0, 0.0, 1.0, 1.0]), 1, 1)
        g = tree_split_gains(t)
        assert g[2] > 0 and g[0] == 0 and g[1] == 0

    def test_six_row_instance_hand_computed(self):
        # root SSE reduction 24.0, each child split 0.375, all on feature 0,
        # each weighted by 1/6 (root sample count)
        t = fit_tree(X6, Y6, max_depth=2, min_samples_leaf=1)
        g = tree_split_gains(t)
        assert g[0] == pytest.approx((24.0 + 0.375 + 0.375) / 6, abs=1e-12)
        assert g[1] == 0.0


class TestDepthMonotonicity:
    def test_training_mse_non_increasing_in_depth(self):
        rng = np.random.default_rng(9)
        X = rng.normal(size=(200, 3))
        y = np.sin(X[:, 0]) + rng.normal(scale=0.1, size=200)
        prev = np.inf
        for depth in range(1, 6):
            t = fit_tree(X, y, max_depth=depth, min_samples_leaf=1)
            mse = float(np.mean((t.predict(X) - y) ** 2))
            assert mse <= prev + 1e-15
            prev = mse


class TestOracleEquivalence:
    def test_random_instances_match_brute_force(self):
        rng = np.random.default_rng(1234)
        for _ in range(100):
            n = int(rng.integers(2, 9))
            d = int(rng.integers(1, 3))
            depth = int(rng.integers(1, 3))
            leaf = int(rng.integers(1, 3))
            X = rng.normal(size=(n, d))
            y = dyadic_targets(rng, n)
            t = fit_tree(X, y, max_depth=depth, min_samples_leaf=leaf)
            expected = brute_force_tree(X, y, depth, leaf)
            assert tree_structures_equal(t.to_json(), expected), \
                (X, y, depth, leaf)

    def test_duplicate_feature_values_match_brute_force(self):
        rng = np.random.default_rng(77)
        for _ in range(50):
            n = int(rng.integers(4, 9))
            X = rng.integers(0, 3, size=(n, 2)).astype(float)
            y = dyadic_targets(rng, n)
            t = fit_tree(X, y, max_depth=2, min_samples_leaf=1)
            assert tree_structures_equal(
                t.to_json(), brute_force_tree(X, y, 2, 1))


class TestSerialization:
    def test_json_roundtrip_predictions(self):
        rng = np.random.default_rng(3)
        X = rng.normal(size=(80, 4))
        y = rng.normal(size=80)
        t = fit_tree(X, y, max_depth=4, min_samples_leaf=2)
        t2 = RegressionTree.from_json(t.to_json(), n_features=4)
        Q = rng.normal(size=(30, 4))
        assert np.array_equal(t.predict(Q), t2.predict(Q))

    def test_dot_export_mentions_features(self):
        t = fit_tree(X6, Y6, max_depth=2, min_samples_leaf=1)
        dot = t.to_dot(feature_names=["alpha", "beta"])
        assert dot.startswith("digraph")
        assert "alpha" in dot and "2.5" in dot


class TestBackendParity:
    @pytest.mark.skipif(backend_name() != "cython",
                        reason="compiled backend unavailable")
    def test_fit_bit_identical_across_backends(self):
        rng = np.random.default_rng(42)
        for _ in range(10):
            X = rng.normal(size=(150, 4))
            y = rng.normal(size=150)
            si = sorted_column_index(X)
            Xt = np.ascontiguousarray(X.T)
            a = kernels.fit_tree(Xt, y, si, 4, 3)
            b = _kernels_py.fit_tree(Xt, y, si, 4, 3)
            for u, v in zip(a, b):
                assert np.array_equal(u, v)

    @pytest.mark.skipif(backend_name() != "cython",
                        reason="compiled backend unavailable")
    def test_predict_bit_identical_across_backends(self):
        rng = np.random.default_rng(43)
        X = rng.normal(size=(200, 3))
        y = rng.normal(size=200)
        si = sorted_column_index(X)
        nodes = kernels.fit_tree(np.ascontiguousarray(X.T), y, si, 5, 2)
        Q = np.ascontiguousarray(rng.normal(size=(70, 3)))
        assert np.array_equal(kernels.predict_tree(*nodes[:5], Q),
                              _kernels_py.predict_tree(*nodes[:5], Q))
