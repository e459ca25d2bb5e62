"""CART-style axis-aligned regression trees.

The weak learners for the boosting modules.  Splits greedily maximize the
reduction in summed squared error, exhaustively over all features and over
midpoints between consecutive distinct sorted values; ties keep the lowest
feature index, then the lowest threshold.  Routing convention: a value equal
to the threshold goes left.
"""

from __future__ import annotations

import json

import numpy as np

from distillkit._backend import kernels
from distillkit.core import DistillkitError


class RegressionTree:
    """Fitted regression tree stored as parallel node arrays.

    Node 0 is the root; `feature[i] == -1` marks a leaf.  `value` holds the
    mean training target of every node, `sse` its summed squared error and
    `gain` the SSE reduction achieved by its split (0 for leaves).
    """

    def __init__(self, feature, threshold, left, right, value, sse,
                 n_samples, gain, n_features: int):
        self.feature = feature
        self.threshold = threshold
        self.left = left
        self.right = right
        self.value = value
        self.sse = sse
        self.n_samples = n_samples
        self.gain = gain
        self.n_features = n_features

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    def predict(self, X) -> np.ndarray:
        X = _as_matrix(X, self.n_features)
        return kernels.predict_tree(self.feature, self.threshold, self.left,
                                    self.right, self.value, X)

    def predict_row(self, x) -> float:
        x = np.asarray(x, dtype=np.float64)
        if x.shape != (self.n_features,):
            raise DistillkitError(
                f"expected {self.n_features} features, got shape {x.shape}")
        node = 0
        while self.feature[node] >= 0:
            if x[self.feature[node]] <= self.threshold[node]:
                node = self.left[node]
            else:
                node = self.right[node]
        return float(self.value[node])

    def depth(self) -> int:
        def walk(i):
            if self.feature[i] < 0:
                return 0
            return 1 + max(walk(self.left[i]), walk(self.right[i]))
        return walk(0)

    def to_json(self) -> dict:
        def node(i):
            if self.feature[i] < 0:
                return {"kind": "leaf", "value": float(self.value[i]),
                        "n_samples": int(self.n_samples[i]),
                        "squared_error": float(self.sse[i])}
            return {"kind": "split", "feature_index": int(self.feature[i]),
                    "threshold": float(self.threshold[i]),
                    "left": node(self.left[i]), "right": node(self.right[i])}
        return node(0)

    @classmethod
    def from_json(cls, obj: dict, n_features: int) -> "RegressionTree":
        feature, threshold, left, right = [], [], [], []
        value, sse, n_samples, gain = [], [], [], []

        def add(nd):
            i = len(feature)
            if nd["kind"] == "leaf":
                feature.append(-1)
                threshold.append(0.0)
                left.append(-1)
                right.append(-1)
                value.append(nd["value"])
                sse.append(nd["squared_error"])
                n_samples.append(nd["n_samples"])
                gain.append(0.0)
                return i
            feature.append(nd["feature_index"])
            threshold.append(nd["threshold"])
            left.append(-1)
            right.append(-1)
            value.append(0.0)
            sse.append(0.0)
            n_samples.append(0)
            gain.append(0.0)
            li = add(nd["left"])
            ri = add(nd["right"])
            left[i] = li
            right[i] = ri
            # reconstruct aggregates from the children
            n_samples[i] = n_samples[li] + n_samples[ri]
            value[i] = (value[li] * n_samples[li]
                        + value[ri] * n_samples[ri]) / n_samples[i]
            return i

        add(obj)
        return cls(np.asarray(feature, np.int32), np.asarray(threshold),
                   np.asarray(left, np.int32), np.asarray(right, np.int32),
                   np.asarray(value), np.asarray(sse),
                   np.asarray(n_samples, np.int32), np.asarray(gain),
                   n_features)

    def to_dot(self, feature_names=None) -> str:
        """Graphviz DOT rendering for visual inspection."""
        lines = ["digraph tree {", "  node [shape=box];"]
        for i in range(self.n_nodes):
            if self.feature[i] < 0:
                lines.append(
                    f'  n{i} [label="value = {self.value[i]:.4g}\\n'
                    f'n = {self.n_samples[i]}"];')
            else:
                name = (feature_names[self.feature[i]] if feature_names
                        else f"x[{self.feature[i]}]")
                lines.append(
                    f'  n{i} [label="{name} <= {self.threshold[i]:.4g}\\n'
                    f'n = {self.n_samples[i]}"];')
                lines.append(f'  n{i} -> n{self.left[i]} [label="yes"];')
                lines.append(f'  n{i} -> n{self.right[i]} [label="no"];')
        lines.append("}")
        return "\n".join(lines)


def _as_matrix(X, d=None) -> np.ndarray:
    X = np.ascontiguousarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise DistillkitError(f"X must be 2-D, got shape {X.shape}")
    if d is not None and X.shape[1] != d:
        raise DistillkitError(f"expected {d} features, got {X.shape[1]}")
    return X


def fit_tree(X, y, max_depth: int = 3, min_samples_leaf: int = 5,
             sort_idx=None) -> RegressionTree:
    """Fit a regression tree.

    With fewer than 2 * min_samples_leaf rows the result is a single-leaf
    mean predictor.  `sort_idx` (per-column stable argsort of X) may be
    passed to amortize sorting across the trees of one boosting run.
    """
    X = _as_matrix(X)
    y = np.ascontiguousarray(y, dtype=np.float64)
    n, d = X.shape
    if y.shape != (n,):
        raise DistillkitError(f"y has shape {y.shape}, expected ({n},)")
    if n < 1 or d < 1:
        raise DistillkitError("need at least one row and one feature")
    if max_depth < 1 or min_samples_leaf < 1:
        raise DistillkitError("max_depth and min_samples_leaf must be >= 1")
    if not (np.isfinite(X).all() and np.isfinite(y).all()):
        raise DistillkitError("non-finite training data")
    if sort_idx is None:
        sort_idx = sorted_column_index(X)
    X_t = np.ascontiguousarray(X.T)
    out = kernels.fit_tree(X_t, y, sort_idx, max_depth, min_samples_leaf)
    return RegressionTree(*out, n_features=d)


def sorted_column_index(X) -> np.ndarray:
    """Stable per-column argsort, transposed to (d, n).

    Computed once and shared across the trees of a boosting run."""
    return np.ascontiguousarray(
        np.argsort(X, axis=0, kind="stable").T.astype(np.int32))


def tree_predict(tree: RegressionTree, x) -> float:
    return tree.predict_row(x)


def tree_split_gains(tree: RegressionTree) -> np.ndarray:
    """Per-feature sum of variance-reduction gains.

    Each split contributes its variance reduction weighted by the fraction
    of training rows reaching the node, which equals its SSE reduction
    divided by the root sample count.
    """
    gains = np.zeros(tree.n_features)
    n_root = tree.n_samples[0]
    for i in range(tree.n_nodes):
        if tree.feature[i] >= 0:
            gains[tree.feature[i]] += tree.gain[i] / n_root
    return gains
