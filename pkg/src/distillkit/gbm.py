"""Gradient boosting machine: staged sum of shrunken regression trees.

Squared loss only.  Each stage fits a tree to the current residuals and is
folded in with a uniform shrinkage factor; with squared loss the per-leaf
line-search optimum is the leaf mean, so leaf values are used as fitted.
Also hosts the model-agnostic interpretability helpers (permutation
importance, partial dependence) used by the reporting layer.
"""

from __future__ import annotations

import json
import warnings

import numpy as np

from distillkit._backend import kernels
from distillkit.core import (
    DegenerateScoreWarning,
    DistillkitError,
    FeatureSchema,
    PerOutputPolicy,
    r2_score,
)
from distillkit.trees import (
    RegressionTree,
    _as_matrix,
    sorted_column_index,
    tree_split_gains,
)

DEFAULT_STAGES = 100
DEFAULT_LEARNING_RATE = 0.1
DEFAULT_MAX_DEPTH = 3
DEFAULT_MIN_SAMPLES_LEAF = 5


class GbmEnsemble:
    """Fitted boosted forest for one scalar output."""

    def __init__(self, f0: float, trees: list[RegressionTree],
                 learning_rate: float, n_features: int):
        self.f0 = f0
        self.trees = trees
        self.learning_rate = learning_rate
        self.n_features = n_features
        self._packed = None

    @property
    def n_stages(self) -> int:
        return len(self.trees)

    def _pack(self):
        if self._packed is None:
            self._packed = pack_forests([self], [self.f0],
                                        self.learning_rate)
        return self._packed

    def predict(self, X) -> np.ndarray:
        X = _as_matrix(X, self.n_features)
        return self._pack().predict(X)[:, 0]

    def predict_row(self, x) -> float:
        x = np.asarray(x, dtype=np.float64)
        if x.shape != (self.n_features,):
            raise DistillkitError(
                f"expected {self.n_features} features, got shape {x.shape}")
        return self._pack().predict(x[None, :])[0, 0]

    def staged_predict_row(self, x) -> np.ndarray:
        """Per-stage contributions (already shrunken); sums to the prediction
        minus f0."""
        return np.array([self.learning_rate * t.predict_row(x)
                         for t in self.trees])

    def to_json(self) -> dict:
        return {"f0": self.f0, "learning_rate": self.learning_rate,
                "n_features": self.n_features,
                "trees": [t.to_json() for t in self.trees]}

    @classmethod
    def from_json(cls, obj: dict) -> "GbmEnsemble":
        trees = [RegressionTree.from_json(t, obj["n_features"])
                 for t in obj["trees"]]
        return cls(obj["f0"], trees, obj["learning_rate"], obj["n_features"])


class _PackedForests:
    """Flat-array view over several ensembles for fast batch prediction."""

    def __init__(self, feature, threshold, left, right, value, tree_offsets,
                 output_offsets, f0, lr):
        self.arrays = (feature, threshold, left, right, value, tree_offsets,
                       output_offsets, np.asarray(f0, dtype=np.float64), lr)

    def predict(self, X) -> np.ndarray:
        (feature, threshold, left, right, value, tree_offsets,
         output_offsets, f0, lr) = self.arrays
        return kernels.predict_forest(feature, threshold, left, right, value,
                                      tree_offsets, output_offsets, f0, lr,
                                      np.ascontiguousarray(X))


def pack_forests(models: list[GbmEnsemble], f0s, lr) -> _PackedForests:
    feats, thrs, lefts, rights, vals = [], [], [], [], []
    tree_offsets = [0]
    output_offsets = [0]
    total = 0
    for m in models:
        for t in m.trees:
            feats.append(t.feature)
            thrs.append(t.threshold)
            lefts.append(t.left)
            rights.append(t.right)
            vals.append(t.value)
            total += t.n_nodes
            tree_offsets.append(total)
        output_offsets.append(len(tree_offsets) - 1)
    cat = lambda parts, dt: (np.concatenate(parts).astype(dt)
                             if parts else np.zeros(0, dtype=dt))
    return _PackedForests(
        cat(feats, np.int32), cat(thrs, np.float64), cat(lefts, np.int32),
        cat(rights, np.int32), cat(vals, np.float64),
        np.asarray(tree_offsets, dtype=np.int32),
        np.asarray(output_offsets, dtype=np.int32), f0s, lr)


def fit_gbm(X, y, n_stages: int = DEFAULT_STAGES,
            learning_rate: float = DEFAULT_LEARNING_RATE,
            max_depth: int = DEFAULT_MAX_DEPTH,
            min_samples_leaf: int = DEFAULT_MIN_SAMPLES_LEAF,
            sort_idx=None) -> GbmEnsemble:
    """Least-squares boosting: f0 = mean(y), then n_stages residual trees."""
    X = _as_matrix(X)
    y = np.ascontiguousarray(y, dtype=np.float64)
    n, d = X.shape
    if y.shape != (n,):
        raise DistillkitError(f"y has shape {y.shape}, expected ({n},)")
    if n < 2:
        raise DistillkitError("need at least two rows")
    if n_stages < 1:
        raise DistillkitError("n_stages must be >= 1")
    if not (0.0 < learning_rate <= 1.0):
        raise DistillkitError("learning_rate must lie in (0, 1]")
    if not (np.isfinite(X).all() and np.isfinite(y).all()):
        raise DistillkitError("non-finite training data")

    if sort_idx is None:
        sort_idx = sorted_column_index(X)
    X_t = np.ascontiguousarray(X.T)
    f0 = float(y.mean())
    residual = y - f0
    trees = []
    for _ in range(n_stages):
        out = kernels.fit_tree(X_t, residual, sort_idx, max_depth,
                               min_samples_leaf)
        tree = RegressionTree(*out, n_features=d)
        residual = residual - learning_rate * tree.predict(X)
        trees.append(tree)
    return GbmEnsemble(f0, trees, learning_rate, d)


def gbm_predict(model: GbmEnsemble, x) -> float:
    return model.predict_row(x)


def gbm_feature_importance(model: GbmEnsemble) -> np.ndarray:
    """Mean split-gain importance across stages, normalized to sum to 1."""
    total = np.zeros(model.n_features)
    for t in model.trees:
        total += tree_split_gains(t)
    total /= model.n_stages
    s = total.sum()
    if s <= 0.0:
        warnings.warn("model has no splits; importances set uniform",
                      DegenerateScoreWarning, stacklevel=2)
        return np.full(model.n_features, 1.0 / model.n_features)
    return total / s


def permutation_importance(model, X, y, n_repeats: int = 5,
                           seed: int = 0) -> np.ndarray:
    """Mean R^2 drop per feature when that column is shuffled.

    `model` is any object with a batch `predict(X)`; the baseline score is
    computed once so an unread feature's drop is exactly zero.
    """
    X = _as_matrix(X)
    y = np.asarray(y, dtype=np.float64)
    if n_repeats < 1:
        raise DistillkitError("n_repeats must be >= 1")
    rng = np.random.default_rng(seed)
    baseline = r2_score(model.predict(X), y)
    drops = np.zeros(X.shape[1])
    for j in range(X.shape[1]):
        acc = 0.0
        for _ in range(n_repeats):
            Xp = X.copy()
            Xp[:, j] = Xp[rng.permutation(X.shape[0]), j]
            acc += baseline - r2_score(model.predict(Xp), y)
        drops[j] = acc / n_repeats
    return drops


def partial_dependence(model, feature_index: int, grid,
                       X_background) -> np.ndarray:
    """Mean prediction while one feature is swept over a grid."""
    Xb = _as_matrix(X_background)
    grid = np.asarray(grid, dtype=np.float64)
    if grid.ndim != 1 or len(grid) < 2:
        raise DistillkitError("grid must be 1-D with at least two points")
    if Xb.shape[0] < 1:
        raise DistillkitError("background set must be non-empty")
    if not 0 <= feature_index < Xb.shape[1]:
        raise DistillkitError(f"feature_index {feature_index} out of range")
    curve = np.empty(len(grid))
    for g, v in enumerate(grid):
        Xs = Xb.copy()
        Xs[:, feature_index] = v
        curve[g] = float(np.mean(model.predict(Xs)))
    return curve


def top_k_importance_report(importances_by_method: dict, schema: FeatureSchema,
                            k: int) -> list[dict]:
    """Ranked top-k feature names per output, per importance method.

    `importances_by_method` maps method name -> (outputs, features) matrix.
    Ties rank the lower feature index first.
    """
    if k < 1:
        raise DistillkitError("k must be >= 1")
    rows = []
    for method, matrix in importances_by_method.items():
        matrix = np.atleast_2d(np.asarray(matrix, dtype=np.float64))
        if matrix.shape[1] != schema.dim:
            raise DistillkitError("importance width does not match schema")
        for out_idx in range(matrix.shape[0]):
            scores = matrix[out_idx]
            order = sorted(range(schema.dim), key=lambda j: (-scores[j], j))
            top = order[:min(k, schema.dim)]
            rows.append({
                "method": method,
                "output": out_idx,
                "top_features": [schema.names[j] for j in top],
                "top_scores": [float(scores[j]) for j in top],
            })
    return rows


class GbmPolicy(PerOutputPolicy):
    """One GbmEnsemble per action dimension behind a single policy."""

    def __init__(self, models: list[GbmEnsemble], schema: FeatureSchema,
                 action_names):
        super().__init__("gbm", models, schema, action_names)
        self._packed = pack_forests(models, [m.f0 for m in models],
                                    models[0].learning_rate)

    def act(self, obs: np.ndarray) -> np.ndarray:
        raw = self._packed.predict(np.asarray(obs, dtype=np.float64)[None, :])
        return self._clamp(raw[0])

    def predict(self, X: np.ndarray) -> np.ndarray:
        return self._packed.predict(_as_matrix(X, self.schema.dim))

    def to_json(self) -> dict:
        return {"family": "gbm", "schema": self.schema.to_json(),
                "action_names": list(self.action_names),
                "models": [m.to_json() for m in self.models]}

    @classmethod
    def from_json(cls, obj: dict) -> "GbmPolicy":
        return cls([GbmEnsemble.from_json(m) for m in obj["models"]],
                   FeatureSchema.from_json(obj["schema"]),
                   tuple(obj["action_names"]))


def fit_gbm_policy(X, Y, schema: FeatureSchema, action_names,
                   **params) -> GbmPolicy:
    """Fit one ensemble per action dimension (shared presorted columns)."""
    X = _as_matrix(X, schema.dim)
    Y = np.asarray(Y, dtype=np.float64)
    sort_idx = sorted_column_index(X)
    models = [fit_gbm(X, Y[:, o], sort_idx=sort_idx, **params)
              for o in range(Y.shape[1])]
    return GbmPolicy(models, schema, action_names)
