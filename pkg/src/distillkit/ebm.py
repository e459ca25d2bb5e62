"""Explainable boosting machine: intercept + per-feature shape functions
(+ selected pairwise interaction surfaces) learned by cyclic boosting on
binned features.

Shape functions are lookup tables over quantile bins.  Univariate and
pairwise terms are centered under the training bin occupancy with the
offsets folded into the intercept, so predictions decompose exactly into
per-term contributions.  Out-of-range inputs clamp to the edge bins.
"""

from __future__ import annotations

import numpy as np

from distillkit._backend import kernels
from distillkit.core import DistillkitError, FeatureSchema, PerOutputPolicy
from distillkit.trees import _as_matrix

DEFAULT_ROUNDS = 500
DEFAULT_LEARNING_RATE = 0.1
DEFAULT_MAX_BINS = 256
DEFAULT_MAX_PAIRS = 10
DEFAULT_PAIR_ROUNDS = 100
MICROSTEP_DEPTH = 2  # single-feature trees stay shallow so terms read well


class BinningMap:
    """Per-feature sorted cut points; bin b holds values in
    (cuts[b-1], cuts[b]], edges clamp."""

    def __init__(self, cuts: list[np.ndarray]):
        for c in cuts:
            if len(c) and not (np.diff(c) > 0).all():
                raise DistillkitError("cut points must be strictly increasing")
        self.cuts = [np.asarray(c, dtype=np.float64) for c in cuts]

    @property
    def dim(self) -> int:
        return len(self.cuts)

    @property
    def n_bins(self) -> np.ndarray:
        return np.array([len(c) + 1 for c in self.cuts], dtype=np.int32)

    def bin_column(self, j: int, values) -> np.ndarray:
        return np.searchsorted(self.cuts[j], values, side="left") \
            .astype(np.int32)

    def transform(self, X) -> np.ndarray:
        X = _as_matrix(X, self.dim)
        out = np.empty(X.shape, dtype=np.int32)
        for j in range(self.dim):
            out[:, j] = self.bin_column(j, X[:, j])
        return np.ascontiguousarray(out)

    def bin_centers(self, j: int) -> np.ndarray:
        """Representative value per bin (edge bins extrapolate half a step)."""
        c = self.cuts[j]
        if len(c) == 0:
            return np.zeros(1)
        if len(c) == 1:
            return np.array([c[0] - 0.5, c[0] + 0.5])
        mids = (c[:-1] + c[1:]) / 2.0
        first = c[0] - (c[1] - c[0]) / 2.0
        last = c[-1] + (c[-1] - c[-2]) / 2.0
        return np.concatenate([[first], mids, [last]])

    def to_json(self) -> dict:
        return {"cuts": [[float(v) for v in c] for c in self.cuts]}

    @classmethod
    def from_json(cls, obj: dict) -> "BinningMap":
        return cls([np.asarray(c, dtype=np.float64) for c in obj["cuts"]])


def build_bins(X, max_bins: int = DEFAULT_MAX_BINS) -> BinningMap:
    """Quantile bins over each feature's unique values.

    Features with at most max_bins distinct values get one bin per value
    (cuts at midpoints); denser features get quantile cuts of the unique
    values, deduplicated.
    """
    X = _as_matrix(X)
    if max_bins < 2:
        raise DistillkitError("max_bins must be >= 2")
    cuts = []
    for j in range(X.shape[1]):
        uniq = np.unique(X[:, j])
        if len(uniq) <= max_bins:
            cuts.append((uniq[:-1] + uniq[1:]) / 2.0)
        else:
            qs = np.quantile(uniq, np.arange(1, max_bins) / max_bins)
            cuts.append(np.unique(qs))
    return BinningMap(cuts)


class EbmModel:
    """Fitted additive model for one scalar output."""

    def __init__(self, intercept: float, binning: BinningMap,
                 terms: list[np.ndarray], pairs: list[tuple[int, int]],
                 pair_terms: list[np.ndarray], feature_names: tuple[str, ...]):
        self.intercept = intercept
        self.binning = binning
        self.terms = terms
        self.pairs = [tuple(p) for p in pairs]
        self.pair_terms = pair_terms
        self.feature_names = tuple(feature_names)
        self.n_features = binning.dim

    def term_names(self) -> list[str]:
        names = list(self.feature_names)
        names += [f"{self.feature_names[i]} x {self.feature_names[j]}"
                  for i, j in self.pairs]
        return names

    def _contributions(self, bins: np.ndarray) -> np.ndarray:
        """(n, n_terms) matrix of table lookups for binned rows."""
        n = bins.shape[0]
        cols = [self.terms[j][bins[:, j]] for j in range(self.n_features)]
        cols += [tbl[bins[:, i], bins[:, j]]
                 for (i, j), tbl in zip(self.pairs, self.pair_terms)]
        return np.column_stack(cols) if cols else np.zeros((n, 0))

    def predict_binned(self, bins: np.ndarray) -> np.ndarray:
        return self.intercept + self._contributions(bins).sum(axis=1)

    def predict(self, X) -> np.ndarray:
        return self.predict_binned(self.binning.transform(X))

    def predict_row(self, x) -> float:
        x = np.asarray(x, dtype=np.float64)
        if x.shape != (self.n_features,):
            raise DistillkitError(
                f"expected {self.n_features} features, got shape {x.shape}")
        return float(self.predict(x[None, :])[0])

    def to_json(self) -> dict:
        return {
            "intercept": self.intercept,
            "binning": self.binning.to_json(),
            "terms": [[float(v) for v in t] for t in self.terms],
            "pairs": [list(p) for p in self.pairs],
            "pair_terms": [[[float(v) for v in row] for row in t]
                           for t in self.pair_terms],
            "feature_names": list(self.feature_names),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "EbmModel":
        return cls(obj["intercept"], BinningMap.from_json(obj["binning"]),
                   [np.asarray(t, dtype=np.float64) for t in obj["terms"]],
                   [tuple(p) for p in obj["pairs"]],
                   [np.asarray(t, dtype=np.float64)
                    for t in obj["pair_terms"]],
                   tuple(obj["feature_names"]))


def _rank_pairs(bins, n_bins, residual, max_pairs):
    """Score all pairs, return the top ones; ties break lexicographically."""
    d = bins.shape[1]
    if max_pairs <= 0 or d < 2:
        return []
    scores = kernels.score_pairs(bins, n_bins,
                                 np.ascontiguousarray(residual))
    all_pairs = [(i, j) for i in range(d) for j in range(i + 1, d)]
    order = sorted(range(len(all_pairs)),
                   key=lambda p: (-scores[p], all_pairs[p]))
    return [(all_pairs[p], float(scores[p])) for p in order[:max_pairs]]


def detect_interactions(X, residuals, max_pairs: int,
                        max_bins: int = DEFAULT_MAX_BINS,
                        binning: BinningMap | None = None):
    """Rank feature pairs by the residual-MSE reduction of the best
    bin-grid predictor; returns [((i, j), score), ...], best first."""
    X = _as_matrix(X)
    residuals = np.ascontiguousarray(residuals, dtype=np.float64)
    if binning is None:
        binning = build_bins(X, max_bins)
    bins = binning.transform(X)
    return _rank_pairs(bins, binning.n_bins, residuals, max_pairs)


def fit_ebm(X, y, rounds: int = DEFAULT_ROUNDS,
            learning_rate: float = DEFAULT_LEARNING_RATE,
            max_bins: int = DEFAULT_MAX_BINS,
            max_pairs: int = DEFAULT_MAX_PAIRS,
            pair_rounds: int = DEFAULT_PAIR_ROUNDS,
            feature_names=None, binning: BinningMap | None = None,
            bins: np.ndarray | None = None) -> EbmModel:
    """Cyclic boosting: main effects for `rounds` round-robin passes, then
    pair selection on the remaining residual and `pair_rounds` passes over
    the selected pair grids.  Terms are centered afterwards.
    """
    X = _as_matrix(X)
    y = np.ascontiguousarray(y, dtype=np.float64)
    n, d = X.shape
    if y.shape != (n,):
        raise DistillkitError(f"y has shape {y.shape}, expected ({n},)")
    if n < 2 or rounds < 1:
        raise DistillkitError("need n >= 2 and rounds >= 1")
    if not (np.isfinite(X).all() and np.isfinite(y).all()):
        raise DistillkitError("non-finite training data")
    if feature_names is None:
        feature_names = tuple(f"x{j}" for j in range(d))

    if binning is None:
        binning = build_bins(X, max_bins)
    if bins is None:
        bins = binning.transform(X)
    n_bins = binning.n_bins

    intercept = float(y.mean())
    residual = np.ascontiguousarray(y - intercept)
    # boosting has converged once a whole round moves no table entry by more
    # than a vanishing fraction of the initial residual scale
    stop_tol = 1e-10 * float(np.sqrt(np.mean(residual * residual)))
    tables = [np.zeros(int(b)) for b in n_bins]
    kernels.cyclic_main_effects(bins, n_bins, residual, tables, rounds,
                                learning_rate, MICROSTEP_DEPTH, stop_tol)

    ranked = _rank_pairs(bins, n_bins, residual, max_pairs)
    pairs = [p for p, _ in ranked]
    pair_terms = [np.zeros((int(n_bins[i]), int(n_bins[j])))
                  for i, j in pairs]
    if pairs:
        pairs_arr = np.asarray(pairs, dtype=np.int32).reshape(-1, 2)
        kernels.cyclic_pair_effects(bins, n_bins, pairs_arr, pair_terms,
                                    residual, pair_rounds, learning_rate,
                                    stop_tol)

    # center every term under the training occupancy; offsets move to the
    # intercept so the prediction is unchanged
    for j in range(d):
        occ = np.bincount(bins[:, j], minlength=int(n_bins[j]))
        mu = float(np.dot(tables[j], occ) / n)
        tables[j] -= mu
        intercept += mu
    for (i, j), tbl in zip(pairs, pair_terms):
        occ = np.bincount(
            bins[:, i].astype(np.int64) * int(n_bins[j]) + bins[:, j],
            minlength=int(n_bins[i]) * int(n_bins[j]),
        ).reshape(tbl.shape)
        mu = float((tbl * occ).sum() / n)
        tbl -= mu
        intercept += mu

    return EbmModel(intercept, binning, tables, pairs, pair_terms,
                    tuple(feature_names))


def ebm_predict(model: EbmModel, x) -> float:
    return model.predict_row(x)


def local_explanation(model: EbmModel, x) -> list[tuple[str, float]]:
    """Exact per-term decomposition of one prediction, |contribution| desc."""
    x = np.asarray(x, dtype=np.float64)
    bins = model.binning.transform(x[None, :])
    contribs = model._contributions(bins)[0]
    names = model.term_names()
    order = sorted(range(len(names)), key=lambda t: (-abs(contribs[t]), t))
    return [(names[t], float(contribs[t])) for t in order]


def global_importance(model: EbmModel, X_train) -> list[tuple[str, float]]:
    """Mean absolute contribution of each term over the training set."""
    bins = model.binning.transform(X_train)
    scores = np.abs(model._contributions(bins)).mean(axis=0)
    names = model.term_names()
    order = sorted(range(len(names)), key=lambda t: (-scores[t], t))
    return [(names[t], float(scores[t])) for t in order]


class EbmPolicy(PerOutputPolicy):
    """One EbmModel per action dimension; all outputs share the binning."""

    def __init__(self, models: list[EbmModel], schema: FeatureSchema,
                 action_names):
        super().__init__("ebm", models, schema, action_names)
        self._pack()

    def _pack(self):
        m0 = self.models[0]
        cuts = m0.binning.cuts
        self._edge_off = np.concatenate(
            [[0], np.cumsum([len(c) for c in cuts])]).astype(np.int32)
        self._edges_flat = (np.concatenate(cuts) if cuts
                            else np.zeros(0)).astype(np.float64)
        nb = m0.binning.n_bins
        self._uni_off = np.concatenate([[0], np.cumsum(nb)])[:-1] \
            .astype(np.int32)
        self._uni_tables = np.stack(
            [np.concatenate(mm.terms) for mm in self.models])
        pairs, flat, off, out_off, bj = [], [], [0], [0], []
        for mm in self.models:
            for (i, j), tbl in zip(mm.pairs, mm.pair_terms):
                pairs.append((i, j))
                flat.append(tbl.ravel())
                off.append(off[-1] + tbl.size)
                bj.append(tbl.shape[1])
            out_off.append(len(pairs))
        self._pairs = np.asarray(pairs, dtype=np.int32).reshape(-1, 2)
        self._pair_flat = (np.concatenate(flat) if flat
                           else np.zeros(0)).astype(np.float64)
        self._pair_off = np.asarray(off, dtype=np.int32)
        self._pair_out_off = np.asarray(out_off, dtype=np.int32)
        self._pair_bj = np.asarray(bj, dtype=np.int32)
        self._intercepts = np.array([mm.intercept for mm in self.models])
        self._bins_buf = np.empty(self.schema.dim, dtype=np.int32)

    def act(self, obs: np.ndarray) -> np.ndarray:
        raw = kernels.ebm_policy_row(
            self._edges_flat, self._edge_off, self._uni_tables, self._uni_off,
            self._pairs, self._pair_flat, self._pair_off, self._pair_out_off,
            self._pair_bj, self._intercepts,
            np.asarray(obs, dtype=np.float64), self._bins_buf)
        return self._clamp(raw)

    def predict(self, X: np.ndarray) -> np.ndarray:
        bins = self.models[0].binning.transform(X)
        return np.column_stack([m.predict_binned(bins) for m in self.models])

    def to_json(self) -> dict:
        return {"family": "ebm", "schema": self.schema.to_json(),
                "action_names": list(self.action_names),
                "models": [m.to_json() for m in self.models]}

    @classmethod
    def from_json(cls, obj: dict) -> "EbmPolicy":
        return cls([EbmModel.from_json(m) for m in obj["models"]],
                   FeatureSchema.from_json(obj["schema"]),
                   tuple(obj["action_names"]))


def fit_ebm_policy(X, Y, schema: FeatureSchema, action_names,
                   **params) -> EbmPolicy:
    """Fit one EBM per action dimension with a shared BinningMap."""
    X = _as_matrix(X, schema.dim)
    Y = np.asarray(Y, dtype=np.float64)
    binning = build_bins(X, params.get("max_bins", DEFAULT_MAX_BINS))
    bins = binning.transform(X)
    models = [fit_ebm(X, Y[:, o], feature_names=schema.names,
                      binning=binning, bins=bins, **params)
              for o in range(Y.shape[1])]
    return EbmPolicy(models, schema, action_names)
