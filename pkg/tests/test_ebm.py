import numpy as np
import pytest

from distillkit.core import DistillkitError, FeatureSchema
from distillkit.ebm import (
    BinningMap,
    EbmModel,
    EbmPolicy,
    build_bins,
    detect_interactions,
    ebm_predict,
    fit_ebm,
    fit_ebm_policy,
    global_importance,
    local_explanation,
)


def xor_dataset(rows_per_cell=100):
    """Exactly balanced two-feature XOR with +-1 targets."""
    a = np.repeat([0.0, 0.0, 1.0, 1.0], rows_per_cell)
    b = np.tile(np.repeat([0.0, 1.0], rows_per_cell), 2)
    y = np.where(a != b, 1.0, -1.0)
    return np.column_stack([a, b]), y


class TestBinning:
    def test_binary_feature_two_bins(self):
        bm = build_bins(np.array([[0.0], [1.0], [0.0], [1.0]]))
        assert np.array_equal(bm.cuts[0], [0.5])
        assert bm.n_bins[0] == 2

    def test_constant_feature_single_bin(self):
        bm = build_bins(np.full((10, 1), 3.0))
        assert len(bm.cuts[0]) == 0 and bm.n_bins[0] == 1

    def test_uniform_draw_occupancy(self):
        rng = np.random.default_rng(123)
        x = rng.uniform(size=1000)[:, None]
        bm = build_bins(x, max_bins=256)
        assert bm.n_bins[0] == 256
        occ = np.bincount(bm.transform(x)[:, 0], minlength=256)
        target = 1000 / 256
        assert occ.min() >= 0.5 * target and occ.max() <= 1.5 * target

    def test_value_on_cut_goes_to_lower_bin(self):
        bm = BinningMap([np.array([0.5, 1.5])])
        assert list(bm.bin_column(0, [0.5, 0.50001, 1.5, 2.0])) == [0, 1, 1, 2]

    def test_out_of_range_clamps_to_edges(self):
        bm = BinningMap([np.array([0.0, 1.0])])
        assert list(bm.bin_column(0, [-100.0, 100.0])) == [0, 2]

    def test_json_roundtrip(self):
        bm = build_bins(np.random.default_rng(0).normal(size=(50, 3)))
        bm2 = BinningMap.from_json(bm.to_json())
        for a, b in zip(bm.cuts, bm2.cuts):
            assert np.array_equal(a, b)


class TestFit:
    def test_constant_targets(self):
        X = np.random.default_rng(0).normal(size=(40, 3))
        m = fit_ebm(X, np.full(40, 7.5), rounds=50)
        assert m.intercept == 7.5
        for t in m.terms:
            assert np.all(t == 0.0)

    def test_single_binary_feature_converges(self):
        # y = x0 on a balanced binary feature: the term converges
        # geometrically to {-0.5, +0.5} with intercept 0.5
        x0 = (np.arange(200) % 2).astype(float)
        m = fit_ebm(x0[:, None], x0.copy(), rounds=500, learning_rate=0.1,
                    max_pairs=0)
        assert m.intercept == pytest.approx(0.5, abs=1e-3)
        assert m.terms[0][0] == pytest.approx(-0.5, abs=1e-3)
        assert m.terms[0][1] == pytest.approx(0.5, abs=1e-3)

    def test_xor_lands_in_pair_term(self):
        X, y = xor_dataset()
        m = fit_ebm(X, y, rounds=200, max_pairs=1)
        # balanced cells: univariate residual means are exactly zero
        for t in m.terms:
            assert np.all(t == 0.0)
        assert m.pairs == [(0, 1)]
        tbl = m.pair_terms[0]
        # signed XOR surface: positive when exactly one input is high
        assert tbl[1, 0] == pytest.approx(1.0, abs=1e-3)
        assert tbl[0, 1] == pytest.approx(1.0, abs=1e-3)
        assert tbl[0, 0] == pytest.approx(-1.0, abs=1e-3)
        assert tbl[1, 1] == pytest.approx(-1.0, abs=1e-3)

    def test_centering_under_training_occupancy(self):
        rng = np.random.default_rng(1)
        X = rng.normal(size=(500, 4))
        y = X[:, 0] + np.sin(3 * X[:, 1]) + 0.2 * rng.normal(size=500)
        m = fit_ebm(X, y, rounds=100, max_pairs=2)
        bins = m.binning.transform(X)
        for j in range(4):
            contrib = m.terms[j][bins[:, j]]
            assert abs(contrib.mean()) < 1e-9

    def test_non_finite_rejected(self):
        with pytest.raises(DistillkitError):
            fit_ebm(np.array([[np.nan], [1.0]]), np.array([0.0, 1.0]))


class TestInteractions:
    def test_additive_truth_scores_near_zero(self):
        rng = np.random.default_rng(5)
        X = rng.uniform(-1, 1, size=(2000, 3))
        y = np.sin(2 * X[:, 0]) + X[:, 1] ** 2
        m = fit_ebm(X, y, rounds=300, max_pairs=0)
        res = y - m.predict(X)
        for _, score in detect_interactions(X, res, 3, binning=m.binning):
            assert score < 0.01 * y.var()

    def test_xor_pair_ranked_first(self):
        rng = np.random.default_rng(6)
        a = rng.integers(0, 2, 600).astype(float)
        b = rng.integers(0, 2, 600).astype(float)
        c = rng.normal(size=600)
        y = np.where(a != b, 1.0, -1.0)
        X = np.column_stack([a, b, c])
        ranked = detect_interactions(X, y - y.mean(), 3)
        assert ranked[0][0] == (0, 1)

    def test_max_pairs_zero_empty(self):
        X, y = xor_dataset(10)
        assert detect_interactions(X, y, 0) == []
        m = fit_ebm(X, y, rounds=10, max_pairs=0)
        assert m.pairs == [] and m.pair_terms == []


class TestPredict:
    def test_all_zero_model_returns_intercept(self):
        X = np.random.default_rng(2).normal(size=(20, 2))
        m = fit_ebm(X, np.full(20, 1.25), rounds=5)
        assert ebm_predict(m, X[0]) == 1.25

    def test_out_of_range_equals_edge_bin(self):
        X, y = xor_dataset(20)
        m = fit_ebm(X, y, rounds=50, max_pairs=1)
        far = np.array([999.0, -999.0])
        edge = np.array([1.0, 0.0])
        assert m.predict_row(far) == m.predict_row(edge)

    def test_dimension_mismatch(self):
        X, y = xor_dataset(10)
        m = fit_ebm(X, y, rounds=5)
        with pytest.raises(DistillkitError):
            m.predict_row(np.zeros(3))

    def test_json_roundtrip_bit_exact(self):
        rng = np.random.default_rng(3)
        X = rng.normal(size=(300, 3))
        y = X[:, 0] * X[:, 1] + np.sin(X[:, 2])
        m = fit_ebm(X, y, rounds=80, max_pairs=2)
        m2 = EbmModel.from_json(m.to_json())
        Q = rng.normal(size=(50, 3))
        assert np.array_equal(m.predict(Q), m2.predict(Q))
        assert m2.intercept == m.intercept
        for a, b in zip(m.terms, m2.terms):
            assert np.array_equal(a, b)


class TestExplanations:
    def fitted(self):
        rng = np.random.default_rng(4)
        X = rng.normal(size=(400, 3))
        y = X[:, 0] + 0.5 * X[:, 1] ** 2 + X[:, 1] * X[:, 2]
        return fit_ebm(X, y, rounds=100, max_pairs=1), X

    def test_contributions_sum_to_prediction(self):
        m, X = self.fitted()
        for x in X[:25]:
            parts = local_explanation(m, x)
            total = m.intercept + sum(c for _, c in parts)
            assert abs(m.predict_row(x) - total) < 1e-12

    def test_ordering_by_magnitude(self):
        m, X = self.fitted()
        mags = [abs(c) for _, c in local_explanation(m, X[0])]
        assert mags == sorted(mags, reverse=True)

    def test_zeroed_term_contributes_zero_and_ranks_last(self):
        m, X = self.fitted()
        m.terms[2][:] = 0.0
        parts = local_explanation(m, X[1])
        names = [n for n, _ in parts]
        contribs = dict(parts)
        assert contribs[m.feature_names[2]] == 0.0
        assert abs(contribs[names[-1]]) <= min(abs(c) for _, c in parts)

    def test_xor_local_sign_pattern(self):
        X, y = xor_dataset()
        m = fit_ebm(X, y, rounds=200, max_pairs=1)
        top_name, top_contrib = local_explanation(m, np.array([1.0, 0.0]))[0]
        assert top_name == "x0 x x1" and top_contrib > 0.9
        _, neg_contrib = local_explanation(m, np.array([1.0, 1.0]))[0]
        assert neg_contrib < -0.9

    def test_global_importance_scaling_linearity(self):
        m, X = self.fitted()
        before = dict(global_importance(m, X))
        name = m.feature_names[0]
        m.terms[0] *= 2.0
        after = dict(global_importance(m, X))
        assert after[name] == pytest.approx(2.0 * before[name], rel=1e-12)

    def test_identically_zero_term_scores_zero(self):
        m, X = self.fitted()
        m.terms[1][:] = 0.0
        scores = dict(global_importance(m, X))
        assert scores[m.feature_names[1]] == 0.0


class TestPolicy:
    def test_policy_act_matches_models(self):
        rng = np.random.default_rng(7)
        X = rng.normal(size=(300, 4))
        Y = np.column_stack([X[:, 0], X[:, 1] * X[:, 2]])
        schema = FeatureSchema(("a", "b", "c", "d"), ("1",) * 4, ("g",) * 4)
        pol = fit_ebm_policy(X, Y, schema, ("u", "v"), rounds=60, max_pairs=2)
        batch = pol.predict(X[:10])  # raw regression surface
        for i in range(10):
            act = pol.act(X[i])  # clamped to the actuator range
            assert np.allclose(act, np.clip(batch[i], -1, 1), atol=1e-12)
            assert act[0] == pytest.approx(
                np.clip(pol.models[0].predict_row(X[i]), -1, 1), abs=1e-12)

    def test_pure_gam_mode_feature_isolation(self):
        # with no pairs, changing one feature only moves its own term
        rng = np.random.default_rng(8)
        X = rng.normal(size=(300, 3))
        Y = (X[:, 0] + np.sin(X[:, 1]))[:, None]
        schema = FeatureSchema(("a", "b", "c"), ("1",) * 3, ("g",) * 3)
        pol = fit_ebm_policy(X, Y, schema, ("u",), rounds=60, max_pairs=0)
        m = pol.models[0]
        x = X[0].copy()
        base_parts = dict(local_explanation(m, x))
        x2 = x.copy()
        x2[1] += 1.7
        new_parts = dict(local_explanation(m, x2))
        assert new_parts["a"] == base_parts["a"]
        assert new_parts["c"] == base_parts["c"]

    def test_policy_json_roundtrip(self):
        rng = np.random.default_rng(9)
        X = rng.normal(size=(100, 2))
        Y = np.column_stack([X[:, 0] * X[:, 1]])
        schema = FeatureSchema(("a", "b"), ("1", "1"), ("g", "g"))
        pol = fit_ebm_policy(X, Y, schema, ("u",), rounds=30, max_pairs=1)
        pol2 = EbmPolicy.from_json(pol.to_json())
        assert np.array_equal(pol.predict(X), pol2.predict(X))
