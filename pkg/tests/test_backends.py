"""Cross-backend parity: the compiled kernels and the NumPy fallback must be
interchangeable.  Tree and boosting kernels are compared bit-for-bit; the
expression VM allows last-ulp differences in sin/tanh (SIMD vs scalar libm).
"""

import numpy as np
import pytest

from distillkit import _kernels_py as kpy
from distillkit._backend import backend_name, kernels

pytestmark = pytest.mark.skipif(
    backend_name() != "cython", reason="compiled backend unavailable")


def random_bins(rng, n, n_bins):
    bins = np.column_stack([rng.integers(0, b, size=n) for b in n_bins])
    return np.ascontiguousarray(bins.astype(np.int32))


class TestEbmKernels:
    def test_cyclic_main_effects_bit_identical(self):
        rng = np.random.default_rng(0)
        n_bins = np.array([7, 2, 13], dtype=np.int32)
        bins = random_bins(rng, 400, n_bins)
        r1 = rng.normal(size=400)
        r2 = r1.copy()
        t1 = [np.zeros(int(b)) for b in n_bins]
        t2 = [np.zeros(int(b)) for b in n_bins]
        kernels.cyclic_main_effects(bins, n_bins, r1, t1, 80, 0.1, 2)
        kpy.cyclic_main_effects(bins, n_bins, r2, t2, 80, 0.1, 2)
        assert np.array_equal(r1, r2)
        for a, b in zip(t1, t2):
            assert np.array_equal(a, b)

    def test_score_pairs_bit_identical(self):
        rng = np.random.default_rng(1)
        n_bins = np.array([5, 9, 2, 4], dtype=np.int32)
        bins = random_bins(rng, 600, n_bins)
        res = rng.normal(size=600)
        assert np.array_equal(kernels.score_pairs(bins, n_bins, res),
                              kpy.score_pairs(bins, n_bins, res))

    def test_cyclic_pair_effects_bit_identical(self):
        rng = np.random.default_rng(2)
        n_bins = np.array([6, 5, 3], dtype=np.int32)
        bins = random_bins(rng, 500, n_bins)
        pairs = np.array([[0, 1], [1, 2], [0, 2]], dtype=np.int32)
        r1 = rng.normal(size=500)
        r2 = r1.copy()
        t1 = [np.zeros((6, 5)), np.zeros((5, 3)), np.zeros((6, 3))]
        t2 = [t.copy() for t in t1]
        kernels.cyclic_pair_effects(bins, n_bins, pairs, t1, r1, 40, 0.1)
        kpy.cyclic_pair_effects(bins, n_bins, pairs, t2, r2, 40, 0.1)
        assert np.array_equal(r1, r2)
        for a, b in zip(t1, t2):
            assert np.array_equal(a, b)

    def test_ebm_policy_row_matches(self):
        rng = np.random.default_rng(3)
        edges = [np.sort(rng.normal(size=4)), np.zeros(0), np.array([0.5])]
        edges_flat = np.concatenate([e for e in edges]).astype(np.float64)
        edge_off = np.array([0, 4, 4, 5], dtype=np.int32)
        nb = [5, 1, 2]
        uni_off = np.array([0, 5, 6], dtype=np.int32)
        uni_tables = rng.normal(size=(2, 8))
        pairs = np.array([[0, 2]], dtype=np.int32)
        pair_flat = rng.normal(size=10)
        pair_off = np.array([0, 10], dtype=np.int32)
        pair_out_off = np.array([0, 1, 1], dtype=np.int32)
        pair_bj = np.array([2], dtype=np.int32)
        intercepts = rng.normal(size=2)
        for _ in range(20):
            x = rng.normal(size=3)
            b1 = np.empty(3, dtype=np.int32)
            b2 = np.empty(3, dtype=np.int32)
            o1 = kernels.ebm_policy_row(edges_flat, edge_off, uni_tables,
                                        uni_off, pairs, pair_flat, pair_off,
                                        pair_out_off, pair_bj, intercepts,
                                        x, b1)
            o2 = kpy.ebm_policy_row(edges_flat, edge_off, uni_tables,
                                    uni_off, pairs, pair_flat, pair_off,
                                    pair_out_off, pair_bj, intercepts,
                                    x, b2)
            assert np.array_equal(b1, b2)
            assert np.array_equal(o1, o2)


class TestForestKernels:
    def test_predict_forest_bit_identical(self):
        from distillkit.gbm import fit_gbm, pack_forests
        rng = np.random.default_rng(4)
        X = rng.normal(size=(300, 4))
        models = [fit_gbm(X, np.sin(X[:, j]), n_stages=12)
                  for j in range(2)]
        packed = pack_forests(models, [m.f0 for m in models], 0.1).arrays
        Q = np.ascontiguousarray(rng.normal(size=(60, 4)))
        a = kernels.predict_forest(*packed[:7], packed[7], packed[8], Q)
        b = kpy.predict_forest(*packed[:7], packed[7], packed[8], Q)
        assert np.array_equal(a, b)


class TestProgramVm:
    def test_eval_program_close(self):
        from distillkit.symreg import _random_expr, compile_program
        rng = np.random.default_rng(5)
        X = np.ascontiguousarray(rng.uniform(-2, 2, size=(64, 3)))
        for _ in range(40):
            expr = _random_expr(rng, 3, int(rng.integers(1, 5)), full=False)
            code, arg, consts, ms = compile_program(expr)
            a = kernels.eval_program(code, arg, consts, X, ms)
            b = kpy.eval_program(code, arg, consts, X, ms)
            np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-15)

    def test_mse_of_program_close(self):
        from distillkit.symreg import _random_expr, compile_program
        rng = np.random.default_rng(6)
        X = np.ascontiguousarray(rng.uniform(-1, 1, size=(50, 2)))
        y = rng.normal(size=50)
        for _ in range(20):
            expr = _random_expr(rng, 2, 3, full=False)
            code, arg, consts, ms = compile_program(expr)
            a = kernels.mse_of_program(code, arg, consts, X, y, ms)
            b = kpy.mse_of_program(code, arg, consts, X, y, ms)
            assert a == pytest.approx(b, rel=1e-12)
