import math

import numpy as np
import pytest

from distillkit.core import DistillkitError
from distillkit.symreg import (
    MAX_COMPLEXITY,
    MAX_OPERATOR_DEPTH,
    ParetoArchive,
    SymbolicModel,
    SymbolicPolicy,
    complexity,
    eval_batch,
    evaluate,
    evolve,
    operator_depth,
    parse_prefix,
    satisfies_constraints,
    select_policy_expression,
    to_infix,
    to_prefix,
    _random_expr,
)

from reference import recursive_eval


class TestComplexity:
    def test_bare_variable(self):
        assert complexity(("var", 0)) == 1

    def test_counting_matches_stated_example(self):
        expr = ("add", ("var", 0), ("sin", ("var", 1)))
        assert complexity(expr) == 4

    def test_operator_depth(self):
        expr = ("sin", ("mul", ("var", 0), ("square", ("var", 1))))
        assert operator_depth(expr) == 3
        assert satisfies_constraints(expr)

    def test_nesting_limit_rejected(self):
        expr = ("var", 0)
        for _ in range(MAX_OPERATOR_DEPTH + 1):
            expr = ("sin", expr)
        assert operator_depth(expr) == MAX_OPERATOR_DEPTH + 1
        assert not satisfies_constraints(expr)


class TestEvaluate:
    def test_constant(self):
        assert evaluate(("const", 2.5), np.zeros(3)) == 2.5

    def test_square(self):
        assert evaluate(("square", ("var", 0)), np.array([3.0])) == 9.0

    def test_tanh_zero(self):
        assert evaluate(("tanh", ("var", 0)), np.array([0.0])) == 0.0

    def test_matches_recursive_interpreter_oracle(self):
        rng = np.random.default_rng(0)
        for _ in range(100):
            expr = _random_expr(rng, 4, int(rng.integers(1, 5)),
                                full=bool(rng.integers(2)))
            x = rng.uniform(-3, 3, size=4)
            assert evaluate(expr, x) == recursive_eval(expr, x)

    def test_batch_matches_interpreter(self):
        rng = np.random.default_rng(1)
        for _ in range(50):
            expr = _random_expr(rng, 3, int(rng.integers(1, 5)), full=False)
            X = rng.uniform(-2, 2, size=(16, 3))
            batch = eval_batch(expr, X)
            rows = [evaluate(expr, x) for x in X]
            np.testing.assert_allclose(batch, rows, rtol=1e-12, atol=1e-12)

    def test_unbound_variable_rejected_at_construction(self):
        with pytest.raises(DistillkitError):
            SymbolicModel(("var", 5), n_features=3)


class TestSerialization:
    def test_prefix_roundtrip(self):
        rng = np.random.default_rng(2)
        for _ in range(30):
            expr = _random_expr(rng, 3, int(rng.integers(1, 5)), full=False)
            back = parse_prefix(to_prefix(expr))
            x = rng.uniform(-1, 1, size=3)
            assert evaluate(back, x) == evaluate(expr, x)

    def test_infix_rendering(self):
        expr = ("add", ("mul", ("var", 0), ("var", 1)), ("sin", ("var", 2)))
        assert to_infix(expr) == "((x0 * x1) + sin(x2))"
        assert to_infix(expr, ["a", "b", "c"]) == "((a * b) + sin(c))"

    def test_model_json_roundtrip(self):
        m = SymbolicModel(("mul", ("var", 0), ("const", 1.5)), 2)
        m2 = SymbolicModel.from_json(m.to_json())
        X = np.random.default_rng(3).normal(size=(10, 2))
        assert np.array_equal(m.predict(X), m2.predict(X))


class TestEvolve:
    def test_recovers_identity_target(self):
        rng = np.random.default_rng(4)
        X = rng.uniform(-2, 2, size=(128, 2))
        archive = evolve(X, X[:, 0].copy(), iterations=10,
                         population_size=300, seed=0)
        best = archive.best()
        assert best.loss < 1e-6 and best.complexity <= 3

    def test_reproducible_for_same_seed(self):
        rng = np.random.default_rng(5)
        X = rng.uniform(-1, 1, size=(64, 2))
        y = X[:, 0] * X[:, 1]
        a1 = evolve(X, y, iterations=5, population_size=100, seed=9)
        a2 = evolve(X, y, iterations=5, population_size=100, seed=9)
        m1 = [(m.complexity, m.loss, to_prefix(m.expr)) for m in a1.members()]
        m2 = [(m.complexity, m.loss, to_prefix(m.expr)) for m in a2.members()]
        assert m1 == m2

    def test_best_loss_history_non_increasing(self):
        rng = np.random.default_rng(6)
        X = rng.uniform(-1, 1, size=(64, 3))
        y = np.sin(X[:, 2])
        archive = evolve(X, y, iterations=8, population_size=150, seed=1)
        h = archive.best_loss_history
        assert len(h) == 8
        assert all(a >= b for a, b in zip(h, h[1:]))

    def test_every_member_satisfies_constraints(self):
        rng = np.random.default_rng(7)
        X = rng.uniform(-1, 1, size=(64, 2))
        y = X[:, 0] ** 3
        archive = evolve(X, y, iterations=6, population_size=120, seed=2)
        for m in archive.members():
            assert satisfies_constraints(m.expr)
            assert complexity(m.expr) <= MAX_COMPLEXITY

    def test_archive_front_is_non_dominated(self):
        rng = np.random.default_rng(8)
        X = rng.uniform(-1, 1, size=(64, 2))
        y = X[:, 0] + 0.3 * X[:, 1]
        members = evolve(X, y, iterations=6, population_size=120,
                         seed=3).members()
        for simpler, richer in zip(members, members[1:]):
            assert simpler.complexity < richer.complexity
            assert simpler.loss > richer.loss


class TestSelection:
    def _archive(self, entries):
        a = ParetoArchive()
        for expr, loss in entries:
            a.offer(expr, loss)
            m = a._by_complexity[complexity(expr)]
            m.val_loss = loss
        return a

    def test_single_member(self):
        a = self._archive([(("var", 0), 0.5)])
        assert select_policy_expression(a).expr == ("var", 0)

    def test_tie_prefers_lower_complexity(self):
        small = ("var", 0)
        big = ("add", ("var", 0), ("const", 0.0))
        a = self._archive([(big, 0.25), (small, 0.25)])
        assert select_policy_expression(a).expr == small

    def test_selected_minimizes_validation_loss(self):
        rng = np.random.default_rng(9)
        X = rng.uniform(-1, 1, size=(128, 2))
        y = X[:, 0] * X[:, 1]
        archive = evolve(X[:96], y[:96], iterations=8, population_size=150,
                         seed=4, X_val=X[96:], y_val=y[96:])
        chosen = select_policy_expression(archive)
        assert chosen.val_loss == min(m.val_loss for m in archive.members())

    def test_empty_archive_errors(self):
        with pytest.raises(DistillkitError):
            select_policy_expression(ParetoArchive())


class TestPolicy:
    def test_policy_infix_and_act(self):
        from distillkit.core import FeatureSchema
        schema = FeatureSchema(("a", "b"), ("1", "1"), ("g", "g"))
        pol = SymbolicPolicy(
            [SymbolicModel(("mul", ("var", 0), ("var", 1)), 2),
             SymbolicModel(("sin", ("var", 0)), 2)],
            schema, ("u", "v"))
        x = np.array([0.5, 2.0])
        out = pol.act(x)
        assert out[0] == 1.0
        assert out[1] == pytest.approx(math.sin(0.5), abs=1e-15)
        assert pol.infix_expressions() == ["(a * b)", "sin(a)"]
