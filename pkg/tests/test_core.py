import numpy as np
import pytest

from distillkit.core import (
    ACTOR_EXPERT,
    AggregatedDataset,
    DegenerateScoreWarning,
    DistillkitError,
    FeatureSchema,
    TransitionRecord,
    load_dataset,
    r2_score,
    save_dataset,
    split_train_test,
)


def make_schema(d=3):
    return FeatureSchema(
        names=tuple(f"f{i}" for i in range(d)),
        units=("1",) * d,
        groups=("misc",) * d,
    )


def make_dataset(n, d=3, m=2, seed=0):
    rng = np.random.default_rng(seed)
    ds = AggregatedDataset(schema=make_schema(d),
                           action_names=tuple(f"a{i}" for i in range(m)))
    for i in range(n):
        a = rng.normal(size=m)
        ds.append(TransitionRecord(
            state=rng.normal(size=d), executed_action=a, expert_label=a,
            reward=float(rng.normal()), step_index=i, episode_index=1,
            actor_tag=ACTOR_EXPERT))
    return ds


class TestSchema:
    def test_duplicate_names_rejected(self):
        with pytest.raises(DistillkitError):
            FeatureSchema(("a", "a"), ("1", "1"), ("g", "g"))

    def test_roundtrip(self):
        s = make_schema()
        assert FeatureSchema.from_json(s.to_json()) == s


class TestSplit:
    def test_sizes_10_records(self):
        ds = split_train_test(make_dataset(10), 0.2, seed=7)
        assert int(ds.test_mask.sum()) == 2
        assert int((~ds.test_mask).sum()) == 8

    def test_sizes_5_records_ceil(self):
        ds = split_train_test(make_dataset(5), 0.2, seed=7)
        assert int(ds.test_mask.sum()) == 1

    def test_deterministic(self):
        a = split_train_test(make_dataset(50), 0.2, seed=3).test_mask
        b = split_train_test(make_dataset(50), 0.2, seed=3).test_mask
        assert np.array_equal(a, b)

    def test_different_seed_differs(self):
        a = split_train_test(make_dataset(200), 0.2, seed=3).test_mask
        b = split_train_test(make_dataset(200), 0.2, seed=4).test_mask
        assert not np.array_equal(a, b)

    def test_partition_covers_everything(self):
        ds = split_train_test(make_dataset(37), 0.25, seed=1)
        xtr, ytr, xte, yte = ds.train_test_arrays()
        assert len(xtr) + len(xte) == 37

    def test_empty_dataset_errors(self):
        with pytest.raises(DistillkitError):
            split_train_test(make_dataset(0), 0.2, seed=0)

    @pytest.mark.parametrize("frac", [0.0, 1.0, -0.1, 1.5])
    def test_bad_fraction_errors(self, frac):
        with pytest.raises(DistillkitError):
            split_train_test(make_dataset(10), frac, seed=0)


class TestR2:
    def test_perfect_predictor(self):
        t = np.random.default_rng(0).normal(size=(20, 3))
        assert r2_score(t, t) == 1.0

    def test_mean_predictor_is_zero(self):
        t = np.random.default_rng(1).normal(size=(20, 3))
        p = np.broadcast_to(t.mean(axis=0), t.shape)
        assert r2_score(p, t) == pytest.approx(0.0, abs=1e-12)

    def test_constant_target_warns_and_scores_zero(self):
        t = np.ones((10, 1))
        p = np.zeros((10, 1))
        with pytest.warns(DegenerateScoreWarning):
            assert r2_score(p, t) == 0.0

    def test_row_permutation_invariance(self):
        rng = np.random.default_rng(2)
        t = rng.normal(size=(30, 2))
        p = rng.normal(size=(30, 2))
        perm = rng.permutation(30)
        assert r2_score(p, t) == pytest.approx(r2_score(p[perm], t[perm]),
                                               rel=1e-12)

    def test_shape_mismatch_errors(self):
        with pytest.raises(DistillkitError):
            r2_score(np.zeros((5, 2)), np.zeros((5, 3)))

    def test_single_row_errors(self):
        with pytest.raises(DistillkitError):
            r2_score(np.zeros((1, 2)), np.ones((1, 2)))


class TestCsvRoundtrip:
    def test_roundtrip(self, tmp_path):
        ds = make_dataset(25)
        path = tmp_path / "data.csv"
        save_dataset(ds, path)
        back = load_dataset(path, ds.schema, ds.action_names)
        assert len(back) == 25
        for a, b in zip(ds.records, back.records):
            assert np.array_equal(a.state, b.state)
            assert np.array_equal(a.expert_label, b.expert_label)
            assert a.reward == b.reward
            assert (a.step_index, a.episode_index, a.actor_tag) == \
                (b.step_index, b.episode_index, b.actor_tag)

    def test_header_layout(self, tmp_path):
        ds = make_dataset(2, d=2, m=1)
        path = tmp_path / "data.csv"
        save_dataset(ds, path)
        header = path.read_text(encoding="utf-8").splitlines()[0]
        assert header == "f0,f1,a0,reward,step,episode,actor"

    def test_wrong_schema_rejected(self, tmp_path):
        ds = make_dataset(2)
        path = tmp_path / "data.csv"
        save_dataset(ds, path)
        with pytest.raises(DistillkitError):
            load_dataset(path, make_schema(2), ds.action_names)
