import math
from dataclasses import dataclass

import numpy as np
import pytest

from latefuse.encoder import SequenceBatch
from latefuse.kernel import NumericsError, Rng
from latefuse.model import (
    TASK_CLASSIFICATION,
    TASK_REGRESSION,
    ModelConfig,
    init_model,
    named_params,
)
from latefuse.training import (
    EncodedDataset,
    RmsPropState,
    TrainConfig,
    classification_metrics,
    dichotomize_hdrs,
    evaluate,
    rmsprop_step,
    temporal_split,
    train,
)
from oracles import rmsprop_ref, temporal_split_ref


@dataclass
class FakeSample:
    user_id: str
    start: int
    end: int


class TestRmsProp:
    def test_first_step_hand_value(self):
        theta = np.zeros((1, 1))
        params = [("w", theta)]
        state = RmsPropState(params)
        rmsprop_step(params, {"w": np.ones((1, 1))}, state, learning_rate=0.001)
        # acc = 0.1 * 1^2, step = 0.001 / sqrt(0.1 + 1e-8)
        assert theta[0, 0] == pytest.approx(-0.0031623, abs=1e-7)
        assert state.acc["w"][0, 0] == pytest.approx(0.1, abs=1e-15)

    def test_trace_matches_scalar_reference(self, np_rng):
        grads = np_rng.normal(size=12).tolist()
        theta = np.array([[0.5]])
        params = [("w", theta)]
        state = RmsPropState(params)
        want = rmsprop_ref(0.5, grads, lr=0.01, rho=0.9, eps=1e-8)
        for g, expect in zip(grads, want):
            rmsprop_step(params, {"w": np.array([[g]])}, state, 0.01)
            assert theta[0, 0] == pytest.approx(expect, abs=1e-12)

    def test_updates_each_named_array_independently(self, np_rng):
        a, b = np.zeros((2, 2)), np.zeros(3)
        params = [("a", a), ("b", b)]
        state = RmsPropState(params)
        rmsprop_step(params, {"a": np.ones((2, 2)), "b": np.zeros(3)},
                     state, 0.1)
        assert np.all(a != 0.0)
        np.testing.assert_array_equal(b, np.zeros(3))


class TestDichotomize:
    def test_boundary(self):
        assert dichotomize_hdrs(0) == 0
        assert dichotomize_hdrs(7) == 0
        assert dichotomize_hdrs(8) == 1
        assert dichotomize_hdrs(20) == 1

    def test_rejects_negative(self):
        with pytest.raises(ValueError):
            dichotomize_hdrs(-1)


class TestTemporalSplit:
    def test_eighty_twenty_counts(self):
        samples = [FakeSample("u", i, i + 1) for i in range(10)]
        train_s, val_s = temporal_split(samples, ratio=0.8)
        assert len(train_s) == 8 and len(val_s) == 2
        samples = [FakeSample("u", i, i + 1) for i in range(5)]
        train_s, val_s = temporal_split(samples, ratio=0.8)
        assert len(train_s) == 4 and len(val_s) == 1

    def test_single_session_user_goes_to_train(self):
        samples = [FakeSample("solo", 0, 1),
                   FakeSample("pair", 0, 1), FakeSample("pair", 5, 6)]
        train_s, val_s = temporal_split(samples, ratio=0.5)
        assert {s.user_id for s in val_s} == {"pair"}
        assert sum(s.user_id == "solo" for s in train_s) == 1

    def test_order_of_input_is_irrelevant(self, np_rng):
        samples = [FakeSample(f"u{i % 3}", int(t), int(t) + 2)
                   for i, t in enumerate(np_rng.integers(0, 1000, size=30))]
        a_train, a_val = temporal_split(samples, ratio=0.8)
        shuffled = [samples[i] for i in np_rng.permutation(len(samples))]
        b_train, b_val = temporal_split(shuffled, ratio=0.8)
        key = lambda s: (s.user_id, s.start, s.end)
        assert sorted(map(key, a_train)) == sorted(map(key, b_train))
        assert sorted(map(key, a_val)) == sorted(map(key, b_val))

    def test_train_precedes_val_per_user(self, np_rng):
        samples = [FakeSample(f"u{i % 4}", int(t), int(t))
                   for i, t in enumerate(np_rng.integers(0, 10**6, size=40))]
        train_s, val_s = temporal_split(samples, ratio=0.7)
        for user in {s.user_id for s in val_s}:
            last_train = max(s.start for s in train_s if s.user_id == user)
            first_val = min(s.start for s in val_s if s.user_id == user)
            assert last_train <= first_val

    def test_matches_reference(self, np_rng):
        samples = [FakeSample(f"u{i % 3}", int(t), int(t) + 1)
                   for i, t in enumerate(np_rng.integers(0, 500, size=21))]
        got_train, got_val = temporal_split(samples, ratio=0.8)
        records = [(s.user_id, s.start, s.end, id(s)) for s in samples]
        want_train, want_val = temporal_split_ref(records, 0.8)
        assert [id(s) for s in got_train] == want_train
        assert [id(s) for s in got_val] == want_val

    def test_rejects_bad_ratio(self):
        with pytest.raises(ValueError):
            temporal_split([FakeSample("u", 0, 1)], ratio=1.0)


class TestMetrics:
    def test_hand_case(self):
        m = classification_metrics(np.array([1, 0, 1, 0]),
                                   np.array([1, 0, 0, 0]))
        assert m.accuracy == pytest.approx(0.75)
        assert m.f_score == pytest.approx(2.0 / 3.0)

    def test_no_positive_predictions_is_zero_f(self):
        m = classification_metrics(np.zeros(4, dtype=int),
                                   np.array([0, 1, 0, 1]))
        assert m.f_score == 0.0
        assert m.accuracy == 0.5


def two_view_dataset(np_rng, n, shift, seed_labels=None, task="cls"):
    """Sequences whose per-coordinate mean carries the class (or target)."""
    if seed_labels is None:
        labels = np_rng.integers(0, 2, size=n)
    else:
        labels = seed_labels
    dims = (2, 2)
    views = []
    for d in dims:
        seqs = []
        for i in range(n):
            t = int(np_rng.integers(4, 9))
            mean = shift * (2 * float(labels[i]) - 1.0)
            seqs.append(np_rng.normal(loc=mean, scale=0.5, size=(t, d)))
        views.append(SequenceBatch.from_sequences(seqs))
    if task == "cls":
        y = np.asarray(labels, dtype=np.int64)
    else:
        y = np.asarray(labels, dtype=np.float64)
    return EncodedDataset(views=views, labels=y)


def small_config(head, task=TASK_CLASSIFICATION):
    return ModelConfig(view_names=("a", "b"), view_dims=(2, 2), d_h=4, k=2,
                       head=head, task=task, dropout_fraction=0.1)


class TestEvaluate:
    def test_tied_logits_predict_class_zero(self, np_rng):
        model = init_model(small_config("fc"), Rng(0))
        for name, arr in named_params(model):
            if name.startswith("head."):
                arr[...] = 0.0
        ds = two_view_dataset(np_rng, 12, shift=0.5)
        m = evaluate(model, ds)
        # all logits are zero, so every prediction falls to class 0
        assert m.accuracy == pytest.approx(float(np.mean(ds.labels == 0)))

    def test_zero_regressor_rmse_is_label_norm(self, np_rng):
        model = init_model(small_config("fc", TASK_REGRESSION), Rng(0))
        for name, arr in named_params(model):
            if name.startswith("head."):
                arr[...] = 0.0
        labels = np.array([-1.0, 1.0, -1.0, 1.0])
        ds = two_view_dataset(np_rng, 4, shift=0.0, seed_labels=labels,
                              task="reg")
        m = evaluate(model, ds)
        assert m.rmse == pytest.approx(1.0, abs=1e-12)

    def test_rejects_empty_dataset(self, np_rng):
        model = init_model(small_config("fc"), Rng(0))
        ds = two_view_dataset(np_rng, 3, shift=0.5)
        empty = EncodedDataset(
            views=[SequenceBatch(values=v.values[:0], mask=v.mask[:0],
                                 lengths=v.lengths[:0]) for v in ds.views],
            labels=ds.labels[:0])
        with pytest.raises(ValueError):
            evaluate(model, empty)


class TestAblate:
    def test_zeroes_one_view_only(self, np_rng):
        ds = two_view_dataset(np_rng, 5, shift=0.5)
        ablated = ds.ablate_view(0)
        assert np.all(ablated.views[0].values == 0.0)
        np.testing.assert_array_equal(ablated.views[0].mask, ds.views[0].mask)
        np.testing.assert_array_equal(ablated.views[1].values,
                                      ds.views[1].values)
        assert ablated.labels is ds.labels


class TestTrain:
    def test_zero_learning_rate_freezes_params(self, np_rng):
        model = init_model(small_config("fm"), Rng(1))
        before = {n: a.copy() for n, a in named_params(model)}
        ds = two_view_dataset(np_rng, 20, shift=0.5)
        cfg = TrainConfig(epochs=3, batch_size=8, learning_rate=0.0, seed=0)
        train(model, ds, ds, cfg, Rng(2))
        for name, arr in named_params(model):
            np.testing.assert_array_equal(arr, before[name])

    def test_same_seed_same_run(self, np_rng):
        ds = two_view_dataset(np_rng, 30, shift=0.5)
        cfg = TrainConfig(epochs=5, batch_size=16, learning_rate=0.01, seed=0)

        def run():
            rng = Rng(7)
            model = init_model(small_config("mvm"), rng)
            hist = train(model, ds, ds, cfg, rng)
            return {n: a.copy() for n, a in named_params(model)}, hist

        p1, h1 = run()
        p2, h2 = run()
        for name in p1:
            np.testing.assert_array_equal(p1[name], p2[name])
        assert h1.columns == h2.columns

    def test_non_finite_loss_aborts_with_location(self, np_rng):
        ds = two_view_dataset(np_rng, 10, shift=0.5)
        ds.views[0].values[0, 0, 0] = np.nan
        model = init_model(small_config("fc"), Rng(0))
        cfg = TrainConfig(epochs=2, batch_size=4, learning_rate=0.01, seed=0)
        with pytest.raises(NumericsError, match="epoch"):
            train(model, ds, ds, cfg, Rng(1))

    def test_history_columns_per_task(self, np_rng):
        ds = two_view_dataset(np_rng, 10, shift=0.5)
        cfg = TrainConfig(epochs=2, batch_size=8, learning_rate=0.001, seed=0)
        rng = Rng(0)
        model = init_model(small_config("fc"), rng)
        hist = train(model, ds, ds, cfg, rng)
        assert set(hist.columns) == {"epoch", "train_loss", "val_accuracy",
                                     "val_f_score"}
        assert len(hist.final.epoch_losses) == 2

        reg = two_view_dataset(np_rng, 10, shift=0.0,
                               seed_labels=np.zeros(10), task="reg")
        rng = Rng(0)
        model = init_model(small_config("fc", TASK_REGRESSION), rng)
        hist = train(model, reg, reg, cfg, rng)
        assert set(hist.columns) == {"epoch", "train_loss", "val_rmse"}

    @pytest.mark.parametrize("head", ["fc", "fm", "mvm"])
    def test_learns_separable_classes(self, head):
        data_rng = np.random.default_rng(42)
        labels = np.array([i % 2 for i in range(200)])
        ds = two_view_dataset(data_rng, 200, shift=0.8, seed_labels=labels)
        val = two_view_dataset(data_rng, 60, shift=0.8,
                               seed_labels=np.array([i % 2 for i in range(60)]))
        rng = Rng(3)
        model = init_model(small_config(head), rng)
        cfg = TrainConfig(epochs=200, batch_size=64, learning_rate=0.005,
                          seed=0)
        hist = train(model, ds, val, cfg, rng)
        assert hist.final.accuracy >= 0.95, \
            f"{head} reached only {hist.final.accuracy}"
