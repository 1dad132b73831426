import numpy as np
import pytest

from latefuse.experiment import (
    RunConfig,
    eval_checkpoint,
    grid_run,
    load_run_checkpoint,
    prepare_data,
    save_run,
    train_run,
)
from latefuse.pipeline import read_events, read_labels, run_ingest, write_cache
from latefuse.reports import read_json, read_metrics, read_series
from latefuse.synth import SynthConfig, generate


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    """Small ingested corpus shared by the tests in this module."""
    root = tmp_path_factory.mktemp("corpus")
    cfg = SynthConfig(n_users=4, sessions_per_user=12, class_signal=0.9,
                      interaction_fraction=0.0, seed=101,
                      mean_len_alph=20, mean_len_special=14,
                      mean_len_accel=30, length_sigma=0.3)
    generate(cfg, root / "events.csv", root / "labels.csv")
    result = run_ingest(read_events(root / "events.csv"),
                        read_labels(root / "labels.csv"))
    cache = root / "sessions.bin"
    write_cache(cache, result.samples)
    return result.samples, cache


def tiny_run(**kw):
    base = dict(head="fm", task="hdrs", d_h=3, k=2, epochs=12, batch_size=64,
                learning_rate=0.01, dropout_fraction=0.1, seed=5)
    base.update(kw)
    return RunConfig(**base)


class TestRunConfig:
    def test_dict_round_trip(self):
        cfg = tiny_run(views=("alph", "accel"))
        assert RunConfig.from_dict(cfg.to_dict()) == cfg

    def test_unknown_view_is_named(self):
        with pytest.raises(ValueError, match="gyroscope"):
            tiny_run(views=("alph", "gyroscope"))

    def test_mvm_needs_two_views(self):
        with pytest.raises(ValueError):
            tiny_run(head="mvm", views=("alph",))

    def test_task_mapping(self):
        assert tiny_run(task="hdrs").model_task == "classification"
        assert tiny_run(task="ymrs").model_task == "regression"


class TestPrepareData:
    def test_split_and_normalization(self, corpus):
        samples, _ = corpus
        train_ds, val_ds, norm = prepare_data(samples, tiny_run())
        assert train_ds.n + val_ds.n == len(samples)
        assert train_ds.n > val_ds.n
        # normalizer was fitted on train rows only: train alph columns are
        # standard, val columns in general are not exactly
        alph = np.concatenate([
            train_ds.views[0].values[i, :train_ds.views[0].lengths[i]]
            for i in range(train_ds.n)
        ])
        np.testing.assert_allclose(alph.mean(axis=0), 0.0, atol=1e-9)
        np.testing.assert_allclose(alph.std(axis=0), 1.0, atol=1e-9)

    def test_view_subset(self, corpus):
        samples, _ = corpus
        cfg = tiny_run(views=("alph", "accel"))
        train_ds, _, _ = prepare_data(samples, cfg)
        assert len(train_ds.views) == 2
        assert train_ds.views[0].values.shape[2] == 4
        assert train_ds.views[1].values.shape[2] == 3

    def test_regression_labels_are_float(self, corpus):
        samples, _ = corpus
        train_ds, _, _ = prepare_data(samples, tiny_run(task="ymrs"))
        assert train_ds.labels.dtype == np.float64


class TestTrainAndSave:
    def test_run_writes_artifacts(self, corpus, tmp_path):
        samples, _ = corpus
        result = train_run(samples, tiny_run())
        paths = save_run(tmp_path / "run", result)
        series = read_series(paths["series"])
        assert len(series["epoch"]) == 12
        metrics = read_metrics(paths["metrics"])
        assert metrics["task"] == "hdrs"
        assert metrics["epochs_run"] == 12
        assert 0.0 <= metrics["final"]["accuracy"] <= 1.0
        cfg, model, norm = load_run_checkpoint(paths["checkpoint"])
        assert cfg == result.config
        assert norm.alph_mean is not None

    def test_reruns_are_byte_identical(self, corpus, tmp_path):
        samples, _ = corpus
        outs = []
        for name in ("a", "b"):
            result = train_run(samples, tiny_run())
            outs.append(save_run(tmp_path / name, result))
        for key in ("checkpoint", "metrics", "series"):
            b1 = open(outs[0][key], "rb").read()
            b2 = open(outs[1][key], "rb").read()
            assert b1 == b2, f"{key} differs between identical runs"

    def test_eval_checkpoint_reproduces_final_metrics(self, corpus, tmp_path):
        samples, cache = corpus
        result = train_run(samples, tiny_run())
        paths = save_run(tmp_path / "run", result)
        metrics, cfg = eval_checkpoint(paths["checkpoint"], cache)
        assert metrics.accuracy == result.final.accuracy
        assert metrics.f_score == result.final.f_score

    def test_ablation_rejects_unknown_view(self, corpus, tmp_path):
        samples, cache = corpus
        result = train_run(samples, tiny_run(views=("alph", "special")))
        paths = save_run(tmp_path / "run", result)
        with pytest.raises(ValueError, match="alph"):
            eval_checkpoint(paths["checkpoint"], cache, ablate_view="accel")

    def test_ablation_changes_the_dataset_not_the_model(self, corpus, tmp_path):
        samples, cache = corpus
        result = train_run(samples, tiny_run())
        paths = save_run(tmp_path / "run", result)
        whole, _ = eval_checkpoint(paths["checkpoint"], cache)
        again, _ = eval_checkpoint(paths["checkpoint"], cache,
                                   ablate_view="alph")
        # the ablated run must not corrupt later evaluations
        third, _ = eval_checkpoint(paths["checkpoint"], cache)
        assert whole.accuracy == third.accuracy
        assert isinstance(again.accuracy, float)


class TestGrid:
    def test_tiny_grid_summary(self, corpus, tmp_path):
        samples, _ = corpus
        base = tiny_run(epochs=4)
        summary = grid_run(samples, base, tmp_path / "grid", grid=(2, 3))
        assert len(summary["cells"]) == 4
        assert summary["selected"] in summary["cells"]
        seeds = {c["seed"] for c in summary["cells"]}
        assert len(seeds) == 4  # each cell gets its own derived seed
        on_disk = read_metrics(tmp_path / "grid" / "summary.json")
        assert on_disk["cells"] == summary["cells"]
        for c in summary["cells"]:
            cell_metrics = read_metrics(
                tmp_path / "grid" / c["dir"] / "metrics.json")
            assert cell_metrics["final"] == c["final"]
