import hashlib
import json

import numpy as np
import pytest

from latefuse.checkpoint import (
    CheckpointError,
    load_checkpoint,
    save_checkpoint,
)
from latefuse.reports import (
    ReportError,
    read_json,
    read_metrics,
    read_series,
    sha256_file,
    write_json,
    write_manifest,
    write_metrics,
    write_series,
)


def arrays_fixture(np_rng):
    return {
        "vec": np_rng.normal(size=7),
        "mat": np_rng.normal(size=(3, 4)),
        "tensor": np_rng.normal(size=(2, 3, 2)),
    }


class TestCheckpoint:
    def test_round_trip_is_bit_exact(self, tmp_path, np_rng):
        meta = {"kind": "model-checkpoint", "nested": {"a": 1, "b": [1, 2]}}
        arrays = arrays_fixture(np_rng)
        p = tmp_path / "model.bin"
        save_checkpoint(p, meta, arrays)
        got_meta, got_arrays = load_checkpoint(p)
        assert got_meta == meta
        assert set(got_arrays) == set(arrays)
        for name in arrays:
            assert np.array_equal(got_arrays[name], arrays[name])
            assert got_arrays[name].dtype == np.float64

    def test_identical_saves_identical_bytes(self, tmp_path, np_rng):
        arrays = arrays_fixture(np_rng)
        p1, p2 = tmp_path / "a.bin", tmp_path / "b.bin"
        # same meta content with different key insertion order
        save_checkpoint(p1, {"x": 1, "y": 2}, arrays)
        save_checkpoint(p2, {"y": 2, "x": 1}, arrays)
        assert p1.read_bytes() == p2.read_bytes()

    def test_bad_magic(self, tmp_path):
        p = tmp_path / "model.bin"
        p.write_bytes(b"NOPE" + b"\x00" * 32)
        with pytest.raises(CheckpointError, match="magic"):
            load_checkpoint(p)

    def test_unsupported_version(self, tmp_path, np_rng):
        p = tmp_path / "model.bin"
        save_checkpoint(p, {}, arrays_fixture(np_rng))
        raw = bytearray(p.read_bytes())
        raw[4] = 42
        p.write_bytes(bytes(raw))
        with pytest.raises(CheckpointError, match="version"):
            load_checkpoint(p)

    def test_truncated_file(self, tmp_path, np_rng):
        p = tmp_path / "model.bin"
        save_checkpoint(p, {"k": 1}, arrays_fixture(np_rng))
        raw = p.read_bytes()
        p.write_bytes(raw[: len(raw) - 9])
        with pytest.raises(CheckpointError, match="truncated"):
            load_checkpoint(p)


class TestSeries:
    def test_round_trip_is_exact(self, tmp_path, np_rng):
        cols = {
            "epoch": [1.0, 2.0, 3.0],
            "train_loss": np_rng.normal(size=3).tolist(),
            "val_accuracy": [0.5, 2.0 / 3.0, 0.875],
        }
        p = tmp_path / "series.csv"
        write_series(p, cols)
        back = read_series(p)
        assert list(back) == list(cols)
        for name in cols:
            assert back[name] == cols[name]  # repr round-trips floats

    def test_missing_schema_line_rejected(self, tmp_path):
        p = tmp_path / "series.csv"
        p.write_text("epoch,loss\n1,0.5\n")
        with pytest.raises(ReportError, match="schema"):
            read_series(p)


class TestMetrics:
    def test_round_trip(self, tmp_path):
        payload = {"task": "hdrs", "final": {"accuracy": 0.9}}
        p = tmp_path / "metrics.json"
        write_metrics(p, payload)
        got = read_metrics(p)
        assert got["final"]["accuracy"] == 0.9
        assert got["schema_version"] == 1

    def test_wrong_schema_version_rejected(self, tmp_path):
        p = tmp_path / "metrics.json"
        write_json(p, {"schema_version": 99})
        with pytest.raises(ReportError, match="schema"):
            read_metrics(p)


class TestManifest:
    def test_hashes_and_shape(self, tmp_path):
        data = tmp_path / "input.csv"
        data.write_bytes(b"user_id\n")
        out = tmp_path / "manifest.json"
        write_manifest(out, command="train", config_echo={"seed": 3}, seed=3,
                       inputs={"events": data},
                       outputs=[tmp_path / "x" / "metrics.json"])
        m = read_json(out)
        want = hashlib.sha256(b"user_id\n").hexdigest()
        assert m["inputs"]["events"]["sha256"] == want == sha256_file(data)
        assert m["outputs"] == ["metrics.json"]
        assert m["command"] == "train"

    def test_json_bytes_are_key_sorted(self, tmp_path):
        p = tmp_path / "a.json"
        write_json(p, {"b": 1, "a": 2})
        assert json.loads(p.read_text()) == {"a": 2, "b": 1}
        assert p.read_text().index('"a"') < p.read_text().index('"b"')
