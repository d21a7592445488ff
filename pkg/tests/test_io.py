import json

import numpy as np
import pytest

from scprune import io, nn, zoo
from scprune.errors import FormatError, InputError


def sample_model():
    model = zoo.toy_residual(0)
    # add a batchnorm-bearing variant for full tag coverage
    bn = nn.BatchNormLayer(
        "bn",
        np.array([1.5] * 8, dtype=np.float32),
        np.array([0.1] * 8, dtype=np.float32),
        np.array([0.0] * 8, dtype=np.float32),
        np.array([1.0] * 8, dtype=np.float32),
        2.0**-16,  # exactly representable in the float32 on-disk encoding
    )
    layers = model.layers[:2] + (bn,) + model.layers[2:]
    return nn.ModelGraph(layers, model.input_shape, model.blocks)


class TestModelRoundTrip:
    def test_all_layer_types_survive(self, tmp_path):
        model = sample_model()
        path = tmp_path / "model.scpm"
        io.save_model(model, path)
        loaded = io.load_model(path)
        assert nn.models_equal(loaded, model)
        assert loaded.input_shape == model.input_shape
        assert loaded.blocks == model.blocks

    def test_save_is_byte_deterministic(self, tmp_path):
        model = sample_model()
        a, b = tmp_path / "a.scpm", tmp_path / "b.scpm"
        io.save_model(model, a)
        io.save_model(model, b)
        assert a.read_bytes() == b.read_bytes()

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.scpm"
        path.write_bytes(b"XXXX" + b"\x00" * 16)
        with pytest.raises(FormatError, match="bad magic"):
            io.load_model(path)

    def test_truncated_file_names_layer(self, tmp_path):
        model = zoo.random_conv_net(1)
        path = tmp_path / "model.scpm"
        io.save_model(model, path)
        data = path.read_bytes()
        clipped = tmp_path / "clipped.scpm"
        clipped.write_bytes(data[: len(data) - 10])
        with pytest.raises(FormatError, match="truncated"):
            io.load_model(clipped)

    def test_wrong_blob_size_names_layer(self, tmp_path):
        w = np.ones((1, 1, 1, 1), dtype=np.float32)
        model = nn.ModelGraph(
            (nn.ConvLayer("only", w, np.zeros(1, dtype=np.float32)),), (1, 2, 2)
        )
        path = tmp_path / "model.scpm"
        io.save_model(model, path)
        data = bytearray(path.read_bytes())
        # header: magic 4 + version 4 + rank 4 + 3 dims 12 + layer count 4,
        # then name (2 + 4) + tag 1 + six u32 params 24 = byte 59 starts the
        # weight blob's u64 element count; corrupt its low byte
        offset = 4 + 4 + 4 + 12 + 4 + (2 + len("only")) + 1 + 24
        data[offset] = 9
        bad = tmp_path / "bad.scpm"
        bad.write_bytes(bytes(data))
        with pytest.raises(FormatError, match="'only'"):
            io.load_model(bad)

    def test_unsupported_version(self, tmp_path):
        model = zoo.random_conv_net(2)
        path = tmp_path / "model.scpm"
        io.save_model(model, path)
        data = bytearray(path.read_bytes())
        data[4] = 99
        path.write_bytes(bytes(data))
        with pytest.raises(FormatError, match="version"):
            io.load_model(path)


class TestTensorRoundTrip:
    def test_values_and_shape(self, tmp_path):
        t = np.random.default_rng(0).standard_normal((3, 4, 5)).astype(np.float32)
        path = tmp_path / "t.sctn"
        io.save_tensor(t, path)
        loaded = io.load_tensor(path)
        assert loaded.shape == t.shape
        assert np.array_equal(loaded, t)

    def test_scalar_rank_zero(self, tmp_path):
        path = tmp_path / "s.sctn"
        io.save_tensor(np.float32(2.5), path)
        assert io.load_tensor(path) == np.float32(2.5)

    def test_trailing_bytes_rejected(self, tmp_path):
        t = np.zeros((2, 2), dtype=np.float32)
        path = tmp_path / "t.sctn"
        io.save_tensor(t, path)
        path.write_bytes(path.read_bytes() + b"\x00")
        with pytest.raises(FormatError, match="trailing"):
            io.load_tensor(path)

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "t.sctn"
        path.write_bytes(b"NOPE" + b"\x00" * 8)
        with pytest.raises(FormatError, match="bad magic"):
            io.load_tensor(path)


class TestCalibration:
    def _write_dir(self, tmp_path, n, shape=(3, 4, 4), seed=0):
        rng = np.random.default_rng(seed)
        d = tmp_path / "calib"
        d.mkdir()
        for i in range(n):
            io.save_tensor(
                rng.standard_normal(shape).astype(np.float32), d / f"img{i:03d}.sctn"
            )
        return d

    def test_lexicographic_order(self, tmp_path):
        d = self._write_dir(tmp_path, 5)
        names, tensors = io.load_calibration(d)
        assert names == [f"img{i:03d}.sctn" for i in range(5)]
        assert len(tensors) == 5

    def test_limit_subsample_deterministic(self, tmp_path):
        d = self._write_dir(tmp_path, 10)
        names_a, _ = io.load_calibration(d, limit=4, seed=7)
        names_b, _ = io.load_calibration(d, limit=4, seed=7)
        assert names_a == names_b
        assert len(names_a) == 4
        assert names_a == sorted(names_a)

    def test_mixed_shapes_name_offender(self, tmp_path):
        d = self._write_dir(tmp_path, 2)
        io.save_tensor(np.zeros((1, 2, 2), dtype=np.float32), d / "zzz.sctn")
        with pytest.raises(InputError, match="zzz.sctn"):
            io.load_calibration(d)

    def test_missing_directory(self, tmp_path):
        with pytest.raises(InputError, match="not found"):
            io.load_calibration(tmp_path / "nope")

    def test_empty_directory(self, tmp_path):
        d = tmp_path / "empty"
        d.mkdir()
        with pytest.raises(InputError, match="no .sctn"):
            io.load_calibration(d)

    def test_non_tensor_files_ignored(self, tmp_path):
        d = self._write_dir(tmp_path, 2)
        (d / "notes.txt").write_text("ignore me")
        names, _ = io.load_calibration(d)
        assert names == ["img000.sctn", "img001.sctn"]


class TestLabelsAndEval:
    def _identity_head(self, n):
        # fc that copies its n inputs straight to n logits
        return nn.ModelGraph(
            (nn.FcLayer("fc", np.eye(n, dtype=np.float32), np.zeros(n, np.float32)),),
            (n, 1, 1),
        )

    def test_top1_counting_matches_manual_oracle(self):
        model = self._identity_head(3)
        tensors = [
            np.array([[[0.0]], [[2.0]], [[1.0]]], dtype=np.float32),  # argmax 1
            np.array([[[5.0]], [[2.0]], [[1.0]]], dtype=np.float32),  # argmax 0
            np.array([[[0.0]], [[0.0]], [[3.0]]], dtype=np.float32),  # argmax 2
        ]
        assert io.evaluate_topk(model, tensors, [1, 0, 2], 1) == 1.0
        assert io.evaluate_topk(model, tensors, [0, 0, 2], 1) == pytest.approx(2 / 3)

    def test_topk_equals_class_count_is_always_one(self):
        model = self._identity_head(4)
        tensors = [np.zeros((4, 1, 1), dtype=np.float32) for _ in range(3)]
        assert io.evaluate_topk(model, tensors, [3, 1, 2], 4) == 1.0

    def test_tie_breaks_to_lower_class_index(self):
        model = self._identity_head(2)
        x = np.array([[[1.0]], [[1.0]]], dtype=np.float32)
        assert io.evaluate_topk(model, [x], [0], 1) == 1.0
        assert io.evaluate_topk(model, [x], [1], 1) == 0.0

    def test_labels_round_trip(self, tmp_path):
        path = tmp_path / "labels.json"
        path.write_text(json.dumps({"a.sctn": 2, "b.sctn": 0}))
        assert io.load_labels(path) == {"a.sctn": 2, "b.sctn": 0}

    def test_labels_must_be_object(self, tmp_path):
        path = tmp_path / "labels.json"
        path.write_text("[1, 2]")
        with pytest.raises(InputError):
            io.load_labels(path)

    def test_labelled_dataset_missing_label(self, tmp_path):
        d = tmp_path / "calib"
        d.mkdir()
        io.save_tensor(np.zeros((1, 1, 1), dtype=np.float32), d / "x.sctn")
        labels = tmp_path / "labels.json"
        labels.write_text("{}")
        with pytest.raises(InputError, match="x.sctn"):
            io.labelled_dataset(d, labels)


class TestReports:
    def test_round_trip(self, tmp_path):
        doc = {"b": [1, 2.5], "a": {"nested": True, "x": 0}}
        path = tmp_path / "report.json"
        io.save_report(doc, path)
        assert io.load_report(path) == doc

    def test_sorted_keys_and_stable_bytes(self, tmp_path):
        doc = {"zeta": 1, "alpha": 2}
        a, b = tmp_path / "a.json", tmp_path / "b.json"
        io.save_report(doc, a)
        io.save_report({"alpha": 2, "zeta": 1}, b)
        assert a.read_bytes() == b.read_bytes()
        assert a.read_text().index('"alpha"') < a.read_text().index('"zeta"')

    def test_non_finite_rejected(self, tmp_path):
        with pytest.raises(FormatError):
            io.save_report({"x": float("nan")}, tmp_path / "r.json")
        with pytest.raises(FormatError):
            io.save_report({"x": [1.0, float("inf")]}, tmp_path / "r.json")
