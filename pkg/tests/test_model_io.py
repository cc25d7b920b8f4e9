"""Binary model container: round trips, validation, atomicity."""

import json
import struct

import numpy as np
import pytest

from spikeconv.classifier import LinearModel
from spikeconv.config import parse_config
from spikeconv.errors import ModelFormatError, UnsupportedVersionError
from spikeconv.model_io import MAGIC, VERSION, TrainedModel, load_model, save_model


def small_config():
    return parse_config(
        {
            "seed": 11,
            "dataset": {"kind": "synthetic", "train_per_class": 2, "test_per_class": 1},
            "layers": [
                {"kind": "conv", "maps": 3, "window": [3, 3], "threshold": 4.0},
                {"kind": "pool", "window": [2, 2], "stride": 2},
                {"kind": "conv", "maps": 5, "window": [2, 2], "threshold": 2.0},
                {"kind": "global_pool"},
            ],
        }
    )


@pytest.fixture
def model():
    rng = np.random.default_rng(3)
    cfg = small_config()
    weights = [
        rng.uniform(0, 1, size=(3, 2, 3, 3)).astype(np.float32),
        rng.uniform(0, 1, size=(5, 3, 2, 2)).astype(np.float32),
    ]
    clf = LinearModel(
        classes=np.arange(10),
        weights=rng.normal(size=(10, 5)).astype(np.float32),
        bias=rng.normal(size=10).astype(np.float32),
        feature_mean=rng.normal(size=5).astype(np.float32),
        feature_scale=rng.uniform(0.5, 2.0, size=5).astype(np.float32),
    )
    return TrainedModel(
        config=cfg,
        conv_weights=weights,
        classifier=clf,
        provenance={"seed": 11, "warnings": [], "layers": []},
        trajectories=[np.linspace(0.16, 0.01, 40, dtype=np.float32)],
    )


class TestRoundTrip:
    def test_tensors_bit_identical(self, model, tmp_path):
        p = tmp_path / "m.bin"
        save_model(model, p)
        back = load_model(p)
        assert len(back.conv_weights) == 2
        for a, b in zip(model.conv_weights, back.conv_weights):
            assert a.dtype == b.dtype == np.float32
            assert a.tobytes() == b.tobytes()
        assert back.classifier.weights.tobytes() == model.classifier.weights.tobytes()
        assert back.classifier.bias.tobytes() == model.classifier.bias.tobytes()
        assert np.array_equal(back.classifier.classes, model.classifier.classes)
        assert back.trajectories[0].tobytes() == model.trajectories[0].tobytes()

    def test_config_and_provenance_survive(self, model, tmp_path):
        p = tmp_path / "m.bin"
        save_model(model, p)
        back = load_model(p)
        assert back.config == model.config
        assert back.provenance == model.provenance

    def test_same_model_same_bytes(self, model, tmp_path):
        a, b = tmp_path / "a.bin", tmp_path / "b.bin"
        save_model(model, a)
        save_model(model, b)
        assert a.read_bytes() == b.read_bytes()

    def test_no_classifier_round_trips(self, model, tmp_path):
        model.classifier = None
        p = tmp_path / "m.bin"
        save_model(model, p)
        assert load_model(p).classifier is None

    def test_float64_weights_refused(self, model, tmp_path):
        model.conv_weights[0] = model.conv_weights[0].astype(np.float64)
        with pytest.raises(ModelFormatError, match="float32"):
            save_model(model, tmp_path / "m.bin")


class TestFormatErrors:
    def test_missing_file(self, tmp_path):
        with pytest.raises(ModelFormatError, match="no such model"):
            load_model(tmp_path / "absent.bin")

    def test_too_short(self, tmp_path):
        p = tmp_path / "m.bin"
        p.write_bytes(b"SPK")
        with pytest.raises(ModelFormatError, match="too short"):
            load_model(p)

    def test_bad_magic(self, model, tmp_path):
        p = tmp_path / "m.bin"
        save_model(model, p)
        raw = bytearray(p.read_bytes())
        raw[0] ^= 0xFF
        p.write_bytes(raw)
        with pytest.raises(ModelFormatError, match="bad magic"):
            load_model(p)

    def test_unsupported_version(self, model, tmp_path):
        p = tmp_path / "m.bin"
        save_model(model, p)
        raw = bytearray(p.read_bytes())
        raw[len(MAGIC) : len(MAGIC) + 4] = struct.pack("<I", VERSION + 9)
        p.write_bytes(raw)
        with pytest.raises(UnsupportedVersionError, match=str(VERSION + 9)):
            load_model(p)

    def test_truncated_tensor(self, model, tmp_path):
        p = tmp_path / "m.bin"
        save_model(model, p)
        raw = p.read_bytes()
        p.write_bytes(raw[:-5])
        with pytest.raises(ModelFormatError, match="truncated"):
            load_model(p)

    def test_trailing_garbage(self, model, tmp_path):
        p = tmp_path / "m.bin"
        save_model(model, p)
        p.write_bytes(p.read_bytes() + b"\x00\x00\x00\x00")
        with pytest.raises(ModelFormatError, match="trailing"):
            load_model(p)

    def test_corrupt_header_json(self, model, tmp_path):
        p = tmp_path / "m.bin"
        save_model(model, p)
        raw = bytearray(p.read_bytes())
        (hlen,) = struct.unpack_from("<Q", raw, len(MAGIC) + 4)
        raw[len(MAGIC) + 12] = ord("X")
        p.write_bytes(raw)
        with pytest.raises(ModelFormatError, match="corrupt header"):
            load_model(p)

    def test_conv_tensor_count_must_match_config(self, model, tmp_path):
        p = tmp_path / "m.bin"
        model.conv_weights = model.conv_weights[:1]
        save_model(model, p)
        with pytest.raises(ModelFormatError, match="conv weight tensors"):
            load_model(p)

    def test_conv_tensor_shape_must_match_layer(self, model, tmp_path):
        p = tmp_path / "m.bin"
        model.conv_weights[1] = np.zeros((5, 3, 4, 4), dtype=np.float32)
        save_model(model, p)
        with pytest.raises(ModelFormatError, match="does not match layer"):
            load_model(p)

    def test_classifier_tensor_missing(self, model, tmp_path):
        p = tmp_path / "m.bin"
        save_model(model, p)
        raw = bytearray(p.read_bytes())
        (hlen,) = struct.unpack_from("<Q", raw, len(MAGIC) + 4)
        start = len(MAGIC) + 12
        header = json.loads(raw[start : start + hlen].decode())
        kept = [t for t in header["tensors"] if t["name"] != "classifier/bias"]
        dropped = next(t for t in header["tensors"] if t["name"] == "classifier/bias")
        header["tensors"] = kept
        blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
        nbytes = 4 * int(np.prod(dropped["shape"]))
        # bias rode between weights and feature_mean; cut its bytes too
        names = [t["name"] for t in json.loads(raw[start : start + hlen].decode())["tensors"]]
        offset = start + hlen
        for name in names:
            t = next(x for x in json.loads(raw[start : start + hlen].decode())["tensors"] if x["name"] == name)
            size = 4 * int(np.prod(t["shape"]))
            if name == "classifier/bias":
                payload_start = offset
                payload_end = offset + size
                break
            offset += size
        body = raw[start + hlen : payload_start] + raw[payload_end:]
        out = bytearray()
        out += MAGIC
        out += struct.pack("<I", VERSION)
        out += struct.pack("<Q", len(blob))
        out += blob
        out += body
        p.write_bytes(out)
        with pytest.raises(ModelFormatError, match="classifier/bias"):
            load_model(p)


class TestAtomicity:
    def test_failed_publish_leaves_no_file(self, model, tmp_path, monkeypatch):
        import spikeconv.model_io as mio

        p = tmp_path / "m.bin"

        def explode(src, dst):
            raise OSError("simulated rename failure")

        monkeypatch.setattr(mio.os, "replace", explode)
        with pytest.raises(OSError, match="simulated"):
            save_model(model, p)
        assert not p.exists()
        assert list(tmp_path.iterdir()) == []

    def test_failure_before_write_leaves_no_file(self, model, tmp_path, monkeypatch):
        p = tmp_path / "m.bin"
        monkeypatch.setattr(TrainedModel, "freeze_check", lambda self: None)
        model.conv_weights[0] = object()
        with pytest.raises(TypeError):
            save_model(model, p)
        assert not p.exists()
        assert list(tmp_path.iterdir()) == []

    def test_overwrite_is_atomic_replace(self, model, tmp_path):
        p = tmp_path / "m.bin"
        save_model(model, p)
        first = p.read_bytes()
        model.provenance = {"seed": 12, "warnings": [], "layers": []}
        save_model(model, p)
        assert p.read_bytes() != first
        assert list(tmp_path.iterdir()) == [p]
