import struct

import numpy as np
import pytest

from app.core.cgd import CGNet
from app.core.checkpoint import MAGIC, decode_checkpoint, encode_checkpoint, load_checkpoint, read_checkpoint, save_checkpoint
from app.core.tensor import ParameterSet
from app.exceptions.custom_exceptions import CheckpointError


class TestCheckpointFormat:
    def test_record_layout(self):
        data = encode_checkpoint({"w": np.array([[1.0, 2.0, 3.0]])})
        assert data[:4] == MAGIC
        (name_len,) = struct.unpack("<I", data[4:8])
        assert data[8 : 8 + name_len] == b"w"
        rank, h, w = struct.unpack("<III", data[9:21])
        assert (rank, h, w) == (2, 1, 3)
        assert struct.unpack("<3d", data[21:45]) == (1.0, 2.0, 3.0)
        assert len(data) == 45

    def test_scalar_parameter(self):
        arrays = decode_checkpoint(encode_checkpoint({"s": np.array(2.5)}))
        assert arrays["s"].shape == ()
        assert float(arrays["s"]) == 2.5

    def test_order_preserved(self):
        arrays = decode_checkpoint(encode_checkpoint({"b": np.zeros(1), "a": np.ones(2)}))
        assert list(arrays) == ["b", "a"]

    def test_bad_magic(self):
        with pytest.raises(CheckpointError):
            decode_checkpoint(b"CGT2" + encode_checkpoint({"w": np.zeros(2)})[4:])

    def test_truncated(self):
        data = encode_checkpoint({"w": np.zeros(4)})
        with pytest.raises(CheckpointError):
            decode_checkpoint(data[:-3])

    def test_unreadable_file(self, tmp_path):
        with pytest.raises(CheckpointError):
            read_checkpoint(str(tmp_path / "missing.cgt"))


class TestModelCheckpoint:
    def test_restores_every_parameter(self, tmp_path, tiny_encoder, tiny_model):
        trained = CGNet(tiny_encoder, tiny_model, seed=1)
        for param in trained.params.trainable():
            param.tensor.values = param.tensor.values + 0.25
        path = save_checkpoint(trained.params, str(tmp_path / "model.cgt"))

        fresh = CGNet(tiny_encoder, tiny_model, seed=2)
        load_checkpoint(fresh.params, path)
        for a, b in zip(trained.params, fresh.params):
            assert a.name == b.name
            np.testing.assert_array_equal(a.tensor.values, b.tensor.values)
        assert fresh.params.trainable()[0].tensor.requires_grad

    def test_name_mismatch(self, tmp_path):
        params = ParameterSet()
        params.zeros("a", (2,))
        path = save_checkpoint(params, str(tmp_path / "a.cgt"))
        other = ParameterSet()
        other.zeros("b", (2,))
        with pytest.raises(CheckpointError):
            load_checkpoint(other, path)

    def test_shape_mismatch(self, tmp_path):
        params = ParameterSet()
        params.zeros("a", (2,))
        path = save_checkpoint(params, str(tmp_path / "a.cgt"))
        other = ParameterSet()
        other.zeros("a", (3,))
        with pytest.raises(CheckpointError):
            load_checkpoint(other, path)
