"""Binary checkpoint format and model persistence."""

import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import array_shapes, arrays

from cnsf.checkpoint import MAGIC, Checkpoint, CheckpointFormatError, checkpoint_load, checkpoint_save
from cnsf.config import RunConfig
from cnsf.optim import Adam
from cnsf.pipeline import Separator


def toy_separator(mode="cnsf", seed=0):
    cfg = RunConfig(profile="toy", mode=mode, model_seed=seed, win_length=64, hop=32, n_fft=64)
    return Separator.from_config(cfg)


class TestFormat:
    def test_header_layout(self):
        buf = Checkpoint({"w": np.arange(3, dtype=np.float32)}, {"epoch": 2}).to_bytes()
        assert buf[:4] == MAGIC
        assert struct.unpack("<II", buf[4:12]) == (1, 1)
        (name_len,) = struct.unpack("<I", buf[12:16])
        assert buf[16 : 16 + name_len] == b"w"

    @settings(max_examples=40, deadline=None)
    @given(
        st.sampled_from([np.float32, np.float64, np.int64]),
        array_shapes(min_dims=0, max_dims=4, max_side=5),
        st.data(),
    )
    def test_round_trip_bit_exact(self, dtype, shape, data):
        arr = data.draw(arrays(dtype, shape))
        ckpt = Checkpoint({"a": arr, "b.c": np.zeros((0, 2), np.float32)}, {"k": [1, 2], "s": "x"})
        back = Checkpoint.from_bytes(ckpt.to_bytes())
        assert back.meta == ckpt.meta
        assert back.tensors["a"].dtype == arr.dtype and back.tensors["a"].shape == arr.shape
        assert back.tensors["a"].tobytes() == arr.tobytes()
        assert back.to_bytes() == ckpt.to_bytes()

    def test_unsupported_dtype(self):
        with pytest.raises(TypeError):
            Checkpoint({"x": np.zeros(2, np.complex64)}).to_bytes()

    def test_bad_magic(self):
        with pytest.raises(CheckpointFormatError, match="magic"):
            Checkpoint.from_bytes(b"NOPE" + bytes(12))

    def test_bad_version(self):
        buf = bytearray(Checkpoint({}).to_bytes())
        buf[4:8] = struct.pack("<I", 99)
        with pytest.raises(CheckpointFormatError, match="version 99"):
            Checkpoint.from_bytes(bytes(buf))

    def test_truncated(self):
        buf = Checkpoint({"w": np.ones((4, 4))}).to_bytes()
        for cut in (10, 20, len(buf) - 1):
            with pytest.raises(CheckpointFormatError):
                Checkpoint.from_bytes(buf[:cut])

    def test_trailing_bytes(self):
        with pytest.raises(CheckpointFormatError, match="trailing"):
            Checkpoint.from_bytes(Checkpoint({}).to_bytes() + b"\0")

    def test_unknown_dtype_code(self):
        buf = bytearray(Checkpoint({"w": np.ones(2, np.float32)}).to_bytes())
        buf[17] = 7  # dtype byte follows the one-byte name
        with pytest.raises(CheckpointFormatError, match="dtype code 7"):
            Checkpoint.from_bytes(bytes(buf))

    def test_corrupt_meta(self):
        buf = Checkpoint({}, {"a": 1}).to_bytes()
        with pytest.raises(CheckpointFormatError, match="metadata"):
            Checkpoint.from_bytes(buf[:-1] + b"{")


class TestModelPersistence:
    @pytest.mark.parametrize("mode", ["cnsf", "cnsf-mvdr"])
    def test_file_round_trip_bit_exact(self, tmp_path, mode):
        sep = toy_separator(mode, seed=3)
        opt = Adam(dict(sep.model.named_parameters()))
        ckpt = sep.to_checkpoint(opt, epoch=5)
        checkpoint_save(tmp_path / "m.ckpt", ckpt)
        back = checkpoint_load(tmp_path / "m.ckpt")
        assert back.to_bytes() == ckpt.to_bytes()
        loaded = Separator.from_checkpoint(back)
        a, b = sep.model.state_dict(), loaded.model.state_dict()
        assert a.keys() == b.keys()
        for k in a:
            assert np.asarray(a[k]).tobytes() == np.asarray(b[k]).tobytes(), k
        assert loaded.cfg == sep.cfg
        assert back.meta["epoch"] == 5

    def test_loaded_model_separates_identically(self, tmp_path, rng):
        sep = toy_separator()
        checkpoint_save(tmp_path / "m.ckpt", sep.to_checkpoint())
        mix = rng.standard_normal((2, 800)).astype(np.float32)
        np.testing.assert_array_equal(Separator.load(tmp_path / "m.ckpt").separate(mix, 60.0), sep.separate(mix, 60.0))

    def test_different_seeds_differ(self):
        a = toy_separator(seed=0).to_checkpoint().to_bytes()
        assert a != toy_separator(seed=1).to_checkpoint().to_bytes()
        assert a == toy_separator(seed=0).to_checkpoint().to_bytes()

    def test_optimizer_state_restores(self):
        sep = toy_separator()
        params = dict(sep.model.named_parameters())
        opt = Adam(params)
        opt.step({k: np.ones_like(v.data) for k, v in params.items()})
        ckpt = Checkpoint.from_bytes(sep.to_checkpoint(opt).to_bytes())
        fresh = Adam(dict(toy_separator().model.named_parameters()))
        fresh.load_state_arrays(ckpt.tensors, ckpt.meta["adam_step"])
        assert fresh.t == 1
        for k, v in opt.state_arrays().items():
            np.testing.assert_array_equal(fresh.state_arrays()[k], v)
