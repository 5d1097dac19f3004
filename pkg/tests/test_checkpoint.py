import struct

import numpy as np
import pytest

from eegshape import encoder, gan, pipeline
from eegshape.checkpoint import (MAGIC, Checkpoint, load_checkpoint, parse_tensor, read_tensor, save_checkpoint,
                                 tensor_bytes, write_tensor)
from eegshape.eeg import ChannelStats
from eegshape.errors import CheckpointError


class TestTensorFile:
    def test_layout(self):
        arr = np.arange(6, dtype=np.float32).reshape(2, 3)
        data = tensor_bytes(arr)
        assert data[:8] == b"EEG2SHP1"
        assert data[8:20] == struct.pack("<III", 2, 2, 3)
        assert data[20:] == struct.pack("<6f", *range(6))

    def test_scalar_and_vector(self):
        for arr in (np.float32(2.5), np.array([1.0, -2.0], np.float32)):
            back = parse_tensor(tensor_bytes(arr))
            assert back.shape == np.shape(arr) and back.tobytes() == np.asarray(arr).tobytes()

    def test_round_trip_bit_exact(self, tmp_path):
        rng = np.random.default_rng(0)
        arr = rng.normal(size=(3, 3, 4, 5)).astype(np.float32)
        arr[0, 0, 0, 0] = -0.0
        write_tensor(tmp_path / "t.bin", arr)
        assert read_tensor(tmp_path / "t.bin").tobytes() == arr.tobytes()

    def test_big_endian_input_stored_little_endian(self):
        arr = np.array([1.5, 2.5], dtype=">f4")
        assert tensor_bytes(arr)[-8:] == struct.pack("<2f", 1.5, 2.5)

    def test_bad_magic(self):
        data = b"XXXXXXXX" + tensor_bytes(np.zeros(2, np.float32))[8:]
        with pytest.raises(CheckpointError, match="magic"):
            parse_tensor(data)

    def test_payload_length_mismatch(self):
        with pytest.raises(CheckpointError, match="payload"):
            parse_tensor(tensor_bytes(np.zeros(4, np.float32))[:-4])

    def test_truncated_header(self):
        with pytest.raises(CheckpointError):
            parse_tensor(MAGIC + b"\x02\x00")

    def test_non_finite_refused(self):
        with pytest.raises(CheckpointError):
            tensor_bytes(np.array([np.nan], np.float32))


class TestDirectory:
    def _ckpt(self):
        return Checkpoint("encoder", 7, {"a.w": np.ones((2, 2), np.float32), "b": np.zeros(3, np.float32)},
                          {"split_seed": "7"})

    def test_manifest_contents(self, tmp_path):
        save_checkpoint(tmp_path / "c", self._ckpt())
        lines = (tmp_path / "c" / "manifest.txt").read_text().splitlines()
        assert lines[:3] == ["format_version=1", "module=encoder", "created_from_seed=7"]
        assert "tensor.a.w=2,2" in lines and "tensor.b=3" in lines and "meta.split_seed=7" in lines
        assert sorted(p.name for p in (tmp_path / "c").iterdir()) == ["a.w.bin", "b.bin", "manifest.txt"]

    def test_round_trip(self, tmp_path):
        ck = self._ckpt()
        save_checkpoint(tmp_path / "c", ck)
        back = load_checkpoint(tmp_path / "c", module="encoder")
        assert (back.module, back.seed, back.meta) == ("encoder", 7, {"split_seed": "7"})
        assert all(back.tensors[k].tobytes() == ck.tensors[k].tobytes() for k in ck.tensors)

    def test_wrong_module(self, tmp_path):
        save_checkpoint(tmp_path / "c", self._ckpt())
        with pytest.raises(CheckpointError, match="expected 'gan'"):
            load_checkpoint(tmp_path / "c", module="gan")

    def test_missing_directory(self, tmp_path):
        with pytest.raises(CheckpointError, match="manifest"):
            load_checkpoint(tmp_path / "nope")

    def test_missing_tensor_file(self, tmp_path):
        save_checkpoint(tmp_path / "c", self._ckpt())
        (tmp_path / "c" / "b.bin").unlink()
        with pytest.raises(CheckpointError, match="b.bin"):
            load_checkpoint(tmp_path / "c")

    def test_manifest_dims_disagree(self, tmp_path):
        save_checkpoint(tmp_path / "c", self._ckpt())
        m = tmp_path / "c" / "manifest.txt"
        m.write_text(m.read_text().replace("tensor.b=3", "tensor.b=4"))
        with pytest.raises(CheckpointError, match="disagree"):
            load_checkpoint(tmp_path / "c")

    def test_unsupported_version(self, tmp_path):
        save_checkpoint(tmp_path / "c", self._ckpt())
        m = tmp_path / "c" / "manifest.txt"
        m.write_text(m.read_text().replace("format_version=1", "format_version=2"))
        with pytest.raises(CheckpointError, match="format_version"):
            load_checkpoint(tmp_path / "c")

    def test_saving_twice_is_byte_identical(self, tmp_path):
        save_checkpoint(tmp_path / "a", self._ckpt())
        save_checkpoint(tmp_path / "b", self._ckpt())
        for f in (tmp_path / "a").iterdir():
            assert f.read_bytes() == (tmp_path / "b" / f.name).read_bytes()


class TestModelCheckpoints:
    def test_encoder_round_trip(self, tmp_path):
        model = pipeline.TrainedEncoder(encoder.init_encoder(3), ChannelStats(np.arange(14.0), np.ones(14)), 5, 3)
        pipeline.save_encoder(tmp_path / "e", model)
        back = pipeline.load_encoder(tmp_path / "e")
        assert back.split_seed == 5 and back.seed == 3
        np.testing.assert_array_equal(back.stats.mean, np.arange(14.0))
        assert all(back.params[k].tobytes() == model.params[k].tobytes() for k in model.params)

    def test_gan_round_trip(self, tmp_path):
        g, d = gan.init_generator(1), gan.init_discriminator(2)
        cfg = gan.GanTrainConfig(mode="cgan", lambda_align=0.001, seed=9)
        pipeline.save_gan(tmp_path / "g", g, d, cfg)
        g2, d2, cfg2 = pipeline.load_gan(tmp_path / "g")
        assert (cfg2.mode, cfg2.lambda_align, cfg2.seed) == ("cgan", 0.001, 9)
        assert all(g2[k].tobytes() == g[k].tobytes() for k in g)
        assert all(d2[k].tobytes() == d[k].tobytes() for k in d)

    def test_encoder_checkpoint_is_not_a_gan(self, tmp_path):
        model = pipeline.TrainedEncoder(encoder.init_encoder(3), ChannelStats(np.zeros(14), np.ones(14)), 5, 3)
        pipeline.save_encoder(tmp_path / "e", model)
        with pytest.raises(CheckpointError):
            pipeline.load_gan(tmp_path / "e")
