"""Binary tensor / checkpoint format: round trips, byte layout, error paths."""

import io
import struct

import numpy as np
import pytest

from dualdet.numerics.tensorio import (FormatError, load_checkpoint,
                                       load_tensor, read_tensor,
                                       save_checkpoint, save_tensor,
                                       tensor_bytes, write_tensor)


class TestTensorRoundTrip:
    def test_random_arrays_roundtrip_exactly(self, tmp_path):
        rng = np.random.default_rng(0)
        for shape in [(), (1,), (7,), (3, 4), (2, 3, 4, 5)]:
            arr = rng.normal(size=shape)
            path = tmp_path / "t.dipt"
            save_tensor(path, arr)
            back = load_tensor(path)
            assert back.shape == arr.shape
            assert np.array_equal(back, arr)

    def test_special_values_preserved(self, tmp_path):
        arr = np.array([0.0, -0.0, 1e-300, 1e300, np.pi])
        save_tensor(tmp_path / "s.dipt", arr)
        back = load_tensor(tmp_path / "s.dipt")
        assert np.array_equal(back, arr)
        assert np.signbit(back[1])

    def test_byte_layout_is_stable(self):
        """Header: magic, version=1, rank, dims, then little-endian f8 data."""
        raw = tensor_bytes(np.array([[1.0, 2.0]]))
        assert raw[:4] == b"DIPT"
        version, rank = struct.unpack("<II", raw[4:12])
        assert (version, rank) == (1, 2)
        dims = struct.unpack("<2Q", raw[12:28])
        assert dims == (1, 2)
        assert raw[28:] == struct.pack("<2d", 1.0, 2.0)

    def test_writes_are_deterministic(self):
        arr = np.random.default_rng(1).normal(size=(4, 4))
        assert tensor_bytes(arr) == tensor_bytes(arr.copy())

    def test_scalar_rank_zero(self):
        raw = tensor_bytes(np.float64(4.25))
        buf = io.BytesIO(raw)
        back = read_tensor(buf)
        assert back.shape == ()
        assert back == 4.25

    def test_float32_input_promoted_to_f8_payload(self):
        raw = tensor_bytes(np.zeros(3, dtype=np.float32))
        assert len(raw) == 4 + 8 + 8 + 3 * 8


class TestTensorErrors:
    def test_bad_magic(self):
        with pytest.raises(FormatError):
            read_tensor(io.BytesIO(b"NOPE" + b"\x00" * 32))

    def test_truncated_payload(self):
        raw = tensor_bytes(np.ones(10))
        with pytest.raises(FormatError):
            read_tensor(io.BytesIO(raw[:-4]))

    def test_unsupported_version(self):
        raw = bytearray(tensor_bytes(np.ones(1)))
        raw[4] = 99
        with pytest.raises(FormatError):
            read_tensor(io.BytesIO(bytes(raw)))


class TestCheckpoint:
    def test_roundtrip_preserves_names_and_order(self, tmp_path):
        rng = np.random.default_rng(2)
        named = {"w": rng.normal(size=(3, 2)), "b": rng.normal(size=2),
                 "meta.step": np.array([7.0])}
        path = tmp_path / "c.dipp"
        save_checkpoint(path, named)
        back = load_checkpoint(path)
        assert list(back.keys()) == list(named.keys())
        for k in named:
            assert np.array_equal(back[k], named[k])

    def test_unicode_names(self, tmp_path):
        named = {"poids/éje~δ": np.ones(2)}
        save_checkpoint(tmp_path / "u.dipp", named)
        back = load_checkpoint(tmp_path / "u.dipp")
        assert "poids/éje~δ" in back

    def test_empty_checkpoint(self, tmp_path):
        save_checkpoint(tmp_path / "e.dipp", {})
        assert load_checkpoint(tmp_path / "e.dipp") == {}

    def test_wrong_magic_rejected(self, tmp_path):
        save_tensor(tmp_path / "t.dipt", np.ones(1))
        with pytest.raises(FormatError):
            load_checkpoint(tmp_path / "t.dipt")

    def test_stream_concatenation(self):
        """Tensors written back-to-back read back in sequence."""
        buf = io.BytesIO()
        write_tensor(buf, np.arange(3.0))
        write_tensor(buf, np.arange(4.0).reshape(2, 2))
        buf.seek(0)
        a = read_tensor(buf)
        b = read_tensor(buf)
        assert np.array_equal(a, np.arange(3.0))
        assert np.array_equal(b, np.arange(4.0).reshape(2, 2))
