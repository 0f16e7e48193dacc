"""Checkpoint container: byte layout, round trips, error reporting."""

import struct

import numpy as np
import pytest

from demopp.checkpoint import CheckpointError, load_checkpoint, save_checkpoint


def test_round_trip_preserves_dtype_shape_values(tmp_path):
    rng = np.random.default_rng(1)
    arrays = {
        "enc/w": rng.standard_normal((4, 5)).astype(np.float32),
        "enc/b": rng.standard_normal(5),
        "step": np.asarray(7.0),
    }
    path = tmp_path / "w.ckpt"
    save_checkpoint(path, arrays)
    back = load_checkpoint(path)
    assert set(back) == set(arrays)
    for k, v in arrays.items():
        assert back[k].dtype == v.dtype
        assert back[k].shape == v.shape
        assert np.array_equal(back[k], v)


def test_header_layout_is_parseable_by_hand(tmp_path):
    path = tmp_path / "w.ckpt"
    save_checkpoint(path, {"ab": np.arange(6, dtype=np.float32).reshape(2, 3)})
    blob = path.read_bytes()
    (count,) = struct.unpack_from("<Q", blob, 0)
    assert count == 1
    (nlen,) = struct.unpack_from("<I", blob, 8)
    assert nlen == 2
    assert blob[12:14] == b"ab"
    code, rank = struct.unpack_from("<BB", blob, 14)
    assert code == 0 and rank == 2
    assert struct.unpack_from("<2Q", blob, 16) == (2, 3)
    (offset,) = struct.unpack_from("<Q", blob, 32)
    assert offset == 0
    payload = blob[40:]
    assert np.array_equal(np.frombuffer(payload, "<f4").reshape(2, 3), np.arange(6).reshape(2, 3))


def test_identical_weights_identical_bytes(tmp_path):
    rng = np.random.default_rng(2)
    arrays = {"b": rng.standard_normal(3), "a": rng.standard_normal((2, 2))}
    p1, p2 = tmp_path / "1.ckpt", tmp_path / "2.ckpt"
    save_checkpoint(p1, arrays)
    save_checkpoint(p2, dict(reversed(list(arrays.items()))))
    assert p1.read_bytes() == p2.read_bytes()


def test_truncated_file_raises_with_context(tmp_path):
    path = tmp_path / "w.ckpt"
    save_checkpoint(path, {"weights": np.ones((8, 8), dtype=np.float32)})
    blob = path.read_bytes()
    clipped = tmp_path / "clip.ckpt"
    clipped.write_bytes(blob[: len(blob) - 16])
    with pytest.raises(CheckpointError, match="truncated"):
        load_checkpoint(clipped)
    header_cut = tmp_path / "hdr.ckpt"
    header_cut.write_bytes(blob[:10])
    with pytest.raises(CheckpointError, match="truncated"):
        load_checkpoint(header_cut)


def test_unsupported_dtype_rejected(tmp_path):
    with pytest.raises(CheckpointError, match="dtype"):
        save_checkpoint(tmp_path / "x.ckpt", {"ints": np.arange(3)})
