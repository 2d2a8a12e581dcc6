"""Persistence layer: manifest + raw float64 arrays with CRC32 integrity."""

import json
from pathlib import Path

import numpy as np
import pytest

from derivop.io import FORMAT_VERSION, LoadError, load_arrays, save_arrays


@pytest.fixture
def arrays():
    rng = np.random.default_rng(42)
    return {
        "a": rng.standard_normal((3, 4)),
        "b": rng.standard_normal(7),
        "c": rng.standard_normal((2, 3, 5)),
    }


def test_round_trip_bit_exact(tmp_path, arrays):
    save_arrays(tmp_path / "d", arrays, meta={"object": "blob"})
    loaded, manifest = load_arrays(tmp_path / "d")
    assert set(loaded) == set(arrays)
    for name in arrays:
        assert loaded[name].dtype == np.float64
        np.testing.assert_array_equal(loaded[name], arrays[name])
    assert manifest["format_version"] == FORMAT_VERSION
    assert manifest["object"] == "blob"


def test_save_is_deterministic(tmp_path, arrays):
    save_arrays(tmp_path / "one", arrays, meta={"object": "blob"})
    save_arrays(tmp_path / "two", arrays, meta={"object": "blob"})
    for f in sorted((tmp_path / "one").iterdir()):
        assert f.read_bytes() == (tmp_path / "two" / f.name).read_bytes()


def test_corrupted_byte_rejected(tmp_path, arrays):
    save_arrays(tmp_path / "d", arrays, meta={})
    target = tmp_path / "d" / "b.bin"
    raw = bytearray(target.read_bytes())
    raw[5] ^= 0xFF
    target.write_bytes(bytes(raw))
    with pytest.raises(LoadError):
        load_arrays(tmp_path / "d")


def test_truncated_file_rejected(tmp_path, arrays):
    save_arrays(tmp_path / "d", arrays, meta={})
    target = tmp_path / "d" / "a.bin"
    target.write_bytes(target.read_bytes()[:-8])
    with pytest.raises(LoadError):
        load_arrays(tmp_path / "d")


def test_version_mismatch_rejected(tmp_path, arrays):
    save_arrays(tmp_path / "d", arrays, meta={})
    manifest_path = tmp_path / "d" / "manifest.json"
    manifest = json.loads(manifest_path.read_text())
    manifest["format_version"] = FORMAT_VERSION + 1
    manifest_path.write_text(json.dumps(manifest))
    with pytest.raises(LoadError):
        load_arrays(tmp_path / "d")


def test_missing_file_rejected(tmp_path, arrays):
    save_arrays(tmp_path / "d", arrays, meta={})
    (tmp_path / "d" / "c.bin").unlink()
    with pytest.raises(LoadError):
        load_arrays(tmp_path / "d")


def test_missing_directory_rejected(tmp_path):
    with pytest.raises(LoadError):
        load_arrays(tmp_path / "nope")


def test_arrays_stored_little_endian_row_major(tmp_path):
    a = np.arange(6, dtype=float).reshape(2, 3)
    save_arrays(tmp_path / "d", {"a": a}, meta={})
    raw = (Path(tmp_path) / "d" / "a.bin").read_bytes()
    assert raw == a.astype("<f8").tobytes(order="C")
