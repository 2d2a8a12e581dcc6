"""Directory-based persistence: manifest.json plus raw float64 binary arrays.

Every persisted object (dataset, basis pair, network weights, checkpoints)
uses the same convention: a directory containing ``manifest.json`` and one
``<name>.bin`` file per array.  Arrays are little-endian 64-bit floats in
row-major order; each file's CRC32 is recorded in the manifest so silent
corruption turns into a load error.
"""

import json
import zlib
from pathlib import Path

import numpy as np

FORMAT_VERSION = 1


class LoadError(RuntimeError):
    """Raised when a persisted directory fails validation on load."""


def save_arrays(dirpath, arrays, meta=None):
    """Write ``arrays`` (name -> ndarray) plus metadata to ``dirpath``."""
    dirpath = Path(dirpath)
    dirpath.mkdir(parents=True, exist_ok=True)
    entries = {}
    for name, arr in arrays.items():
        arr = np.ascontiguousarray(arr, dtype="<f8")
        raw = arr.tobytes()
        (dirpath / f"{name}.bin").write_bytes(raw)
        entries[name] = {
            "file": f"{name}.bin",
            "shape": list(arr.shape),
            "dtype": "<f8",
            "crc32": zlib.crc32(raw),
        }
    manifest = {"format_version": FORMAT_VERSION, "arrays": entries}
    if meta:
        manifest.update(meta)
    with open(dirpath / "manifest.json", "w", encoding="utf-8") as f:
        json.dump(manifest, f, indent=2, default=_json_default)
        f.write("\n")


def load_arrays(dirpath):
    """Load a directory written by :func:`save_arrays`.

    Returns ``(arrays, manifest)``.  Raises :class:`LoadError` on version,
    shape, size, or checksum mismatch.
    """
    dirpath = Path(dirpath)
    manifest_path = dirpath / "manifest.json"
    if not manifest_path.exists():
        raise LoadError(f"no manifest.json in {dirpath}")
    with open(manifest_path, encoding="utf-8") as f:
        manifest = json.load(f)
    version = manifest.get("format_version")
    if version != FORMAT_VERSION:
        raise LoadError(f"format_version {version!r} != {FORMAT_VERSION}")
    arrays = {}
    for name, entry in manifest["arrays"].items():
        try:
            raw = (dirpath / entry["file"]).read_bytes()
        except OSError as exc:
            raise LoadError(f"{entry['file']}: {exc}") from exc
        shape = tuple(entry["shape"])
        expected = int(np.prod(shape)) * 8
        if len(raw) != expected:
            raise LoadError(
                f"{entry['file']}: {len(raw)} bytes, expected {expected}"
            )
        if zlib.crc32(raw) != entry["crc32"]:
            raise LoadError(f"{entry['file']}: checksum mismatch")
        arrays[name] = np.frombuffer(raw, dtype="<f8").reshape(shape).copy()
    return arrays, manifest


def _json_default(obj):
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not JSON serializable: {type(obj)}")
