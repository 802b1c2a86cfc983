"""Checkpoint container: one JSON header line, then raw little-endian arrays.

The header carries the format version, arbitrary JSON metadata, and the
ordered entry table (name, shape, dtype).  Entries are written sorted by
name so that save -> load -> save is byte-identical.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from ..errors import IOFailure, VersionMismatch

FORMAT_VERSION = 1

_DTYPES = {"<f4": np.dtype("<f4"), "<f8": np.dtype("<f8"),
           "<i4": np.dtype("<i4"), "<i8": np.dtype("<i8")}


def _dtype_tag(arr: np.ndarray) -> str:
    kind = arr.dtype.kind + str(arr.dtype.itemsize)
    tag = {"f4": "<f4", "f8": "<f8", "i4": "<i4", "i8": "<i8"}.get(kind)
    if tag is None:
        raise IOFailure(f"unsupported checkpoint dtype {arr.dtype}")
    return tag


def save_arrays(path, arrays: dict[str, np.ndarray], meta: dict | None = None) -> None:
    path = Path(path)
    entries = []
    ordered = sorted(arrays.items())
    for name, arr in ordered:
        entries.append({"name": name, "shape": list(arr.shape), "dtype": _dtype_tag(np.asarray(arr))})
    header = {"format_version": FORMAT_VERSION, "meta": meta or {}, "entries": entries}
    line = json.dumps(header, sort_keys=True, separators=(",", ":")) + "\n"
    try:
        with open(path, "wb") as f:
            f.write(line.encode("utf-8"))
            for name, arr in ordered:
                arr = np.asarray(arr)
                f.write(np.ascontiguousarray(arr, dtype=_DTYPES[_dtype_tag(arr)]).tobytes())
    except OSError as e:
        raise IOFailure(f"cannot write checkpoint {path}: {e}") from e


def load_arrays(path) -> tuple[dict[str, np.ndarray], dict]:
    path = Path(path)
    try:
        with open(path, "rb") as f:
            raw_header = f.readline()
            try:
                header = json.loads(raw_header.decode("utf-8"))
            except (UnicodeDecodeError, json.JSONDecodeError) as e:
                raise VersionMismatch(f"unreadable checkpoint header in {path}: {e}") from e
            if not isinstance(header, dict) or header.get("format_version") != FORMAT_VERSION:
                raise VersionMismatch(
                    f"checkpoint {path} has format_version "
                    f"{header.get('format_version') if isinstance(header, dict) else '?'}, "
                    f"expected {FORMAT_VERSION}")
            arrays = {}
            for entry in header["entries"]:
                dtype = _DTYPES.get(entry["dtype"])
                if dtype is None:
                    raise VersionMismatch(f"unknown dtype tag {entry['dtype']!r}")
                shape = tuple(entry["shape"])
                count = int(np.prod(shape)) if shape else 1
                buf = f.read(count * dtype.itemsize)
                if len(buf) != count * dtype.itemsize:
                    raise VersionMismatch(f"truncated checkpoint {path}")
                arrays[entry["name"]] = np.frombuffer(buf, dtype=dtype).reshape(shape).copy()
            return arrays, header["meta"]
    except OSError as e:
        raise IOFailure(f"cannot read checkpoint {path}: {e}") from e
