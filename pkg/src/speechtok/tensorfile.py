"""Binary container for stacks of equally shaped float32 matrices.

Layout (little endian)::

    magic    4 bytes   b"STKS"
    version  uint32    1
    count    uint32    number of matrices
    ids      int32 x count
    rows     uint32
    cols     uint32
    data     float32 x count*rows*cols, row-major, matrix after matrix

A JSON sidecar with the same content is written next to the binary for
debugging; float32 values are stored there as their exact decimal repr.
"""
import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"STKS"
VERSION = 1
_HEADER = struct.Struct("<4sII")
_DIMS = struct.Struct("<II")


class ContainerError(ValueError):
    pass


def encode(ids, data):
    """Serialize ``data`` of shape (count, rows, cols) with integer ``ids``."""
    data = np.asarray(data)
    if data.ndim != 3:
        raise ContainerError(f"expected a (count, rows, cols) array, got {data.shape}")
    ids = [int(i) for i in ids]
    if len(ids) != data.shape[0]:
        raise ContainerError(f"{len(ids)} ids for {data.shape[0]} matrices")
    f32 = data.astype("<f4")
    if not np.all(np.isfinite(f32)):
        raise ContainerError("non-finite values cannot be stored")
    parts = [
        _HEADER.pack(MAGIC, VERSION, len(ids)),
        np.asarray(ids, dtype="<i4").tobytes(),
        _DIMS.pack(data.shape[1], data.shape[2]),
        f32.tobytes(order="C"),
    ]
    return b"".join(parts)


def decode(blob):
    """Inverse of :func:`encode`; returns ``(ids, float32 array)``."""
    if len(blob) < _HEADER.size:
        raise ContainerError("truncated header")
    magic, version, count = _HEADER.unpack_from(blob, 0)
    if magic != MAGIC:
        raise ContainerError(f"bad magic {magic!r}")
    if version != VERSION:
        raise ContainerError(f"unsupported version {version}")
    off = _HEADER.size
    ids = np.frombuffer(blob, dtype="<i4", count=count, offset=off).tolist()
    off += 4 * count
    rows, cols = _DIMS.unpack_from(blob, off)
    off += _DIMS.size
    n = count * rows * cols
    if len(blob) != off + 4 * n:
        raise ContainerError(
            f"payload size {len(blob) - off} does not match {count}x{rows}x{cols} float32"
        )
    data = np.frombuffer(blob, dtype="<f4", count=n, offset=off).reshape(count, rows, cols)
    return ids, data.copy()


def write(path, ids, data, sidecar=True):
    path = Path(path)
    blob = encode(ids, data)
    path.write_bytes(blob)
    if sidecar:
        _, stored = decode(blob)
        doc = {
            "version": VERSION,
            "ids": [int(i) for i in ids],
            "rows": int(stored.shape[1]),
            "cols": int(stored.shape[2]),
            "data": [m.tolist() for m in stored.astype(np.float64)],
        }
        path.with_name(path.name + ".json").write_text(json.dumps(doc))
    return path


def read(path):
    return decode(Path(path).read_bytes())


def read_sidecar(path):
    """Load the JSON mirror written by :func:`write`."""
    doc = json.loads(Path(path).read_text())
    data = np.asarray(doc["data"], dtype=np.float64).astype(np.float32)
    data = data.reshape(len(doc["ids"]), doc["rows"], doc["cols"])
    return doc["ids"], data
