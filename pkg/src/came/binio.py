"""Self-describing binary container: JSON header plus raw float64 blocks.

Writes are atomic (temp file + rename) and byte-deterministic: the header is
serialized with sorted keys and arrays are stored C-order in manifest order.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile

import numpy as np


def dump_json_bytes(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode("utf-8")


def atomic_write(path, data: bytes) -> None:
    path = str(path)
    d = os.path.dirname(path) or "."
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix=".part")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text: str) -> None:
    atomic_write(path, text.encode("utf-8"))


def pack_container(magic: bytes, version: int, header: dict,
                   arrays: dict[str, np.ndarray]) -> bytes:
    manifest = [[name, list(arr.shape)] for name, arr in arrays.items()]
    head = dict(header)
    head["arrays"] = manifest
    head_bytes = dump_json_bytes(head)
    parts = [magic, struct.pack("<I", version), struct.pack("<Q", len(head_bytes)), head_bytes]
    for name, arr in arrays.items():
        parts.append(np.ascontiguousarray(arr, dtype=np.float64).tobytes())
    return b"".join(parts)


def unpack_container(data: bytes, magic: bytes, version: int
                     ) -> tuple[dict, dict[str, np.ndarray]]:
    if data[: len(magic)] != magic:
        raise ValueError(f"bad magic: expected {magic!r}, got {data[: len(magic)]!r}")
    off = len(magic)
    (ver,) = struct.unpack_from("<I", data, off)
    off += 4
    if ver != version:
        raise ValueError(f"unsupported format version {ver} (expected {version})")
    (hlen,) = struct.unpack_from("<Q", data, off)
    off += 8
    header = json.loads(data[off : off + hlen].decode("utf-8"))
    off += hlen
    arrays: dict[str, np.ndarray] = {}
    for name, shape in header.pop("arrays"):
        n = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(data, dtype=np.float64, count=n, offset=off).reshape(shape)
        arrays[name] = arr.copy()
        off += n * 8
    return header, arrays
