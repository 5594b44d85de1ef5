"""Versioned binary container of named float64 arrays plus a JSON header.

Layout (all integers little-endian):

    magic        8 bytes   b"MSGCNCKP" (checkpoints) or b"MSGCNSEQ" (sequences)
    version      uint32    currently 1
    header_len   uint32    length of the UTF-8 JSON header that follows
    header       bytes     JSON object, keys sorted
    count        uint32    number of arrays
    per array:
      name_len   uint32
      name       bytes     UTF-8
      ndim       uint32
      dims       ndim x uint64
      data       prod(dims) x float64, little-endian, C order
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

VERSION = 1
CHECKPOINT_MAGIC = b"MSGCNCKP"
SEQUENCE_MAGIC = b"MSGCNSEQ"


class ContainerError(ValueError):
    pass


def encode(magic: bytes, header: dict, arrays: dict[str, np.ndarray]) -> bytes:
    parts = [magic, struct.pack("<I", VERSION)]
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    parts += [struct.pack("<I", len(blob)), blob, struct.pack("<I", len(arrays))]
    for name, arr in arrays.items():
        arr = np.ascontiguousarray(arr, dtype="<f8")
        key = name.encode("utf-8")
        parts += [struct.pack("<I", len(key)), key, struct.pack("<I", arr.ndim)]
        parts += [struct.pack("<Q", d) for d in arr.shape]
        parts.append(arr.tobytes())
    return b"".join(parts)


def decode(data: bytes, magic: bytes) -> tuple[dict, dict[str, np.ndarray]]:
    if data[:8] != magic:
        raise ContainerError(f"bad magic {data[:8]!r}, expected {magic!r}")
    pos = 8

    def take(fmt: str):
        nonlocal pos
        size = struct.calcsize(fmt)
        if pos + size > len(data):
            raise ContainerError("truncated container")
        out = struct.unpack_from(fmt, data, pos)
        pos += size
        return out

    (version,) = take("<I")
    if version != VERSION:
        raise ContainerError(f"unsupported container version {version}")
    (hlen,) = take("<I")
    header = json.loads(data[pos:pos + hlen].decode("utf-8"))
    pos += hlen
    (count,) = take("<I")
    arrays = {}
    for _ in range(count):
        (nlen,) = take("<I")
        name = data[pos:pos + nlen].decode("utf-8")
        pos += nlen
        (ndim,) = take("<I")
        shape = take(f"<{ndim}Q") if ndim else ()
        n = int(np.prod(shape)) if shape else 1
        if pos + 8 * n > len(data):
            raise ContainerError(f"truncated data for array {name!r}")
        arrays[name] = np.frombuffer(data, dtype="<f8", count=n, offset=pos).reshape(shape).astype(np.float64)
        pos += 8 * n
    if pos != len(data):
        raise ContainerError(f"{len(data) - pos} trailing bytes")
    return header, arrays


def write(path: str | Path, magic: bytes, header: dict, arrays: dict[str, np.ndarray]) -> None:
    Path(path).write_bytes(encode(magic, header, arrays))


def read(path: str | Path, magic: bytes) -> tuple[dict, dict[str, np.ndarray]]:
    return decode(Path(path).read_bytes(), magic)
