"""Versioned binary container for named float64 tensors.

Layout (all integers little-endian)::

    b"MBCR"  uint32 version
    uint32 meta_len, meta_len bytes of UTF-8 ``key=value`` lines (sorted)
    uint32 n_tensors
    per tensor: uint32 name_len, name, uint32 rank, rank x uint64 extents,
                prod(extents) x float64
"""

from __future__ import annotations

import io
import os
import struct
from typing import Dict, Iterable, Mapping, Tuple, Union

import numpy as np

MAGIC = b"MBCR"
VERSION = 1

PathLike = Union[str, os.PathLike]


class ContainerError(ValueError):
    """Raised for unreadable, truncated or foreign container files."""


def encode_meta(meta: Mapping[str, object]) -> bytes:
    lines = []
    for key in sorted(meta):
        value = str(meta[key])
        if "\n" in value or "=" in key:
            raise ValueError(f"metadata entry {key!r} cannot be encoded")
        lines.append(f"{key}={value}\n")
    return "".join(lines).encode("utf-8")


def decode_meta(raw: bytes) -> Dict[str, str]:
    meta = {}
    for line in raw.decode("utf-8").splitlines():
        key, _, value = line.partition("=")
        meta[key] = value
    return meta


def dumps(meta: Mapping[str, object], tensors: Iterable[Tuple[str, np.ndarray]]) -> bytes:
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<I", VERSION))
    raw = encode_meta(meta)
    buf.write(struct.pack("<I", len(raw)))
    buf.write(raw)
    items = list(tensors)
    buf.write(struct.pack("<I", len(items)))
    for name, arr in items:
        arr = np.asarray(arr, dtype="<f8")
        encoded = name.encode("utf-8")
        buf.write(struct.pack("<I", len(encoded)))
        buf.write(encoded)
        buf.write(struct.pack("<I", arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        buf.write(np.ascontiguousarray(arr).tobytes())
    return buf.getvalue()


def loads(blob: bytes, source: str = "<bytes>") -> Tuple[Dict[str, str], Dict[str, np.ndarray]]:
    view = memoryview(blob)
    pos = 0

    def take(n: int) -> memoryview:
        nonlocal pos
        if pos + n > len(view):
            raise ContainerError(f"{source}: truncated container")
        chunk = view[pos : pos + n]
        pos += n
        return chunk

    if bytes(take(4)) != MAGIC:
        raise ContainerError(f"{source}: bad magic (not an MBCR container)")
    (version,) = struct.unpack("<I", take(4))
    if version != VERSION:
        raise ContainerError(f"{source}: unsupported container version {version}")
    (meta_len,) = struct.unpack("<I", take(4))
    meta = decode_meta(bytes(take(meta_len)))
    (count,) = struct.unpack("<I", take(4))
    tensors: Dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<I", take(4))
        name = bytes(take(name_len)).decode("utf-8")
        (rank,) = struct.unpack("<I", take(4))
        shape = struct.unpack(f"<{rank}Q", take(8 * rank))
        n = int(np.prod(shape, dtype=np.int64))
        data = np.frombuffer(take(8 * n), dtype="<f8").astype(np.float64)
        tensors[name] = data.reshape(shape)
    if pos != len(view):
        raise ContainerError(f"{source}: trailing bytes after last tensor")
    return meta, tensors


def save(path: PathLike, meta: Mapping[str, object], tensors: Iterable[Tuple[str, np.ndarray]]) -> None:
    with open(path, "wb") as fh:
        fh.write(dumps(meta, tensors))


def load(path: PathLike) -> Tuple[Dict[str, str], Dict[str, np.ndarray]]:
    try:
        with open(path, "rb") as fh:
            blob = fh.read()
    except OSError as exc:
        raise ContainerError(f"{path}: {exc.strerror}") from exc
    return loads(blob, source=str(path))
