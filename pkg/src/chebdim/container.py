"""Versioned binary container: magic, JSON header, raw little-endian arrays.

Written byte-for-byte deterministically (no timestamps), which ``np.savez``
cannot promise because zip entries carry modification times.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"CHEBDIM\x00"
VERSION = 1


class ContainerError(IOError):
    pass


def write_container(path, kind: str, meta: dict, arrays: dict[str, np.ndarray]) -> None:
    order = sorted(arrays)
    specs = []
    blobs = []
    for name in order:
        a = np.ascontiguousarray(arrays[name])
        if a.dtype.kind == "f":
            a = a.astype("<f8")
        elif a.dtype.kind in "iu":
            a = a.astype("<i8")
        else:
            raise TypeError(f"array {name!r} has unsupported dtype {a.dtype}")
        specs.append({"name": name, "dtype": a.dtype.str, "shape": list(a.shape)})
        blobs.append(a.tobytes())
    header = json.dumps({"kind": kind, "version": VERSION, "meta": meta, "arrays": specs},
                        sort_keys=True, separators=(",", ":")).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", VERSION, len(header)))
        fh.write(header)
        for b in blobs:
            fh.write(b)


def read_container(path, kind: str | None = None) -> tuple[dict, dict[str, np.ndarray]]:
    data = Path(path).read_bytes()
    if data[:len(MAGIC)] != MAGIC:
        raise ContainerError(f"{path}: not a chebdim container")
    off = len(MAGIC)
    version, hlen = struct.unpack_from("<II", data, off)
    if version != VERSION:
        raise ContainerError(f"{path}: unsupported container version {version}")
    off += 8
    header = json.loads(data[off:off + hlen])
    off += hlen
    if kind is not None and header["kind"] != kind:
        raise ContainerError(f"{path}: expected {kind!r}, found {header['kind']!r}")
    arrays = {}
    for spec in header["arrays"]:
        dt = np.dtype(spec["dtype"])
        count = int(np.prod(spec["shape"], dtype=np.int64))
        arrays[spec["name"]] = np.frombuffer(data, dtype=dt, count=count, offset=off) \
            .reshape(spec["shape"]).copy()
        off += count * dt.itemsize
    return header["meta"], arrays
