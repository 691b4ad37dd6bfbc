"""Binary snapshot container.

Layout: 8-byte magic ``MAFLOW01``, a little-endian uint64 giving the length
of a UTF-8 JSON header, the header itself, then raw little-endian payloads
in the order the header lists them. Real fields are float64, complex fields
are complex128 (re/im interleaved), all row-major.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .grid import PeriodicGrid

MAGIC = b"MAFLOW01"
FORMAT_VERSION = 1

_DTYPES = {"f8": np.dtype("<f8"), "c16": np.dtype("<c16")}


class SnapshotError(ValueError):
    pass


def write_fields(path, grid: PeriodicGrid, t: float, fields: dict, meta: dict | None = None) -> None:
    entries = []
    payloads = []
    offset = 0
    for name, arr in fields.items():
        arr = np.asarray(arr)
        code = "c16" if np.iscomplexobj(arr) else "f8"
        data = np.ascontiguousarray(arr, dtype=_DTYPES[code]).tobytes()
        entries.append({"name": name, "dtype": code, "shape": list(arr.shape),
                        "offset": offset, "nbytes": len(data)})
        payloads.append(data)
        offset += len(data)
    header = {
        "version": FORMAT_VERSION,
        "n": grid.n,
        "points": list(grid.points),
        "periods": list(grid.periods),
        # repr keeps the float exact through JSON
        "t": float(t),
        "fields": entries,
        "meta": meta or {},
    }
    hbytes = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(hbytes)))
        fh.write(hbytes)
        for data in payloads:
            fh.write(data)


def read_fields(path):
    """Return ``(grid, t, fields, meta)``; raises SnapshotError on any inconsistency."""
    raw = Path(path).read_bytes()
    if len(raw) < 16 or raw[:8] != MAGIC:
        if raw[:6] == MAGIC[:6]:
            raise SnapshotError(f"unsupported snapshot version tag {raw[:8]!r}")
        raise SnapshotError("not a snapshot file (bad magic)")
    (hlen,) = struct.unpack("<Q", raw[8:16])
    if 16 + hlen > len(raw):
        raise SnapshotError("header length exceeds file size")
    try:
        header = json.loads(raw[16:16 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise SnapshotError(f"malformed header: {exc}") from None
    if header.get("version") != FORMAT_VERSION:
        raise SnapshotError(f"unsupported snapshot version {header.get('version')!r}")
    grid = PeriodicGrid(header["n"], tuple(header["points"]), tuple(header["periods"]))
    body = raw[16 + hlen:]
    expected = sum(e["nbytes"] for e in header["fields"])
    if len(body) != expected:
        raise SnapshotError(f"payload size {len(body)} does not match header ({expected} bytes)")
    fields = {}
    for e in header["fields"]:
        dt = _DTYPES[e["dtype"]]
        count = int(np.prod(e["shape"])) if e["shape"] else 1
        if count * dt.itemsize != e["nbytes"]:
            raise SnapshotError(f"field {e['name']!r}: shape and byte count disagree")
        chunk = body[e["offset"]:e["offset"] + e["nbytes"]]
        fields[e["name"]] = np.frombuffer(chunk, dtype=dt).reshape(e["shape"]).astype(dt.newbyteorder("="))
    return grid, header["t"], fields, header.get("meta", {})
