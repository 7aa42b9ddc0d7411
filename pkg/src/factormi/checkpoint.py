"""Self-describing parameter container shared by all model kinds.

Layout (little-endian)::

    b"FMCK"                magic
    u32                    format version
    u32                    header length in bytes
    header                 UTF-8 JSON: {"kind", "config", "meta", "arrays": [{"name", "shape"}, ...]}
    float64[...]           array payloads, concatenated in header order, row-major
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import FormatError

MAGIC = b"FMCK"
FORMAT_VERSION = 1
_PREFIX = struct.Struct("<4sII")


def save_checkpoint(path, kind: str, config: dict, arrays: dict[str, np.ndarray], meta: dict | None = None):
    entries = [{"name": k, "shape": list(np.shape(v))} for k, v in arrays.items()]
    header = json.dumps({"kind": kind, "config": config, "meta": meta or {}, "arrays": entries},
                        sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(_PREFIX.pack(MAGIC, FORMAT_VERSION, len(header)))
        fh.write(header)
        for v in arrays.values():
            fh.write(np.ascontiguousarray(v, dtype="<f8").tobytes())


def load_checkpoint(path) -> tuple[str, dict, dict[str, np.ndarray], dict]:
    """Return ``(kind, config, arrays, meta)``."""
    raw = Path(path).read_bytes()
    if len(raw) < _PREFIX.size:
        raise FormatError("checkpoint shorter than its fixed prefix", offset=len(raw))
    magic, version, hlen = _PREFIX.unpack_from(raw, 0)
    if magic != MAGIC:
        raise FormatError(f"bad checkpoint magic {magic!r}", offset=0)
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported checkpoint version {version}", offset=4)
    start = _PREFIX.size
    try:
        header = json.loads(raw[start:start + hlen].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"unreadable checkpoint header: {exc}", offset=start) from exc
    pos = start + hlen
    arrays = {}
    for entry in header["arrays"]:
        shape = tuple(entry["shape"])
        nbytes = 8 * int(np.prod(shape, dtype=np.int64))
        if pos + nbytes > len(raw):
            raise FormatError(f"truncated payload for {entry['name']!r}", offset=pos)
        arrays[entry["name"]] = np.frombuffer(raw, dtype="<f8", count=nbytes // 8, offset=pos).reshape(shape).copy()
        pos += nbytes
    if pos != len(raw):
        raise FormatError(f"{len(raw) - pos} trailing bytes after payload", offset=pos)
    return header["kind"], header["config"], arrays, header.get("meta", {})
