"""Parameter checkpoints in the little-endian ``EPW1`` container.

Layout (all integers little-endian)::

    magic      4 bytes   b"EPW1"
    count      uint32    number of entries
    per entry:
      name_len uint16, name (utf-8, name_len bytes)
      itemsize uint8     4 (float32) or 8 (float64)
      ndim     uint8, dims (ndim x uint32)
      values   product(dims) little-endian floats, C order
"""

from __future__ import annotations

import struct
from pathlib import Path
from typing import Iterable

import numpy as np

from ..errors import DimensionError, ParseError

MAGIC = b"EPW1"
_DTYPES = {4: np.dtype("<f4"), 8: np.dtype("<f8")}


def save_entries(path, entries: Iterable[tuple[str, np.ndarray]]) -> None:
    entries = list(entries)
    chunks = [MAGIC, struct.pack("<I", len(entries))]
    for name, values in entries:
        values = np.asarray(values)
        if values.dtype.itemsize not in _DTYPES:
            values = values.astype(np.float64)
        encoded = name.encode("utf-8")
        chunks.append(struct.pack("<H", len(encoded)))
        chunks.append(encoded)
        chunks.append(struct.pack("<BB", values.dtype.itemsize, values.ndim))
        chunks.append(struct.pack(f"<{values.ndim}I", *values.shape))
        chunks.append(np.ascontiguousarray(values, dtype=_DTYPES[values.dtype.itemsize]).tobytes())
    Path(path).write_bytes(b"".join(chunks))


def load_entries(path) -> list[tuple[str, np.ndarray]]:
    blob = Path(path).read_bytes()
    if blob[:4] != MAGIC:
        raise ParseError(f"bad checkpoint magic {blob[:4]!r}", offset=0)
    pos = 4

    def read(fmt):
        nonlocal pos
        size = struct.calcsize(fmt)
        if pos + size > len(blob):
            raise ParseError("truncated checkpoint", offset=pos)
        out = struct.unpack_from(fmt, blob, pos)
        pos += size
        return out

    (count,) = read("<I")
    entries = []
    for _ in range(count):
        (name_len,) = read("<H")
        if pos + name_len > len(blob):
            raise ParseError("truncated entry name", offset=pos)
        name = blob[pos : pos + name_len].decode("utf-8")
        pos += name_len
        itemsize, ndim = read("<BB")
        if itemsize not in _DTYPES:
            raise ParseError(f"unsupported item size {itemsize}", offset=pos - 2)
        dims = read(f"<{ndim}I")
        nbytes = int(np.prod(dims, dtype=np.int64)) * itemsize
        if pos + nbytes > len(blob):
            raise ParseError(f"truncated values for {name!r}", offset=pos)
        values = np.frombuffer(blob, dtype=_DTYPES[itemsize], count=nbytes // itemsize, offset=pos)
        entries.append((name, values.reshape(dims).copy()))
        pos += nbytes
    return entries


def save_module(path, module) -> None:
    save_entries(path, ((name, p.data) for name, p in module.named_parameters()))


def load_module(path, module) -> None:
    """Copy checkpoint values into ``module``; mismatches raise with a full diff."""
    stored = dict(load_entries(path))
    expected = dict(module.named_parameters())
    problems = []
    for name, param in expected.items():
        if name not in stored:
            problems.append(f"missing {name} (expected shape {param.shape})")
        elif stored[name].shape != param.shape:
            problems.append(f"{name}: checkpoint shape {stored[name].shape} != model shape {param.shape}")
    for name in stored:
        if name not in expected:
            problems.append(f"unexpected {name} (shape {stored[name].shape})")
    if problems:
        raise DimensionError("checkpoint does not match model:\n  " + "\n  ".join(problems))
    for name, param in expected.items():
        param.data[...] = stored[name].astype(param.dtype)
