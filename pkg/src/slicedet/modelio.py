"""Binary model files.

Layout (all integers unsigned 32-bit little-endian):

    magic   4 bytes  b"RTNM"
    version u32      currently 1
    count   u32      number of parameters
    then per parameter, sorted by name:
        name_len u32, name utf-8 bytes
        rank     u32
        extents  rank * u32
        values   prod(extents) * float32 little-endian, row-major

Values are narrowed to float32 on save and widened back to float64 on load.
"""

from __future__ import annotations

import struct

import numpy as np

from .errors import IngestionError, InputError
from .grid import Grid

MAGIC = b"RTNM"
VERSION = 1


def serialize_params(params: dict[str, Grid]) -> bytes:
    chunks = [MAGIC, struct.pack("<II", VERSION, len(params))]
    for name in sorted(params):
        data = params[name].data if isinstance(params[name], Grid) else np.asarray(params[name])
        raw = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(raw)))
        chunks.append(raw)
        chunks.append(struct.pack("<I", data.ndim))
        chunks.append(struct.pack("<%dI" % data.ndim, *data.shape))
        chunks.append(np.ascontiguousarray(data, dtype="<f4").tobytes())
    return b"".join(chunks)


def save_model(path, params: dict[str, Grid]) -> None:
    with open(path, "wb") as fh:
        fh.write(serialize_params(params))


def _need(buf: bytes, offset: int, count: int, what: str) -> None:
    if offset + count > len(buf):
        raise IngestionError("model file truncated while reading %s" % what)


def deserialize_params(buf: bytes) -> dict[str, np.ndarray]:
    if buf[:4] != MAGIC:
        raise IngestionError("bad model magic %r" % buf[:4])
    _need(buf, 4, 8, "header")
    version, count = struct.unpack_from("<II", buf, 4)
    if version != VERSION:
        raise IngestionError("unsupported model version %d" % version)
    out: dict[str, np.ndarray] = {}
    off = 12
    for _ in range(count):
        _need(buf, off, 4, "name length")
        (nlen,) = struct.unpack_from("<I", buf, off)
        off += 4
        _need(buf, off, nlen, "name")
        name = buf[off:off + nlen].decode("utf-8")
        off += nlen
        _need(buf, off, 4, "rank")
        (rank,) = struct.unpack_from("<I", buf, off)
        off += 4
        _need(buf, off, 4 * rank, "extents")
        shape = struct.unpack_from("<%dI" % rank, buf, off)
        off += 4 * rank
        n = int(np.prod(shape)) if rank else 1
        _need(buf, off, 4 * n, "values of %s" % name)
        vals = np.frombuffer(buf, dtype="<f4", count=n, offset=off).astype(np.float64)
        off += 4 * n
        out[name] = vals.reshape(shape)
    if off != len(buf):
        raise IngestionError("model file has %d trailing bytes" % (len(buf) - off))
    return out


def load_params(path) -> dict[str, np.ndarray]:
    try:
        with open(path, "rb") as fh:
            buf = fh.read()
    except OSError as exc:
        raise InputError("cannot read model file %s: %s" % (path, exc)) from exc
    return deserialize_params(buf)
