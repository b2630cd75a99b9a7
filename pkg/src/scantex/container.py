"""Packed little-endian float32 records with a JSON header.

Layout: ``b"SCTX"``, uint32 LE header length, UTF-8 JSON header (must carry
``dim`` and ``count``), then ``count * dim`` float32 LE values.
"""

import json
import struct
from pathlib import Path

import numpy as np

from .errors import FormatError, IoError

MAGIC = b"SCTX"


def pack_records(values, **header):
    values = np.asarray(values, dtype="<f4")
    if values.ndim != 2:
        raise FormatError("records must be a 2-D array (count x dim)")
    head = dict(header, count=int(values.shape[0]), dim=int(values.shape[1]))
    blob = json.dumps(head, sort_keys=True).encode("utf-8")
    return MAGIC + struct.pack("<I", len(blob)) + blob + values.tobytes()


def unpack_records(raw):
    if len(raw) < 8 or raw[:4] != MAGIC:
        raise FormatError("not a packed-record container")
    (hlen,) = struct.unpack("<I", raw[4:8])
    if 8 + hlen > len(raw):
        raise FormatError("truncated container header")
    try:
        header = json.loads(raw[8:8 + hlen].decode("utf-8"))
        dim, count = int(header["dim"]), int(header["count"])
    except (ValueError, KeyError, TypeError) as exc:
        raise FormatError(f"bad container header: {exc}") from exc
    if dim < 1 or count < 0:
        raise FormatError(f"invalid container shape dim={dim} count={count}")
    body = raw[8 + hlen:]
    if len(body) != 4 * dim * count:
        raise FormatError(f"container holds {len(body)} bytes, header promises {4 * dim * count}")
    values = np.frombuffer(body, dtype="<f4").reshape(count, dim).astype(np.float64)
    return header, values


def write_records(path, values, **header):
    try:
        Path(path).write_bytes(pack_records(values, **header))
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def read_records(path):
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    return unpack_records(raw)
