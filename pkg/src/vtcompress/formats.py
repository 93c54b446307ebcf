"""Bit-exact binary containers for feature, query, and compressed-token files.

All integers and floats are little-endian regardless of platform, so a file
written anywhere parses anywhere. Writes go through a temp file and an
atomic rename.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile
from pathlib import Path

import numpy as np

from .errors import FileFormatError
from .query_select import QueryEmbedding
from .temporal import FrameFeatureSequence
from .tokens import CompressedTokenSequence, CompressionStats

__all__ = [
    "write_features",
    "read_features",
    "write_query",
    "read_query",
    "write_compressed",
    "read_compressed",
]

FEATURE_MAGIC = b"LVUF"
QUERY_MAGIC = b"LVUQ"
COMPRESSED_MAGIC = b"LVUC"
FORMAT_VERSION = 1
DTYPE_F32_LE = 0

_FEATURE_HEADER = struct.Struct("<4sIIIIIB3s")
_QUERY_HEADER = struct.Struct("<4sIIIB")
_COMPRESSED_HEADER = struct.Struct("<4sIII")
_U32 = struct.Struct("<I")


def _atomic_write(path, payload: bytes):
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent or Path("."), prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _read_exact(fh, n: int, what: str) -> bytes:
    data = fh.read(n)
    if len(data) != n:
        raise FileFormatError(f"truncated file: expected {n} bytes of {what}, got {len(data)}")
    return data


def _check_header(magic: bytes, expected: bytes, version: int, dtype: int | None):
    if magic != expected:
        raise FileFormatError(f"bad magic {magic!r}, expected {expected!r}")
    if version != FORMAT_VERSION:
        raise FileFormatError(f"unsupported version {version}, expected {FORMAT_VERSION}")
    if dtype is not None and dtype != DTYPE_F32_LE:
        raise FileFormatError(f"unsupported dtype code {dtype}")


def write_features(path, seq: FrameFeatureSequence):
    """Serialize a frame sequence; timesteps are implicit (1 fps from zero)."""
    t, h, w, d = seq.frames.shape
    header = _FEATURE_HEADER.pack(FEATURE_MAGIC, FORMAT_VERSION, t, h, w, d, DTYPE_F32_LE, b"\0\0\0")
    payload = seq.frames.astype("<f4").tobytes()
    _atomic_write(path, header + payload)


def read_features(path) -> FrameFeatureSequence:
    with open(path, "rb") as fh:
        magic, version, t, h, w, d, dtype, reserved = _FEATURE_HEADER.unpack(
            _read_exact(fh, _FEATURE_HEADER.size, "feature header")
        )
        _check_header(magic, FEATURE_MAGIC, version, dtype)
        if reserved != b"\0\0\0":
            raise FileFormatError("reserved header bytes must be zero")
        if min(t, h, w, d) < 1:
            raise FileFormatError(f"degenerate dimensions t={t} h={h} w={w} d={d}")
        raw = _read_exact(fh, t * h * w * d * 4, "feature payload")
        if fh.read(1):
            raise FileFormatError("trailing bytes after feature payload")
    frames = np.frombuffer(raw, dtype="<f4").reshape(t, h, w, d).astype(np.float32)
    if not np.isfinite(frames).all():
        raise FileFormatError("feature payload contains non-finite values")
    return FrameFeatureSequence(frames, np.arange(t, dtype=np.float64))


def write_query(path, query: QueryEmbedding):
    l_q, d_q = query.rows.shape
    header = _QUERY_HEADER.pack(QUERY_MAGIC, FORMAT_VERSION, l_q, d_q, DTYPE_F32_LE)
    _atomic_write(path, header + query.rows.astype("<f4").tobytes())


def read_query(path) -> QueryEmbedding:
    with open(path, "rb") as fh:
        magic, version, l_q, d_q, dtype = _QUERY_HEADER.unpack(
            _read_exact(fh, _QUERY_HEADER.size, "query header")
        )
        _check_header(magic, QUERY_MAGIC, version, dtype)
        if min(l_q, d_q) < 1:
            raise FileFormatError(f"degenerate query shape {l_q}x{d_q}")
        raw = _read_exact(fh, l_q * d_q * 4, "query payload")
        if fh.read(1):
            raise FileFormatError("trailing bytes after query payload")
    rows = np.frombuffer(raw, dtype="<f4").reshape(l_q, d_q).astype(np.float32)
    if not np.isfinite(rows).all():
        raise FileFormatError("query payload contains non-finite values")
    return QueryEmbedding(rows)


def _stats_blob(stats: CompressionStats) -> bytes:
    return json.dumps(stats.to_dict(), sort_keys=True, separators=(",", ":")).encode("utf-8")


def _record_dtype(d: int) -> np.dtype:
    # Packed layout, 13 + 4*d bytes per record, all little-endian.
    return np.dtype(
        [
            ("frame_index", "<u4"),
            ("timestep", "<f4"),
            ("grid_h", "<u2"),
            ("grid_w", "<u2"),
            ("level", "u1"),
            ("vector", "<f4", (d,)),
        ]
    )


def write_compressed(path, seq: CompressedTokenSequence, stats: CompressionStats):
    """Token records followed by a length-prefixed JSON stats blob."""
    n, d = seq.vectors.shape
    if n and (seq.frame_indices.max() >= 2**32 or seq.frame_indices.min() < 0):
        raise FileFormatError("frame index does not fit in u32")
    if n and (seq.grid_rows.max() >= 2**16 or seq.grid_cols.max() >= 2**16):
        raise FileFormatError("grid coordinate does not fit in u16")
    records = np.empty(n, dtype=_record_dtype(d))
    records["frame_index"] = seq.frame_indices
    records["timestep"] = seq.timesteps
    records["grid_h"] = seq.grid_rows
    records["grid_w"] = seq.grid_cols
    records["level"] = seq.levels
    records["vector"] = seq.vectors
    blob = _stats_blob(stats)
    payload = (
        _COMPRESSED_HEADER.pack(COMPRESSED_MAGIC, FORMAT_VERSION, n, d)
        + records.tobytes()
        + _U32.pack(len(blob))
        + blob
    )
    _atomic_write(path, payload)


def read_compressed(path) -> tuple[CompressedTokenSequence, CompressionStats]:
    with open(path, "rb") as fh:
        magic, version, n, d = _COMPRESSED_HEADER.unpack(
            _read_exact(fh, _COMPRESSED_HEADER.size, "compressed header")
        )
        _check_header(magic, COMPRESSED_MAGIC, version, None)
        if d < 1:
            raise FileFormatError(f"degenerate vector dim {d}")
        dtype = _record_dtype(d)
        raw = _read_exact(fh, n * dtype.itemsize, "token records")
        (blob_len,) = _U32.unpack(_read_exact(fh, 4, "stats length"))
        blob = _read_exact(fh, blob_len, "stats blob")
        if fh.read(1):
            raise FileFormatError("trailing bytes after stats blob")
    records = np.frombuffer(raw, dtype=dtype)
    if n and records["level"].max() > 1:
        raise FileFormatError("record has unknown level code")
    try:
        stats = CompressionStats.from_dict(json.loads(blob.decode("utf-8")))
    except (ValueError, KeyError, TypeError) as exc:
        raise FileFormatError(f"stats blob is not valid: {exc}") from exc
    seq = CompressedTokenSequence(
        frame_indices=records["frame_index"].astype(np.int64),
        timesteps=records["timestep"].astype(np.float32),
        grid_rows=records["grid_h"].astype(np.int32),
        grid_cols=records["grid_w"].astype(np.int32),
        levels=records["level"].copy(),
        vectors=records["vector"].astype(np.float32).reshape(n, d),
    )
    return seq, stats
