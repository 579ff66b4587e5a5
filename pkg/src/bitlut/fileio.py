"""Binary file formats for raw matrices and quantized weights.

Two little-endian container formats (documented bit-exactly in
docs/formats.md):

  LMRM: raw real matrix      magic "LMRM", u32 version, u32 rows, u32 cols,
                             then rows*cols float32 row-major.
  LMQW: quantized weights    magic "LMQW", u32 version, u32 m, u32 k,
                             u32 bits, u32 group_size, then m*k uint8
                             qvalues row-major, then m*(k/group_size)
                             float32 scales row-major.

The packed-weight format (LMPW) lives in weight_prep.
"""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .core import Matrix, QuantizedWeights
from .errors import (BadMagicError, FormatVersionError, PayloadLengthError,
                     TruncatedStreamError)

RAW_MAGIC = b"LMRM"
QUANT_MAGIC = b"LMQW"
RAW_VERSION = 1
QUANT_VERSION = 1
_RAW_HEADER = struct.Struct("<4sIII")
_QUANT_HEADER = struct.Struct("<4sIIIII")


def write_matrix(path, matrix: Matrix) -> None:
    data = _RAW_HEADER.pack(RAW_MAGIC, RAW_VERSION, matrix.rows, matrix.cols)
    arr = np.ascontiguousarray(matrix.to_array(), dtype="<f4")
    Path(path).write_bytes(data + arr.tobytes())


def read_matrix(path) -> Matrix:
    data = Path(path).read_bytes()
    if len(data) < 4 or data[:4] != RAW_MAGIC:
        raise BadMagicError(f"not an LMRM file (magic {data[:4]!r})")
    if len(data) < _RAW_HEADER.size:
        raise TruncatedStreamError("LMRM stream ends inside the header")
    _, version, rows, cols = _RAW_HEADER.unpack_from(data)
    if version != RAW_VERSION:
        raise FormatVersionError(
            f"unsupported LMRM version {version} (expected {RAW_VERSION})")
    expected = _RAW_HEADER.size + 4 * rows * cols
    if len(data) < expected:
        raise TruncatedStreamError(
            f"LMRM stream has {len(data)} bytes, header declares {expected}")
    if len(data) > expected:
        raise PayloadLengthError(
            f"LMRM stream has {len(data)} bytes, header declares {expected}")
    arr = np.frombuffer(data, dtype="<f4", count=rows * cols,
                        offset=_RAW_HEADER.size)
    return Matrix(np.ascontiguousarray(arr.reshape(rows, cols),
                                       dtype=np.float32))


def write_quantized(path, qw: QuantizedWeights) -> None:
    header = _QUANT_HEADER.pack(QUANT_MAGIC, QUANT_VERSION, qw.m, qw.k,
                                qw.bits, qw.group_size)
    out = bytearray(header)
    out += np.ascontiguousarray(qw.qvalues).tobytes()
    out += np.ascontiguousarray(qw.scales, dtype="<f4").tobytes()
    Path(path).write_bytes(bytes(out))


def read_quantized(path) -> QuantizedWeights:
    data = Path(path).read_bytes()
    if len(data) < 4 or data[:4] != QUANT_MAGIC:
        raise BadMagicError(f"not an LMQW file (magic {data[:4]!r})")
    if len(data) < _QUANT_HEADER.size:
        raise TruncatedStreamError("LMQW stream ends inside the header")
    _, version, m, k, bits, group_size = _QUANT_HEADER.unpack_from(data)
    if version != QUANT_VERSION:
        raise FormatVersionError(
            f"unsupported LMQW version {version} (expected {QUANT_VERSION})")
    if group_size < 1 or bits < 1 or bits > 4 or k % max(group_size, 1) != 0:
        raise PayloadLengthError("LMQW header fields are inconsistent")
    n_scales = m * (k // group_size)
    expected = _QUANT_HEADER.size + m * k + 4 * n_scales
    if len(data) < expected:
        raise TruncatedStreamError(
            f"LMQW stream has {len(data)} bytes, header declares {expected}")
    if len(data) > expected:
        raise PayloadLengthError(
            f"LMQW stream has {len(data)} bytes, header declares {expected}")
    off = _QUANT_HEADER.size
    qvalues = np.frombuffer(data, dtype=np.uint8, count=m * k, offset=off)
    off += m * k
    scales = np.frombuffer(data, dtype="<f4", count=n_scales, offset=off)
    return QuantizedWeights(
        m=m, k=k, bits=bits, group_size=group_size,
        qvalues=np.ascontiguousarray(qvalues.reshape(m, k)),
        scales=np.ascontiguousarray(scales.reshape(m, k // group_size),
                                    dtype=np.float32))
