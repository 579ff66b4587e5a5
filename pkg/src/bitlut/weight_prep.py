"""Offline weight pipeline: bit-plane decomposition, tile permutation,
byte interleaving, and the packed-weight container with its serial format.

Nothing in this module runs on the inference hot path; the kernels only
read the byte buffers produced here.

Layout (version 1), per bit plane:
  - indices are grouped g bits at a time along K: index(m, kg) collects
    bit j of weights kg*g + j for j in [0, g);
  - tiles of (m_tile x k_tile/g) indices are stored contiguously, ordered
    k-blocks inner within an m-block, m-blocks outermost;
  - inside a tile the flatten order is (lane-block, k-group, lane);
  - the flattened stream is byte-interleaved so that unpacking is pure
    mask/shift: for g=4, byte j of a 2*lanes unit is
    ``index[j] | index[j + lanes] << 4``.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .core import QuantizedWeights, TileConfig, indices_per_byte, slot_bits
from .errors import (BadMagicError, FormatVersionError, LayoutError,
                     ParameterError, PayloadLengthError, ShapeError,
                     TruncatedStreamError)

LAYOUT_VERSION = 1
FORMAT_VERSION = 1
MAGIC = b"LMPW"
_HEADER = struct.Struct("<4sIIIIIIIIIIIIII")  # magic + 14 u32 fields


@dataclass(frozen=True)
class BitPlane:
    """g-bit-grouped indices of one bit position of a weight matrix."""

    bit: int
    g: int
    indices: np.ndarray  # uint8, shape (m, k // g)

    def __post_init__(self):
        if self.indices.dtype != np.uint8:
            raise ParameterError("plane indices must be uint8")
        if self.indices.max(initial=0) >= (1 << self.g):
            raise ParameterError(f"plane indices exceed g={self.g} range")


@dataclass(frozen=True)
class PackedWeights:
    """Kernel-side weight operand: permuted, interleaved bit-plane bytes."""

    m: int
    k: int
    bits: int
    g: int
    group_size: int
    tile: TileConfig
    planes: np.ndarray   # uint8, shape (bits, plane_bytes)
    scales: np.ndarray   # float32, shape (m, k // group_size)
    layout_version: int = LAYOUT_VERSION

    def __post_init__(self):
        expected = self.m * (self.k // self.g) // indices_per_byte(self.g)
        if self.planes.shape != (self.bits, expected):
            raise ShapeError(
                f"planes shape {self.planes.shape} does not match "
                f"(bits={self.bits}, plane_bytes={expected})")
        if self.scales.shape != (self.m, self.k // self.group_size):
            raise ShapeError("scales shape mismatch")

    @property
    def plane_bytes(self) -> int:
        return self.planes.shape[1]

    @property
    def index_slots(self) -> int:
        return self.bits * self.m * (self.k // self.g)

    @property
    def n_groups(self) -> int:
        return self.k // self.group_size


def decompose_bits(qw: QuantizedWeights, g: int) -> list[BitPlane]:
    """Split quantized weights into one-bit planes of g-bit lookup indices.

    Plane i holds, at (m, kg), the value
    ``sum_j bit_i(W[m, kg*g + j]) << j``; planes are independent of the
    quantization scales.
    """
    if not 1 <= g <= 8:
        raise ParameterError(f"g must be in [1, 8], got {g}")
    if qw.k % g != 0:
        raise LayoutError(
            f"k={qw.k} not divisible by g={g}; pad the weights first")
    planes = []
    for i in range(qw.bits):
        bits_i = (qw.qvalues >> i) & 1
        idx = np.zeros((qw.m, qw.k // g), dtype=np.uint8)
        for j in range(g):
            idx |= (bits_i[:, j::g] << j).astype(np.uint8)
        planes.append(BitPlane(bit=i, g=g, indices=idx))
    return planes


def pad_weights(qw: QuantizedWeights, m_multiple: int,
                k_multiple: int) -> QuantizedWeights:
    """Pad weights so dimensions divide the tile grid.

    Extra K positions get qvalue = 2**(bits-1) (dequantizes to zero) with
    zero-extended scales; extra M rows are zero rows with zero scales.
    K padding is rounded up to a whole number of quantization groups.
    """
    if qw.k % qw.group_size != 0:
        raise LayoutError("k must remain a multiple of group_size")
    k_step = np.lcm(k_multiple, qw.group_size)
    new_k = ((qw.k + k_step - 1) // k_step) * k_step
    new_m = ((qw.m + m_multiple - 1) // m_multiple) * m_multiple
    if (new_k, new_m) == (qw.k, qw.m):
        return qw
    q = np.full((new_m, new_k), qw.offset, dtype=np.uint8)
    q[:qw.m, :qw.k] = qw.qvalues
    s = np.zeros((new_m, new_k // qw.group_size), dtype=np.float32)
    s[:qw.m, :qw.k // qw.group_size] = qw.scales
    return QuantizedWeights(m=new_m, k=new_k, bits=qw.bits,
                            group_size=qw.group_size, qvalues=q, scales=s)


def interleave_layout(indices: np.ndarray, g: int, lanes: int) -> np.ndarray:
    """Pack an index stream into bytes so unpacking is mask/shift only.

    Operates on consecutive units of ``indices_per_byte(g) * lanes``
    indices.  For g=4 a unit of 2*lanes indices becomes lanes bytes with
    byte j = indices[j] | indices[j + lanes] << 4; for narrower slots the
    same low/high split recurses (nibble, then 2-bit, then 1-bit).
    """
    idx = np.ascontiguousarray(indices, dtype=np.uint8).reshape(-1)
    per = indices_per_byte(g)
    if idx.size % lanes != 0:
        raise LayoutError(
            f"index span {idx.size} not divisible by lanes={lanes}")
    if per == 1:
        return idx.copy()
    if idx.size % (per * lanes) != 0:
        raise LayoutError(
            f"index span {idx.size} not divisible by the "
            f"{per * lanes}-index packing unit for g={g}")
    cur = idx.reshape(-1, per * lanes)
    width = slot_bits(g)
    while cur.shape[1] > lanes:
        half = cur.shape[1] // 2
        cur = cur[:, :half] | (cur[:, half:] << width)
        width *= 2
    return np.ascontiguousarray(cur.reshape(-1))


def deinterleave_layout(packed: np.ndarray, g: int, lanes: int) -> np.ndarray:
    """Inverse of interleave_layout: bytes back to the index stream."""
    data = np.ascontiguousarray(packed, dtype=np.uint8).reshape(-1)
    per = indices_per_byte(g)
    if per == 1:
        return data.copy()
    if data.size % lanes != 0:
        raise LayoutError(
            f"byte span {data.size} not divisible by lanes={lanes}")
    cur = data.reshape(-1, lanes)
    width = 4
    while True:
        mask = np.uint8((1 << width) - 1)
        cur = np.concatenate([cur & mask, cur >> np.uint8(width)], axis=1)
        if width == slot_bits(g):
            break
        width //= 2
    return np.ascontiguousarray(cur.reshape(-1))


def build_decode_table(g: int) -> np.ndarray:
    """Per-byte-value index decode map used by the kernels.

    Row b lists the ``indices_per_byte(g)`` indices held by byte value b,
    in ascending k-group order.
    """
    per = indices_per_byte(g)
    table = np.empty((256, per), dtype=np.uint8)
    for b in range(256):
        table[b] = deinterleave_layout(
            np.array([b], dtype=np.uint8), g, lanes=1)
    return table


def _permute_plane(indices: np.ndarray, tile: TileConfig) -> np.ndarray:
    """Flatten (m, k/g) indices into the tile-major stream of layout v1."""
    m, kg_total = indices.shape
    mt, lanes = tile.m_tile, tile.lanes
    ktg = tile.k_groups_per_tile
    n_mb, n_kb, n_lb = m // mt, kg_total // ktg, mt // lanes
    t = indices.reshape(n_mb, mt, n_kb, ktg).transpose(0, 2, 1, 3)
    t = t.reshape(n_mb, n_kb, n_lb, lanes, ktg).transpose(0, 1, 2, 4, 3)
    return np.ascontiguousarray(t).reshape(-1)


def _unpermute_plane(stream: np.ndarray, tile: TileConfig, m: int,
                     kg_total: int) -> np.ndarray:
    mt, lanes = tile.m_tile, tile.lanes
    ktg = tile.k_groups_per_tile
    n_mb, n_kb, n_lb = m // mt, kg_total // ktg, mt // lanes
    t = stream.reshape(n_mb, n_kb, n_lb, ktg, lanes).transpose(0, 1, 2, 4, 3)
    t = t.reshape(n_mb, n_kb, mt, ktg).transpose(0, 2, 1, 3)
    return np.ascontiguousarray(t).reshape(m, kg_total)


def pack_and_permute(planes: list[BitPlane], tile: TileConfig,
                     scales: np.ndarray, group_size: int) -> PackedWeights:
    """Arrange bit planes into the kernel's tile-major interleaved layout.

    Tiles of (m_tile x k_tile/g) indices become contiguous byte spans,
    ordered k-blocks inner within an m-block; each span is flattened
    (lane-block, k-group, lane) and byte-interleaved.
    """
    if not planes:
        raise ParameterError("no bit planes given")
    g = planes[0].g
    m, kg_total = planes[0].indices.shape
    k = kg_total * g
    if tile.g != g:
        raise LayoutError(f"tile g={tile.g} does not match plane g={g}")
    if m % tile.m_tile != 0:
        raise LayoutError(
            f"m={m} not divisible by m_tile={tile.m_tile}")
    if kg_total % tile.k_groups_per_tile != 0:
        raise LayoutError(
            f"k={k} not divisible by k_tile={tile.k_tile}")
    if group_size % g != 0:
        raise LayoutError(
            f"group_size={group_size} not divisible by g={g}")
    if k % group_size != 0:
        raise LayoutError(
            f"k={k} not divisible by group_size={group_size}")
    packed = [interleave_layout(_permute_plane(p.indices, tile), g, tile.lanes)
              for p in planes]
    return PackedWeights(m=m, k=k, bits=len(planes), g=g,
                         group_size=group_size, tile=tile,
                         planes=np.ascontiguousarray(np.stack(packed)),
                         scales=np.ascontiguousarray(scales, dtype=np.float32))


def unpack_planes(pw: PackedWeights) -> list[BitPlane]:
    """Invert interleaving and permutation back to bit planes."""
    kg_total = pw.k // pw.g
    planes = []
    for i in range(pw.bits):
        stream = deinterleave_layout(pw.planes[i], pw.g, pw.tile.lanes)
        idx = _unpermute_plane(stream, pw.tile, pw.m, kg_total)
        planes.append(BitPlane(bit=i, g=pw.g, indices=idx))
    return planes


def prepare_weights(qw: QuantizedWeights, tile: TileConfig) -> PackedWeights:
    """Full offline pipeline: decompose, pack, permute, interleave."""
    planes = decompose_bits(qw, tile.g)
    return pack_and_permute(planes, tile, qw.scales, qw.group_size)


def serialize(pw: PackedWeights) -> bytes:
    """Encode packed weights as the LMPW byte stream (format version 1)."""
    scale_count = pw.scales.size
    header = _HEADER.pack(
        MAGIC, FORMAT_VERSION, pw.layout_version,
        pw.m, pw.k, pw.bits, pw.g, pw.group_size,
        pw.tile.n_tile, pw.tile.m_tile, pw.tile.k_tile, pw.tile.lanes,
        scale_count, pw.plane_bytes, pw.bits * pw.plane_bytes)
    out = bytearray(header)
    out += np.ascontiguousarray(pw.scales, dtype="<f4").tobytes()
    out += np.ascontiguousarray(pw.planes).tobytes()
    return bytes(out)


def _validate_index_range(planes: np.ndarray, g: int) -> None:
    """Reject payload bytes holding indices outside [0, 2**g).

    Only slot widths wider than g can encode invalid values (g=3 nibbles,
    g in [5, 7] bytes); the kernels index tables without bounds checks, so
    corrupt streams must be caught here, off the hot path.
    """
    if g == 3:
        if (planes & 0x88).any():
            raise PayloadLengthError("payload contains indices >= 8 for g=3")
    elif 5 <= g <= 7:
        if planes.max(initial=0) >= (1 << g):
            raise PayloadLengthError(
                f"payload contains indices out of range for g={g}")


def deserialize(data: bytes) -> PackedWeights:
    """Decode an LMPW stream, validating structure before building arrays."""
    if len(data) < 4 or data[:4] != MAGIC:
        raise BadMagicError(
            f"not an LMPW stream (magic {data[:4]!r})")
    if len(data) < _HEADER.size:
        raise TruncatedStreamError(
            f"stream ends inside the header ({len(data)} bytes)")
    (_, version, layout_version, m, k, bits, g, group_size,
     n_tile, m_tile, k_tile, lanes, scale_count, plane_bytes,
     payload_bytes) = _HEADER.unpack_from(data)
    if version != FORMAT_VERSION:
        raise FormatVersionError(
            f"unsupported format version {version} (expected {FORMAT_VERSION})")
    if layout_version != LAYOUT_VERSION:
        raise FormatVersionError(
            f"unsupported layout version {layout_version} "
            f"(expected {LAYOUT_VERSION})")
    if g < 1 or g > 8 or bits < 1 or bits > 4 or group_size < 1:
        raise PayloadLengthError("header fields out of range")
    if k % g != 0 or k % group_size != 0:
        raise PayloadLengthError("header dimensions are inconsistent")
    if scale_count != m * (k // group_size):
        raise PayloadLengthError(
            f"scale count {scale_count} disagrees with m={m}, k={k}, "
            f"group_size={group_size}")
    expected_plane = m * (k // g) // indices_per_byte(g)
    if plane_bytes != expected_plane:
        raise PayloadLengthError(
            f"plane size {plane_bytes} disagrees with header dimensions "
            f"(expected {expected_plane})")
    if payload_bytes != bits * plane_bytes:
        raise PayloadLengthError(
            f"declared payload {payload_bytes} disagrees with "
            f"bits={bits} x plane_bytes={plane_bytes}")
    expected_total = _HEADER.size + 4 * scale_count + bits * plane_bytes
    if len(data) < expected_total:
        raise TruncatedStreamError(
            f"stream has {len(data)} bytes, header declares {expected_total}")
    if len(data) > expected_total:
        raise PayloadLengthError(
            f"stream has {len(data)} bytes, header declares {expected_total}")
    off = _HEADER.size
    scales = np.frombuffer(data, dtype="<f4", count=scale_count, offset=off)
    scales = scales.reshape(m, k // group_size).astype(np.float32)
    off += 4 * scale_count
    planes = np.frombuffer(data, dtype=np.uint8,
                           count=bits * plane_bytes, offset=off)
    planes = np.ascontiguousarray(planes.reshape(bits, plane_bytes))
    _validate_index_range(planes, g)
    tile = TileConfig(n_tile=n_tile, m_tile=m_tile, k_tile=k_tile,
                      g=g, lanes=lanes)
    return PackedWeights(m=m, k=k, bits=bits, g=g, group_size=group_size,
                         tile=tile, planes=planes, scales=scales,
                         layout_version=layout_version)
