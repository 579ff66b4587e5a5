"""Online construction of activation lookup tables.

A table for one activation group of length g holds the signed sums of the
group under every bit pattern: entry idx sums +A[j] where bit j of idx is
set and -A[j] where clear.  Tables are sign-symmetric, so only the half
with the top index bit clear is stored (mirror consolidation); the other
half is the stored half negated at complementary indices.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataError, LayoutError, ParameterError, ShapeError

REAL = "real"
QUANTIZED8 = "quantized8"


@dataclass(frozen=True)
class LookupTables:
    """Per-activation-row lookup tables, real-valued or 8-bit quantized.

    ``entries``/``qentries`` have shape (n, K/g, width) where width is
    ``2**g`` before consolidation and ``2**(g-1)`` after.  In quantized8
    mode ``table_scales`` holds one dynamic scale per (row, quantization
    group of the reduction dim) and entries satisfy
    |entry - qentry * scale| <= scale / 2.
    """

    g: int
    mode: str
    consolidated: bool
    entries: np.ndarray | None = None
    qentries: np.ndarray | None = None
    table_scales: np.ndarray | None = None
    group_size: int | None = None

    def __post_init__(self):
        if self.mode not in (REAL, QUANTIZED8):
            raise ParameterError(f"unknown table mode {self.mode!r}")
        arr = self.entries if self.mode == REAL else self.qentries
        if arr is None or arr.ndim != 3:
            raise ShapeError("table entries must be a 3-D array")
        width = 1 << (self.g - 1) if self.consolidated else 1 << self.g
        if arr.shape[2] != width:
            raise ShapeError(
                f"table width {arr.shape[2]} does not match g={self.g} "
                f"(consolidated={self.consolidated})")
        if self.mode == QUANTIZED8:
            if self.table_scales is None or self.group_size is None:
                raise ParameterError("quantized tables need scales and group_size")
            if abs(self.qentries).max(initial=0) > 127:
                raise DataError("quantized table entries exceed int8 range")

    @property
    def n(self) -> int:
        return (self.entries if self.mode == REAL else self.qentries).shape[0]

    @property
    def k_groups(self) -> int:
        return (self.entries if self.mode == REAL else self.qentries).shape[1]

    @property
    def table_bytes(self) -> int:
        arr = self.entries if self.mode == REAL else self.qentries
        return arr.nbytes

    def lookup(self, row: int, kg: int, idx: int) -> float:
        """Definitional single-entry lookup with mirror reconstruction."""
        if not 0 <= idx < (1 << self.g):
            raise ParameterError(f"index {idx} out of range for g={self.g}")
        half = 1 << (self.g - 1)
        flip = self.consolidated and idx >= half
        eff = ((1 << self.g) - 1) - idx if flip else idx
        if self.mode == REAL:
            v = float(self.entries[row, kg, eff])
        else:
            gpg = self.group_size // self.g
            v = float(self.qentries[row, kg, eff]) \
                * float(self.table_scales[row, kg // gpg])
        return -v if flip else v


@dataclass(frozen=True)
class RowSums:
    """Per-(activation row, quantization group) sums of activation values."""

    sums: np.ndarray  # float32 (n, K // group_size)
    group_size: int


def _as_rows(a) -> np.ndarray:
    arr = np.ascontiguousarray(a, dtype=np.float32)
    if arr.ndim == 1:
        arr = arr.reshape(1, -1)
    if arr.ndim != 2:
        raise ShapeError("activations must be 1-D or 2-D")
    if not np.isfinite(arr).all():
        raise DataError("activations contain non-finite values")
    return arr


def precompute_lut(a, g: int) -> LookupTables:
    """Build full 2**g real tables for each activation row.

    Entry (row, kg, idx) equals the signed sum over j of A[row, kg*g + j]
    with sign +1 when bit j of idx is set, summed in ascending j.  The
    tables are built by successive doubling (append +/- the next element),
    which performs the same additions in the same order as the definition,
    so results are bit-identical while needing only O(2**g) additions per
    group.
    """
    if not 1 <= g <= 8:
        raise ParameterError(f"g must be in [1, 8], got {g}")
    rows = _as_rows(a)
    n, k = rows.shape
    if k % g != 0:
        raise LayoutError(f"activation length {k} not divisible by g={g}")
    ag = rows.reshape(n, k // g, g)
    cur = np.stack([-ag[:, :, 0], ag[:, :, 0]], axis=2)
    for j in range(1, g):
        aj = ag[:, :, j:j + 1]
        cur = np.concatenate([cur - aj, cur + aj], axis=2)
    return LookupTables(g=g, mode=REAL, consolidated=False,
                        entries=np.ascontiguousarray(cur))


def mirror_consolidate(lut: LookupTables) -> LookupTables:
    """Drop the sign-mirrored half of full real tables.

    Keeps indices with the top bit clear; a lookup of idx with the top
    bit set is recovered as ``-stored[(2**g - 1) ^ idx]``.  Lossless.
    """
    if lut.mode != REAL or lut.consolidated:
        raise ParameterError("mirror_consolidate expects full real tables")
    half = 1 << (lut.g - 1)
    entries = lut.entries
    if not np.array_equal(entries[:, :, half:], -entries[:, :, half - 1::-1]):
        raise DataError("tables are not sign-symmetric")
    return LookupTables(g=lut.g, mode=REAL, consolidated=True,
                        entries=np.ascontiguousarray(entries[:, :, :half]))


def reconstruct_full(lut: LookupTables) -> np.ndarray:
    """Inverse of mirror_consolidate (real mode), for verification."""
    if lut.mode != REAL or not lut.consolidated:
        raise ParameterError("reconstruct_full expects consolidated real tables")
    return np.concatenate([lut.entries, -lut.entries[:, :, ::-1]], axis=2)


def quantize_tables(lut: LookupTables, group_size: int) -> LookupTables:
    """Dynamic symmetric int8 quantization of consolidated tables.

    One scale per (row, quantization group along K): the per-group max
    magnitude maps to 127 (scale 1 for all-zero groups).  Entries round
    half away from zero, so negating an entry negates its quantized value
    exactly and mirror reconstruction stays sign-exact.
    """
    if lut.mode != REAL or not lut.consolidated:
        raise ParameterError("quantize_tables expects consolidated real tables")
    if group_size % lut.g != 0:
        raise LayoutError(
            f"group_size={group_size} not divisible by g={lut.g}")
    gpg = group_size // lut.g
    n, kg, width = lut.entries.shape
    if kg % gpg != 0:
        raise LayoutError(
            f"k={kg * lut.g} not divisible by group_size={group_size}")
    grouped = lut.entries.reshape(n, kg // gpg, gpg * width)
    scales = np.abs(grouped).max(axis=2) / np.float32(127.0)
    scales = np.where(scales == 0.0, np.float32(1.0), scales).astype(np.float32)
    scaled = lut.entries / scales.repeat(gpg, axis=1)[:, :, None]
    q = np.trunc(scaled + np.copysign(np.float32(0.5), scaled))
    q = np.clip(q, -127, 127).astype(np.int8)
    return LookupTables(g=lut.g, mode=QUANTIZED8, consolidated=True,
                        qentries=np.ascontiguousarray(q),
                        table_scales=scales, group_size=group_size)


def row_sums(a, group_size: int) -> RowSums:
    """Exact per-group activation sums, accumulated left to right."""
    rows = _as_rows(a)
    n, k = rows.shape
    if group_size < 1:
        raise ParameterError("group_size must be positive")
    if k % group_size != 0:
        raise LayoutError(f"k={k} not divisible by group_size={group_size}")
    ag = rows.reshape(n, k // group_size, group_size)
    acc = np.zeros((n, k // group_size), dtype=np.float32)
    for j in range(group_size):
        acc += ag[:, :, j]
    return RowSums(sums=acc, group_size=group_size)
