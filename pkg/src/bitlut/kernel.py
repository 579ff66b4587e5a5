"""Tiled lookup-accumulate mpGEMV/mpGEMM over packed weights.

The hot loops live in _kernels (jitted); this module owns table
construction, variant dispatch, validation, threading, and the
instrumentation counters.

Loop nest (all variants): tables for the activation block are built once
per k-block, hoisted before any weight traversal, then weights stream in
layout order (m-blocks outer, k-blocks inner) so every byte is read
exactly once.  Integer partials of quantized variants are staged per
quantization group and converted to real exactly once per group.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from enum import Enum

import numpy as np

from . import _kernels
from .core import Matrix, TileConfig
from .errors import (DataError, LayoutError, OverflowConfigError,
                     ParameterError, ShapeError)
from .lut_build import (REAL, LookupTables, mirror_consolidate,
                        precompute_lut, quantize_tables, row_sums)
from .weight_prep import LAYOUT_VERSION, PackedWeights, build_decode_table

INT32_MAX = 2**31 - 1


class KernelVariant(Enum):
    """Kernel execution strategies; scalar_real is the semantic reference."""

    SCALAR_REAL = "scalar-real"
    SCALAR_QUANTIZED = "scalar-q8"
    VECTOR_QUANTIZED = "vector-q8"
    FAST_AGGREGATION = "fast-agg"


@dataclass
class KernelStats:
    """Instrumentation counters accumulated across kernel calls."""

    lookups: int = 0
    lut_builds: int = 0


@dataclass
class Accumulators:
    """Per-output-channel accumulation state for one tile walk.

    Quantized paths stage int32 partial sums per quantization group and
    convert to real at group boundaries; the real path accumulates
    float32 directly.
    """

    real: np.ndarray
    integer: np.ndarray

    @classmethod
    def zeros(cls, channels: int) -> "Accumulators":
        return cls(real=np.zeros(channels, dtype=np.float32),
                   integer=np.zeros(channels, dtype=np.int32))


def validate_kernel_config(tile: TileConfig, bits: int, group_size: int,
                           m: int, k: int) -> None:
    """Reject configurations the kernels cannot run safely.

    The integer staging bound requires that a full quantization group of
    int8 lookups cannot overflow a 32-bit accumulator; violating configs
    are rejected outright rather than clamped.
    """
    if group_size % tile.g != 0:
        raise LayoutError(
            f"group_size={group_size} not divisible by g={tile.g}")
    if m % tile.m_tile != 0:
        raise LayoutError(f"m={m} not divisible by m_tile={tile.m_tile}")
    if k % tile.k_tile != 0:
        raise LayoutError(f"k={k} not divisible by k_tile={tile.k_tile}")
    if k % group_size != 0:
        raise LayoutError(f"k={k} not divisible by group_size={group_size}")
    if (group_size // tile.g) * 127 > INT32_MAX:
        raise OverflowConfigError(
            f"group accumulation bound exceeded: {group_size // tile.g} "
            f"lookups of magnitude 127 cannot be staged in int32")


def _check_layout_match(cfg: TileConfig, pw: PackedWeights) -> None:
    if pw.layout_version != LAYOUT_VERSION:
        raise LayoutError(
            f"packed weights use layout version {pw.layout_version}, "
            f"kernel implements {LAYOUT_VERSION}")
    t = pw.tile
    if (cfg.m_tile, cfg.k_tile, cfg.g, cfg.lanes) != \
            (t.m_tile, t.k_tile, t.g, t.lanes):
        raise LayoutError(
            "tile config does not match the layout the weights were packed "
            f"for: {cfg} vs {t}")


def bias_correction(depth: int) -> float:
    """Expected upward bias of a balanced rounding-halving-add tree.

    Each halving add rounds ties up, contributing +1/4 expected at its own
    scale; summing over all 2**depth - 1 nodes of the rescaled tree gives
    depth * 2**(depth-2).  Validated empirically in the test suite.
    """
    if depth < 0:
        raise ParameterError("depth must be >= 0")
    return depth * 2.0 ** (depth - 2)


def chain_bias_correction(depth: int, bits: int) -> float:
    """Expected bias of the fused kernel tree (per-plane trees + plane chain).

    The chain weights bit plane i by 2**(i-1) via repeated halving; under
    uniform tie parity the expectation is
    ``2**(depth-1) * (2**bits - 1) * (depth + 2) / 4``.
    """
    if depth < 0 or bits < 1:
        raise ParameterError("invalid fast-aggregation shape")
    return 2.0 ** (depth - 1) * (2**bits - 1) * (depth + 2) / 4.0


def rhadd(a: int, b: int) -> int:
    """Rounding halving add: (a + b + 1) >> 1, ties round up."""
    return (int(a) + int(b) + 1) >> 1


def rhadd_tree(values) -> int:
    """Balanced pairwise rhadd reduction of a power-of-two value list."""
    vals = [int(v) for v in values]
    if len(vals) == 0 or len(vals) & (len(vals) - 1):
        raise ParameterError("rhadd_tree needs a power-of-two value count")
    while len(vals) > 1:
        vals = [rhadd(vals[2 * i], vals[2 * i + 1])
                for i in range(len(vals) // 2)]
    return vals[0]


def fast_aggregate(partials, depth: int) -> float:
    """Approximate the sum of 2**depth 8-bit partials via an rhadd tree.

    Returns ``tree * 2**depth - bias_correction(depth)``; approximate by
    construction and excluded from the exactness guarantees.
    """
    vals = np.asarray(partials)
    if vals.size != 1 << depth:
        raise ParameterError(
            f"expected {1 << depth} partials for depth {depth}, "
            f"got {vals.size}")
    return float(rhadd_tree(vals)) * (1 << depth) - bias_correction(depth)


def byte_parallel_lookup(table: np.ndarray, indices: np.ndarray) -> np.ndarray:
    """Abstract byte-shuffle primitive: looked-up bytes for index bytes.

    Semantics, not instructions, are normative: given table bytes and L
    index bytes, return the L table bytes the indices select.
    """
    tab = np.asarray(table)
    idx = np.asarray(indices, dtype=np.uint8)
    if tab.ndim != 1:
        raise ShapeError("table must be one-dimensional")
    if idx.max(initial=0) >= tab.shape[0]:
        raise ParameterError("lookup index out of table range")
    return tab[idx]


def wide_lookup(table_lo: np.ndarray, table_hi: np.ndarray,
                indices: np.ndarray) -> np.ndarray:
    """Wide-table mode: 16-bit lookups as two byte lookups, recombined.

    ``table_lo``/``table_hi`` hold the low and high bytes of the 16-bit
    entries; the result is the exact int16 table value.
    """
    lo = byte_parallel_lookup(np.asarray(table_lo, dtype=np.uint8), indices)
    hi = byte_parallel_lookup(np.asarray(table_hi, dtype=np.uint8), indices)
    return ((hi.astype(np.int16) << 8) | lo.astype(np.int16)).astype(np.int16)


def split_wide_table(table_i16: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Split an int16 table into (low, high) byte planes for wide_lookup."""
    t = np.asarray(table_i16, dtype=np.int16)
    return (t & 0xFF).astype(np.uint8), ((t >> 8) & 0xFF).astype(np.uint8)


def lookup_accumulate_tile(indices: np.ndarray, lut: LookupTables,
                           acc: Accumulators, row: int = 0,
                           kg_offset: int = 0) -> Accumulators:
    """Accumulate one tile of lookups into per-channel accumulators.

    ``indices`` has shape (channels, k_groups); channel c accumulates the
    sum over the tile's k-groups of the (mirror-reconstructed) table value
    selected by indices[c, kg].  Real tables feed the real accumulator,
    quantized tables the integer one.
    """
    idx = np.asarray(indices)
    if idx.ndim != 2:
        raise ShapeError("index tile must be 2-D")
    if idx.max(initial=0) >= (1 << lut.g):
        raise ParameterError("tile contains indices out of range")
    half = 1 << (lut.g - 1)
    mask = (1 << lut.g) - 1
    ii = idx.astype(np.int32)
    if lut.consolidated:
        flip = ii >> (lut.g - 1)
        eff = ii ^ (flip * mask)
    else:
        flip = np.zeros_like(ii)
        eff = ii
    kg = kg_offset + np.arange(idx.shape[1])
    if lut.mode == REAL:
        vals = lut.entries[row, kg[None, :], eff]
        vals = np.where(flip == 1, -vals, vals)
        acc.real += vals.sum(axis=1, dtype=np.float32)
    else:
        vals = lut.qentries[row, kg[None, :], eff].astype(np.int32)
        vals = np.where(flip == 1, -vals, vals)
        acc.integer += vals.sum(axis=1, dtype=np.int32)
    return acc


def _build_block_tables(rows: np.ndarray, cfg: TileConfig, group_size: int,
                        quantized: bool, stats: KernelStats | None):
    """Hoisted per-k-block table construction for one activation block.

    Returns (tables array, table_scales or None, rowsums array); counts
    one build event per k-block and checks the working-set accounting.
    """
    n, k = rows.shape
    ktg = cfg.k_groups_per_tile
    half = 1 << (cfg.g - 1)
    parts = []
    for kb in range(k // cfg.k_tile):
        seg = rows[:, kb * cfg.k_tile:(kb + 1) * cfg.k_tile]
        block = mirror_consolidate(precompute_lut(seg, cfg.g))
        assert block.table_bytes == cfg.lut_working_set_entries(n) * 4
        assert block.entries.shape == (n, ktg, half)
        if stats is not None:
            stats.lut_builds += 1
        parts.append(block.entries)
    entries = np.ascontiguousarray(np.concatenate(parts, axis=1))
    lut = LookupTables(g=cfg.g, mode=REAL, consolidated=True, entries=entries)
    sums = row_sums(rows, group_size).sums
    if not quantized:
        return lut.entries, None, sums
    q = quantize_tables(lut, group_size)
    return q.qentries, q.table_scales, sums


def _mb_slices(n_mb: int, threads: int) -> list[tuple[int, int]]:
    workers = max(1, min(threads, n_mb))
    base, extra = divmod(n_mb, workers)
    slices, start = [], 0
    for w in range(workers):
        size = base + (1 if w < extra else 0)
        if size:
            slices.append((start, start + size))
        start += size
    return slices


def _activation_rows(a) -> np.ndarray:
    if isinstance(a, Matrix):
        arr = a.to_array()
    else:
        arr = np.ascontiguousarray(a, dtype=np.float32)
        if arr.ndim == 1:
            arr = arr.reshape(1, -1)
        if arr.ndim != 2:
            raise ShapeError("activations must be 1-D or 2-D")
        if not np.isfinite(arr).all():
            raise DataError("activations contain non-finite values")
    return arr


def mpgemm(a, pw: PackedWeights, cfg: TileConfig | None = None,
           variant: KernelVariant | str = KernelVariant.SCALAR_REAL,
           threads: int = 1, stats: KernelStats | None = None) -> np.ndarray:
    """Mixed-precision GEMM: real activations times packed low-bit weights.

    Rows are processed in blocks of ``cfg.n_tile``; per block, all lookup
    tables are built k-block by k-block before any weight byte is read,
    then every row streams the weights in layout order.  Parallel runs
    partition the output channels into disjoint slices, so results are
    identical for any thread count.

    Returns the (N, M) float32 result array.
    """
    variant = KernelVariant(variant)
    cfg = pw.tile if cfg is None else cfg
    if cfg.n_tile < 1:
        raise ParameterError("n_tile must be >= 1")
    _check_layout_match(cfg, pw)
    validate_kernel_config(cfg, pw.bits, pw.group_size, pw.m, pw.k)
    rows = _activation_rows(a)
    n, k = rows.shape
    if k != pw.k:
        raise ShapeError(f"activation length {k} != weight k {pw.k}")
    if threads < 1:
        raise ParameterError("threads must be >= 1")

    decode = build_decode_table(cfg.g)
    per = decode.shape[1]
    quantized = variant is not KernelVariant.SCALAR_REAL
    gpg = pw.group_size // cfg.g
    ktg = cfg.k_groups_per_tile
    if variant is KernelVariant.FAST_AGGREGATION:
        seg_len = min(ktg, gpg)
        if seg_len & (seg_len - 1):
            raise ParameterError(
                f"fast aggregation needs a power-of-two tree width, got "
                f"min(k_tile/g, group_size/g) = {seg_len}")
        if gpg % seg_len != 0:
            raise ParameterError(
                "fast aggregation requires tree segments to align with "
                "quantization groups")
        depth = seg_len.bit_length() - 1
        fa_bias = np.float32(chain_bias_correction(depth, pw.bits))

    out = np.zeros((n, pw.m), dtype=np.float32)
    n_mb = pw.m // cfg.m_tile
    slices = _mb_slices(n_mb, threads)

    def run_row(row_out, tabs_r, tscales_r, sums_r, mb0, mb1, counters):
        args = (pw.planes, decode)
        common = (row_out, counters, pw.k, pw.bits, cfg.g, per,
                  cfg.m_tile, cfg.k_tile, cfg.lanes, pw.group_size)
        if variant is KernelVariant.SCALAR_REAL:
            _kernels.gemv_real(*args, tabs_r, pw.scales, sums_r,
                               *common, mb0, mb1)
        elif variant is KernelVariant.VECTOR_QUANTIZED:
            _kernels.gemv_q8_vector(*args, tabs_r, tscales_r, pw.scales,
                                    sums_r, *common, mb0, mb1)
        elif variant is KernelVariant.SCALAR_QUANTIZED:
            _kernels.gemv_q8_scalar(*args, tabs_r, tscales_r, pw.scales,
                                    sums_r, *common, mb0, mb1)
        else:
            _kernels.gemv_q8_fast_agg(*args, tabs_r, tscales_r, pw.scales,
                                      sums_r, *common, seg_len, depth,
                                      fa_bias, mb0, mb1)

    for n0 in range(0, n, cfg.n_tile):
        block = rows[n0:n0 + cfg.n_tile]
        tabs, tscales, sums = _build_block_tables(
            block, cfg, pw.group_size, quantized, stats)
        for r in range(block.shape[0]):
            row_out = out[n0 + r]
            tabs_r = tabs[r]
            tscales_r = tscales[r] if tscales is not None \
                else np.empty(0, dtype=np.float32)
            sums_r = sums[r]
            counter_parts = [np.zeros(2, dtype=np.int64) for _ in slices]
            if len(slices) == 1 or threads == 1:
                for (mb0, mb1), counters in zip(slices, counter_parts):
                    run_row(row_out, tabs_r, tscales_r, sums_r,
                            mb0, mb1, counters)
            else:
                with ThreadPoolExecutor(max_workers=len(slices)) as pool:
                    futs = [pool.submit(run_row, row_out, tabs_r, tscales_r,
                                        sums_r, mb0, mb1, counters)
                            for (mb0, mb1), counters
                            in zip(slices, counter_parts)]
                    for f in futs:
                        f.result()
            if stats is not None:
                stats.lookups += int(sum(c[0] for c in counter_parts))
    return out


def mpgemv(a_row, pw: PackedWeights, cfg: TileConfig | None = None,
           variant: KernelVariant | str = KernelVariant.SCALAR_REAL,
           threads: int = 1, stats: KernelStats | None = None) -> np.ndarray:
    """Mixed-precision GEMV: one activation row, returns a length-M vector."""
    row = np.ascontiguousarray(a_row, dtype=np.float32)
    if row.ndim != 1:
        raise ShapeError("mpgemv expects a 1-D activation row")
    return mpgemm(row.reshape(1, -1), pw, cfg=cfg, variant=variant,
                  threads=threads, stats=stats)[0]
