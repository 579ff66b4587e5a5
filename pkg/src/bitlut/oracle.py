"""Independent reference implementations used to validate the kernels.

Deliberately simple and kept free of any code shared with the optimized
path: table construction here is brute force over all bit patterns, and
the dequantization GEMM accumulates strictly in ascending k order.
"""
from __future__ import annotations

import numpy as np

from .core import BitSerialParams, Matrix, QuantizedWeights, dequantize
from .errors import ShapeError
from .weight_prep import BitPlane


def _activation_rows(a) -> np.ndarray:
    if isinstance(a, Matrix):
        arr = a.to_array()
    else:
        arr = np.ascontiguousarray(a, dtype=np.float32)
    if arr.ndim == 1:
        arr = arr.reshape(1, -1)
    return arr


def reference_gemm(a, w) -> np.ndarray:
    """Plain real GEMM (activations (N,K) times weights (M,K) transposed).

    Accumulates in float32 with a fixed ascending-k summation order, so
    results are reproducible across runs and platforms.
    """
    rows = _activation_rows(a)
    wm = w.to_array() if isinstance(w, Matrix) else \
        np.ascontiguousarray(w, dtype=np.float32)
    n, k = rows.shape
    if k != wm.shape[1]:
        raise ShapeError(f"activation length {k} != weight k {wm.shape[1]}")
    wt = np.ascontiguousarray(wm.T)         # (k, m), contiguous per k slice
    acc = np.zeros((n, wm.shape[0]), dtype=np.float32)
    for kk in range(k):
        acc += rows[:, kk:kk + 1] * wt[kk][None, :]
    return acc


def reference_mpgemm(a, qw: QuantizedWeights) -> np.ndarray:
    """Dequantize-then-multiply reference GEMM (triple-loop semantics)."""
    return reference_gemm(a, dequantize(qw))


def _full_tables_bruteforce(a_row: np.ndarray, g: int) -> np.ndarray:
    """All 2**g signed group sums, one sign pattern at a time."""
    k = a_row.shape[0]
    kg = k // g
    grouped = a_row.reshape(kg, g).astype(np.float32)
    table = np.empty((kg, 1 << g), dtype=np.float32)
    for idx in range(1 << g):
        signs = np.array([1.0 if (idx >> j) & 1 else -1.0 for j in range(g)],
                         dtype=np.float32)
        table[:, idx] = (grouped * signs[None, :]).sum(axis=1)
    return table


def reference_lut_mpgemv(a_row, planes: list[BitPlane],
                         params: BitSerialParams,
                         scales: np.ndarray) -> np.ndarray:
    """Literal table-lookup GEMV over full, unconsolidated tables.

    Evaluates the bit-serial combination directly: per quantization group,
    sum_i alpha_i 2**i P_i plus (combined_bias - 2**(bits-1)) times the
    group's activation sum, then the group scale.  No packing, tiling, or
    consolidation is involved, so this validates the offline pipeline and
    the kernels jointly.
    """
    row = np.ascontiguousarray(a_row, dtype=np.float32).reshape(-1)
    g = planes[0].g
    k = row.shape[0]
    m, kg_total = planes[0].indices.shape
    if kg_total * g != k:
        raise ShapeError("plane width does not match activation length")
    n_groups = scales.shape[1]
    if k % n_groups != 0:
        raise ShapeError("scales width does not divide k")
    group_size = k // n_groups
    gpg = group_size // g

    table = _full_tables_bruteforce(row, g)
    offset = float(1 << (params.bits - 1))
    bias_per_unit = params.combined_bias - offset
    group_sums = row.reshape(n_groups, group_size).sum(axis=1)

    out = np.zeros(m, dtype=np.float32)
    kg_idx = np.arange(kg_total)
    per_group = np.zeros((m, n_groups), dtype=np.float32)
    for i, plane in enumerate(planes):
        looked = table[kg_idx[None, :], plane.indices]  # (m, kg_total)
        partial = looked.reshape(m, n_groups, gpg).sum(axis=2)
        per_group += np.float32(params.alpha[i] * (1 << i)) * partial
    per_group += np.float32(bias_per_unit) * group_sums[None, :]
    out = (per_group * scales).sum(axis=1, dtype=np.float32)
    return out.astype(np.float32)
