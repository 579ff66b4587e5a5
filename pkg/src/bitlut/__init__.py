"""bitlut: lookup-table mixed-precision matrix multiplication on CPU.

Low-bit weights are decomposed into one-bit planes offline; at run time
per-activation lookup tables turn the inner products into table lookups
and additions, so kernel work scales linearly with the weight bit width.
"""

from .core import (DEFAULT_GROUP_SIZE, DEFAULT_TILE, BitSerialParams, Matrix,
                   QuantizedWeights, TileConfig, bit_serial_params,
                   dequantize, quantize_weights)
from .kernel import (Accumulators, KernelStats, KernelVariant, fast_aggregate,
                     mpgemm, mpgemv)
from .lut_build import (LookupTables, RowSums, mirror_consolidate,
                        precompute_lut, quantize_tables, row_sums)
from .oracle import reference_lut_mpgemv, reference_mpgemm
from .tuner import TuneResult, enumerate_configs, tune
from .weight_prep import (BitPlane, PackedWeights, decompose_bits,
                          deserialize, interleave_layout, pack_and_permute,
                          pad_weights, prepare_weights, serialize,
                          unpack_planes)

__version__ = "0.1.0"

__all__ = [
    "Accumulators", "BitPlane", "BitSerialParams", "DEFAULT_GROUP_SIZE",
    "DEFAULT_TILE", "KernelStats", "KernelVariant", "LookupTables", "Matrix",
    "PackedWeights", "QuantizedWeights", "RowSums", "TileConfig",
    "TuneResult", "bit_serial_params", "decompose_bits", "dequantize",
    "deserialize", "enumerate_configs", "fast_aggregate",
    "interleave_layout", "mirror_consolidate", "mpgemm", "mpgemv",
    "pack_and_permute", "pad_weights", "precompute_lut", "prepare_weights",
    "quantize_tables", "quantize_weights", "reference_lut_mpgemv",
    "reference_mpgemm", "row_sums", "serialize", "unpack_planes",
]
