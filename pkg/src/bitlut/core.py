"""Core domain types: matrices, quantized weights, tiling, bit-serial algebra.

All types are immutable value objects; arrays they hold are treated as
read-only after construction and are safe to share across threads.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, LayoutError, ParameterError, ShapeError

DEFAULT_GROUP_SIZE = 32
DEFAULT_LANES = 16


def slot_bits(g: int) -> int:
    """Bit width of one packed index slot for group size ``g``.

    Indices are stored in power-of-two slots so unpacking needs only
    mask/shift operations: 4-bit slots for g in {3,4}, 2-bit for g=2,
    1-bit for g=1, one full byte for g >= 5.
    """
    if not 1 <= g <= 8:
        raise ParameterError(f"g must be in [1, 8], got {g}")
    if g == 1:
        return 1
    if g == 2:
        return 2
    if g <= 4:
        return 4
    return 8


def indices_per_byte(g: int) -> int:
    return 8 // slot_bits(g)


@dataclass(frozen=True)
class Matrix:
    """Row-major real matrix (32-bit precision semantics).

    ``data`` may be a row-sliced view, so ``stride`` (elements per stored
    row) can exceed ``cols``.  All values must be finite.
    """

    data: np.ndarray

    def __post_init__(self):
        a = self.data
        if a.ndim != 2:
            raise ShapeError(f"matrix data must be 2-D, got {a.ndim}-D")
        if a.dtype != np.float32:
            raise ParameterError(f"matrix data must be float32, got {a.dtype}")
        if a.strides[1] != a.itemsize:
            raise LayoutError("matrix rows must be contiguous")
        if a.strides[0] % a.itemsize != 0 or a.strides[0] < a.shape[1] * a.itemsize:
            raise LayoutError("row stride must be >= cols")
        if not np.isfinite(a).all():
            raise DataError("matrix contains non-finite values")

    @classmethod
    def from_array(cls, arr) -> "Matrix":
        a = np.ascontiguousarray(arr, dtype=np.float32)
        if a.ndim == 1:
            a = a.reshape(1, -1)
        return cls(a)

    @property
    def rows(self) -> int:
        return self.data.shape[0]

    @property
    def cols(self) -> int:
        return self.data.shape[1]

    @property
    def stride(self) -> int:
        return self.data.strides[0] // self.data.itemsize

    def to_array(self) -> np.ndarray:
        return np.ascontiguousarray(self.data)


@dataclass(frozen=True)
class QuantizedWeights:
    """Low-bit weight matrix with per-group scales along the reduction dim.

    Dequantized value is ``scale[m][k // group_size] * (q - 2**(bits-1))``:
    a symmetric scheme with the zero point fixed at the implicit offset
    ``2**(bits-1)``.  Scales may be negative or zero (zero groups).
    """

    m: int
    k: int
    bits: int
    group_size: int
    qvalues: np.ndarray  # uint8, shape (m, k)
    scales: np.ndarray   # float32, shape (m, k // group_size)

    def __post_init__(self):
        if not 1 <= self.bits <= 4:
            raise ParameterError(f"bits must be in [1, 4], got {self.bits}")
        if self.group_size < 1:
            raise ParameterError("group_size must be positive")
        if self.k % self.group_size != 0:
            raise LayoutError(
                f"k={self.k} not divisible by group_size={self.group_size}")
        if self.qvalues.shape != (self.m, self.k):
            raise ShapeError("qvalues shape mismatch")
        if self.scales.shape != (self.m, self.k // self.group_size):
            raise ShapeError("scales shape mismatch")
        if self.qvalues.dtype != np.uint8:
            raise ParameterError("qvalues must be uint8")
        if self.qvalues.max(initial=0) >= (1 << self.bits):
            raise DataError(f"qvalues exceed {self.bits}-bit range")
        if not np.isfinite(self.scales).all():
            raise DataError("scales contain non-finite values")

    @property
    def offset(self) -> int:
        return 1 << (self.bits - 1)

    @property
    def n_groups(self) -> int:
        return self.k // self.group_size


@dataclass(frozen=True)
class BitSerialParams:
    """Constants of the linear bit remapping f(v) = s0 + (s1-s0)*v.

    With s0 = -1 and s1 = +1 each bit value v in {0, 1} is recovered as
    v = alpha*f(v) + beta with alpha = beta = 1/2, so an integer with the
    given bit count satisfies
    ``value == sum_i alpha[i] * 2**i * f(bit_i) + combined_bias`` exactly
    (every quantity is a multiple of 1/2).
    """

    bits: int
    s0: float = -1.0
    s1: float = 1.0
    alpha: tuple = field(default=())
    beta: tuple = field(default=())
    combined_bias: float = 0.0

    def map_bit(self, v: int) -> float:
        return self.s0 + (self.s1 - self.s0) * v

    def reconstruct(self, value: int) -> float:
        acc = self.combined_bias
        for i in range(self.bits):
            acc += self.alpha[i] * (1 << i) * self.map_bit((value >> i) & 1)
        return acc


def bit_serial_params(bits: int) -> BitSerialParams:
    """Build the bit-serial constants for a given weight bit width."""
    if not isinstance(bits, (int, np.integer)) or not 1 <= bits <= 4:
        raise ParameterError(f"bits must be an integer in [1, 4], got {bits!r}")
    bits = int(bits)
    alpha = (0.5,) * bits
    beta = (0.5,) * bits
    combined_bias = sum(b * (1 << i) for i, b in enumerate(beta))
    return BitSerialParams(bits=bits, alpha=alpha, beta=beta,
                           combined_bias=combined_bias)


@dataclass(frozen=True)
class TileConfig:
    """Loop-nest tiling parameters for the lookup kernels.

    ``lanes`` is the width of the byte-parallel lookup primitive;
    ``g`` is the number of one-bit weights forming one table index.
    """

    n_tile: int = 1
    m_tile: int = 32
    k_tile: int = 128
    g: int = 4
    lanes: int = DEFAULT_LANES

    def __post_init__(self):
        if not 1 <= self.g <= 8:
            raise ParameterError(f"g must be in [1, 8], got {self.g}")
        if self.n_tile < 1:
            raise ParameterError("n_tile must be >= 1")
        if self.lanes < 1:
            raise ParameterError("lanes must be >= 1")
        if self.k_tile % self.g != 0:
            raise LayoutError(
                f"k_tile={self.k_tile} not divisible by g={self.g}")
        if self.m_tile % self.lanes != 0:
            raise LayoutError(
                f"m_tile={self.m_tile} not divisible by lanes={self.lanes}")
        ipb = indices_per_byte(self.g)
        if (self.k_tile // self.g) % ipb != 0:
            raise LayoutError(
                f"k_tile/g={self.k_tile // self.g} not divisible by the "
                f"packing density {ipb} for g={self.g}")

    @property
    def k_groups_per_tile(self) -> int:
        return self.k_tile // self.g

    def lut_working_set_entries(self, n_rows: int | None = None) -> int:
        """Entries held for one activation block after mirror consolidation."""
        n = self.n_tile if n_rows is None else n_rows
        return n * self.k_groups_per_tile * (1 << (self.g - 1))


DEFAULT_TILE = TileConfig()


def _as_weight_array(w) -> np.ndarray:
    if isinstance(w, Matrix):
        return w.to_array()
    a = np.ascontiguousarray(w, dtype=np.float32)
    if a.ndim != 2:
        raise ShapeError("weights must be 2-D")
    if not np.isfinite(a).all():
        raise DataError("weights contain non-finite values")
    return a


def quantize_weights(w, bits: int, group_size: int = DEFAULT_GROUP_SIZE,
                     refine: bool = True) -> QuantizedWeights:
    """Round-to-nearest group quantization with per-group real scales.

    Each group of ``group_size`` consecutive weights along K gets one
    scale.  The baseline scale maps the extreme element of the group to
    exactly ``-2**(bits-1)`` (signed-amax rule, no clipping error on the
    extreme).  With ``refine`` a small candidate search plus a
    least-squares scale refit minimizes the group reconstruction error;
    the rounding itself stays round-to-nearest throughout.

    Args:
        w: real weight matrix (Matrix or array), shape (M, K).
        bits: target weight width in [1, 4].
        group_size: quantization group length along K; must divide K.
        refine: enable the scale search/refit (slower, lower error).

    Returns:
        QuantizedWeights with uint8 qvalues and float32 scales.
    """
    from ._kernels import quantize_groups

    if not 1 <= bits <= 4:
        raise ParameterError(f"bits must be in [1, 4], got {bits}")
    a = _as_weight_array(w)
    m, k = a.shape
    if k % group_size != 0:
        raise LayoutError(f"k={k} not divisible by group_size={group_size}")
    grouped = np.ascontiguousarray(a.reshape(-1, group_size))
    q = np.empty(grouped.shape, dtype=np.uint8)
    d = np.empty(len(grouped), dtype=np.float32)
    nstep = 9 if refine else 0
    quantize_groups(grouped, 1 << (bits - 1), nstep, q, d)
    return QuantizedWeights(m=m, k=k, bits=bits, group_size=group_size,
                            qvalues=q.reshape(m, k),
                            scales=d.reshape(m, k // group_size))


def dequantize(qw: QuantizedWeights) -> Matrix:
    """Expand quantized weights back to a real matrix.

    Entry (m, k) becomes ``scale[m][k // group_size] * (q - 2**(bits-1))``.
    """
    grouped = qw.qvalues.reshape(qw.m, qw.n_groups, qw.group_size)
    out = (grouped.astype(np.float32) - np.float32(qw.offset)) \
        * qw.scales[:, :, None]
    return Matrix(np.ascontiguousarray(out.reshape(qw.m, qw.k)))
