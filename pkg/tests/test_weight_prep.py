import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from bitlut import (QuantizedWeights, TileConfig, decompose_bits, dequantize,
                    deserialize, interleave_layout, pack_and_permute,
                    pad_weights, prepare_weights, quantize_weights, serialize,
                    unpack_planes)
from bitlut.core import indices_per_byte, slot_bits
from bitlut.errors import (BadMagicError, FormatVersionError, LayoutError,
                           PayloadLengthError, TruncatedStreamError)
from bitlut.weight_prep import (build_decode_table, deinterleave_layout,
                                _permute_plane)


def _qw(values, bits, group_size=4, scales=None):
    q = np.asarray(values, dtype=np.uint8)
    m, k = q.shape
    if scales is None:
        scales = np.ones((m, k // group_size), dtype=np.float32)
    return QuantizedWeights(m=m, k=k, bits=bits, group_size=group_size,
                            qvalues=q, scales=np.asarray(scales,
                                                         dtype=np.float32))


class TestDecompose:
    def test_two_bit_example_row(self):
        planes = decompose_bits(_qw([[0, 1, 2, 3]], 2), 4)
        assert planes[0].indices[0, 0] == 0b1010
        assert planes[1].indices[0, 0] == 0b1100

    def test_one_bit_all_ones(self):
        planes = decompose_bits(_qw([[1, 1, 1, 1]], 1), 4)
        assert planes[0].indices[0, 0] == 15

    def test_zero_row_all_planes_zero(self):
        planes = decompose_bits(_qw([[0, 0, 0, 0]], 4), 4)
        assert all(p.indices[0, 0] == 0 for p in planes)

    @given(st.integers(min_value=1, max_value=4),
           st.integers(min_value=0, max_value=2**32 - 1))
    @settings(max_examples=60)
    def test_bit_plane_completeness(self, bits, seed):
        rng = np.random.default_rng(seed)
        q = rng.integers(0, 1 << bits, size=(4, 16)).astype(np.uint8)
        qw = _qw(q, bits, group_size=8)
        planes = decompose_bits(qw, 4)
        total = np.zeros((4, 16), dtype=np.int64)
        for p in planes:
            for kg in range(4):
                for j in range(4):
                    bit = (p.indices[:, kg] >> j) & 1
                    total[:, kg * 4 + j] |= bit.astype(np.int64) << p.bit
        assert np.array_equal(total, q)

    def test_rejects_indivisible_k(self):
        with pytest.raises(LayoutError):
            decompose_bits(_qw([[0, 1, 2]], 2, group_size=3), 4)


class TestInterleave:
    def test_g4_exact_byte_layout(self):
        idx = np.arange(32, dtype=np.uint8) % 16
        packed = interleave_layout(idx, g=4, lanes=16)
        expected = np.array([(idx[j + 16] << 4) | idx[j] for j in range(16)],
                            dtype=np.uint8)
        assert np.array_equal(packed, expected)

    def test_g2_two_level_scheme(self):
        lanes = 4
        idx = np.arange(16, dtype=np.uint8) % 4
        packed = interleave_layout(idx, g=2, lanes=lanes)
        expected = np.array(
            [idx[j] | (idx[j + 2 * lanes] << 2) | (idx[j + lanes] << 4)
             | (idx[j + 3 * lanes] << 6) for j in range(lanes)],
            dtype=np.uint8)
        assert np.array_equal(packed, expected)

    @pytest.mark.parametrize("g", [1, 2, 3, 4, 5, 6, 8])
    def test_round_trip(self, g, rng):
        lanes = 8
        n = indices_per_byte(g) * lanes * 5
        idx = rng.integers(0, 1 << g, size=n).astype(np.uint8)
        packed = interleave_layout(idx, g, lanes)
        assert packed.size == n * slot_bits(g) // 8
        assert np.array_equal(deinterleave_layout(packed, g, lanes), idx)

    @pytest.mark.parametrize("g", [1, 2, 4])
    def test_matches_scalar_unpack_oracle(self, g, rng):
        # independent per-byte bit extraction, pure python
        lanes = 4
        per = indices_per_byte(g)
        idx = rng.integers(0, 1 << g, size=per * lanes * 3).astype(np.uint8)
        packed = interleave_layout(idx, g, lanes)
        sb = slot_bits(g)
        for unit in range(3):
            ubytes = packed[unit * lanes:(unit + 1) * lanes]
            stream = [int(b) for b in ubytes]
            width = 4
            while True:
                mask = (1 << width) - 1
                stream = [v & mask for v in stream] + \
                         [v >> width for v in stream]
                if width == sb:
                    break
                width //= 2
            expected = idx[unit * per * lanes:(unit + 1) * per * lanes]
            assert stream == [int(v) for v in expected]

    def test_rejects_partial_unit(self):
        with pytest.raises(LayoutError):
            interleave_layout(np.zeros(24, dtype=np.uint8), g=4, lanes=16)


class TestPackAndPermute:
    def test_single_tile_identity_order(self, rng):
        # one tile: the stream is just the tile flattened
        # (lane-block, k-group, lane)
        tile = TileConfig(m_tile=32, k_tile=32, g=4, lanes=16)
        idx = rng.integers(0, 16, size=(32, 8)).astype(np.uint8)
        stream = _permute_plane(idx, tile)
        expected = idx.reshape(2, 16, 8).transpose(0, 2, 1).reshape(-1)
        assert np.array_equal(stream, expected)

    def test_two_m_blocks_concatenate(self, rng):
        tile = TileConfig(m_tile=16, k_tile=32, g=4, lanes=16)
        idx = rng.integers(0, 16, size=(32, 8)).astype(np.uint8)
        whole = _permute_plane(idx, tile)
        top = _permute_plane(idx[:16], tile)
        bottom = _permute_plane(idx[16:], tile)
        assert np.array_equal(whole, np.concatenate([top, bottom]))

    def test_round_trip_64x64(self, rng):
        w = rng.standard_normal((64, 64), dtype=np.float32)
        qw = quantize_weights(w, 2, 32)
        tile = TileConfig(m_tile=16, k_tile=16, g=4, lanes=16)
        planes = decompose_bits(qw, 4)
        pw = pack_and_permute(planes, tile, qw.scales, qw.group_size)
        recovered = unpack_planes(pw)
        for orig, back in zip(planes, recovered):
            assert np.array_equal(orig.indices, back.indices)

    @pytest.mark.parametrize("m,k,dim", [(40, 64, "m"), (64, 96, "k")])
    def test_divisibility_errors_name_dimension(self, rng, m, k, dim):
        qw = quantize_weights(rng.standard_normal((m, k), dtype=np.float32),
                              2, 32)
        tile = TileConfig(m_tile=16, k_tile=128, g=4, lanes=16)
        planes = decompose_bits(qw, 4)
        with pytest.raises(LayoutError, match=f"{dim}="):
            pack_and_permute(planes, tile, qw.scales, qw.group_size)

    def test_payload_slot_accounting(self, rng):
        w = rng.standard_normal((32, 64), dtype=np.float32)
        for bits in (1, 2, 4):
            qw = quantize_weights(w, bits, 32)
            pw = prepare_weights(qw, TileConfig(m_tile=16, k_tile=32))
            assert pw.index_slots == bits * 32 * 16
            assert pw.planes.nbytes == bits * 32 * 16 // 2


class TestPadding:
    def test_padded_regions_dequantize_to_zero(self, rng):
        w = rng.standard_normal((24, 96), dtype=np.float32)
        qw = quantize_weights(w, 4, 32)
        padded = pad_weights(qw, m_multiple=16, k_multiple=128)
        assert padded.m == 32 and padded.k == 128
        wd = dequantize(padded).to_array()
        assert np.array_equal(wd[:24, :96], dequantize(qw).to_array())
        assert np.all(wd[24:, :] == 0.0)
        assert np.all(wd[:, 96:] == 0.0)

    def test_noop_when_aligned(self, rng):
        qw = quantize_weights(rng.standard_normal((32, 128),
                                                  dtype=np.float32), 4, 32)
        assert pad_weights(qw, 16, 32) is qw


class TestSerialization:
    def _pw(self, rng, bits=2):
        qw = quantize_weights(rng.standard_normal((32, 64),
                                                  dtype=np.float32), bits, 32)
        return prepare_weights(qw, TileConfig(m_tile=16, k_tile=32))

    def test_round_trip(self, rng):
        pw = self._pw(rng)
        back = deserialize(serialize(pw))
        assert back.m == pw.m and back.k == pw.k and back.bits == pw.bits
        assert back.tile == pw.tile
        assert np.array_equal(back.planes, pw.planes)
        assert np.array_equal(back.scales, pw.scales)

    def test_bad_magic(self, rng):
        data = bytearray(serialize(self._pw(rng)))
        data[:4] = b"XXXX"
        with pytest.raises(BadMagicError):
            deserialize(bytes(data))

    def test_version_mismatch(self, rng):
        data = bytearray(serialize(self._pw(rng)))
        data[4] = 99
        with pytest.raises(FormatVersionError):
            deserialize(bytes(data))

    def test_layout_version_mismatch(self, rng):
        data = bytearray(serialize(self._pw(rng)))
        data[8] = 99
        with pytest.raises(FormatVersionError):
            deserialize(bytes(data))

    def test_truncated_header(self, rng):
        data = serialize(self._pw(rng))
        with pytest.raises(TruncatedStreamError):
            deserialize(data[:20])

    def test_truncated_payload(self, rng):
        data = serialize(self._pw(rng))
        with pytest.raises(TruncatedStreamError):
            deserialize(data[:-10])

    def test_bits_header_payload_disagreement(self, rng):
        # rewrite bits=2 -> bits=4: the payload is sized for two planes,
        # which the declared-payload field exposes as a length disagreement
        data = bytearray(serialize(self._pw(rng, bits=2)))
        data[20] = 4
        with pytest.raises(PayloadLengthError):
            deserialize(bytes(data))

    def test_trailing_garbage(self, rng):
        data = serialize(self._pw(rng)) + b"\x00"
        with pytest.raises(PayloadLengthError):
            deserialize(data)

    def test_out_of_range_indices_rejected(self, rng):
        # nibble slots for g=3 leave one spare bit; a corrupt payload byte
        # with that bit set must be caught on load, not in the kernel
        qw = quantize_weights(rng.standard_normal((16, 96),
                                                  dtype=np.float32), 2, 24)
        pw = prepare_weights(qw, TileConfig(m_tile=16, k_tile=24, g=3))
        data = bytearray(serialize(pw))
        data[-1] |= 0x88
        with pytest.raises(PayloadLengthError):
            deserialize(bytes(data))


def test_decode_table_inverts_packing(rng):
    for g in (1, 2, 4, 5):
        table = build_decode_table(g)
        per = indices_per_byte(g)
        idx = rng.integers(0, 1 << g, size=per).astype(np.uint8)
        packed = interleave_layout(idx, g, lanes=1)
        assert np.array_equal(table[packed[0]], idx)
