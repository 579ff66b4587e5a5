import numpy as np
import pytest

from bitlut import Matrix, quantize_weights
from bitlut.errors import (BadMagicError, FormatVersionError,
                           PayloadLengthError, TruncatedStreamError)
from bitlut.fileio import (read_matrix, read_quantized, write_matrix,
                           write_quantized)


@pytest.fixture
def matrix_path(tmp_path, rng):
    p = tmp_path / "m.lmrm"
    write_matrix(p, Matrix.from_array(
        rng.standard_normal((6, 10), dtype=np.float32)))
    return p


@pytest.fixture
def quant_path(tmp_path, rng):
    p = tmp_path / "q.lmqw"
    qw = quantize_weights(rng.standard_normal((8, 64), dtype=np.float32),
                          3, 32)
    write_quantized(p, qw)
    return p, qw


def test_matrix_round_trip(matrix_path, tmp_path, rng):
    m = read_matrix(matrix_path)
    assert (m.rows, m.cols) == (6, 10)
    again = tmp_path / "again.lmrm"
    write_matrix(again, m)
    assert again.read_bytes() == matrix_path.read_bytes()


def test_quantized_round_trip(quant_path):
    path, qw = quant_path
    back = read_quantized(path)
    assert back.bits == qw.bits and back.group_size == qw.group_size
    assert np.array_equal(back.qvalues, qw.qvalues)
    assert np.array_equal(back.scales, qw.scales)


@pytest.mark.parametrize("reader", [read_matrix, read_quantized])
def test_bad_magic(tmp_path, reader):
    p = tmp_path / "bad"
    p.write_bytes(b"NOPE" + b"\x00" * 64)
    with pytest.raises(BadMagicError):
        reader(p)


def test_matrix_version_and_truncation(matrix_path, tmp_path):
    data = bytearray(matrix_path.read_bytes())
    data[4] = 9
    bad = tmp_path / "v.lmrm"
    bad.write_bytes(bytes(data))
    with pytest.raises(FormatVersionError):
        read_matrix(bad)
    short = tmp_path / "t.lmrm"
    short.write_bytes(matrix_path.read_bytes()[:-8])
    with pytest.raises(TruncatedStreamError):
        read_matrix(short)
    long = tmp_path / "l.lmrm"
    long.write_bytes(matrix_path.read_bytes() + b"\x00")
    with pytest.raises(PayloadLengthError):
        read_matrix(long)


def test_quantized_length_checks(quant_path, tmp_path):
    path, _ = quant_path
    short = tmp_path / "t.lmqw"
    short.write_bytes(path.read_bytes()[:-4])
    with pytest.raises(TruncatedStreamError):
        read_quantized(short)
    data = bytearray(path.read_bytes())
    data[16] = 9  # bits out of range
    bad = tmp_path / "b.lmqw"
    bad.write_bytes(bytes(data))
    with pytest.raises(PayloadLengthError):
        read_quantized(bad)
