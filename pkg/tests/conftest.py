import numpy as np
import pytest

from bitlut import TileConfig, prepare_weights, quantize_weights


def make_instance(rng, m=64, k=128, bits=4, group_size=32,
                  m_tile=32, k_tile=32, n_tile=1, g=4, lanes=16):
    """Random quantized+packed weights with a matching activation row."""
    w = rng.standard_normal((m, k), dtype=np.float32)
    a = rng.standard_normal(k, dtype=np.float32)
    qw = quantize_weights(w, bits, group_size)
    cfg = TileConfig(n_tile=n_tile, m_tile=m_tile, k_tile=k_tile,
                     g=g, lanes=lanes)
    pw = prepare_weights(qw, cfg)
    return w, a, qw, cfg, pw


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
