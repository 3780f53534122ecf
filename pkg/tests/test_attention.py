import math

import numpy as np
import pytest

from quartet import numcore as nc
from quartet.attention import (
    AttentionMask,
    BlockConfig,
    ConfigError,
    CrossBlock,
    DecoderBlock,
    EncoderBlock,
    MultiHeadAttention,
    multi_head,
    positional_encoding,
    sdpa,
)
from gradcheck import check

SEEDS = range(10)


@pytest.fixture(autouse=True)
def _float64():
    with nc.precision("float64"):
        yield


def test_positional_encoding_formula():
    pe = positional_encoding(7, 6)
    for pos in range(7):
        for i in range(3):
            assert pe[pos, 2 * i] == pytest.approx(math.sin(pos / 10000 ** (2 * i / 6)), abs=1e-15)
            assert pe[pos, 2 * i + 1] == pytest.approx(math.cos(pos / 10000 ** (2 * i / 6)), abs=1e-15)


def test_positional_encoding_needs_even_width():
    with pytest.raises(ConfigError):
        positional_encoding(4, 5)


def test_mask_kinds():
    assert AttentionMask("none").allowed(3) is None
    np.testing.assert_array_equal(AttentionMask("causal-strict").allowed(3), np.tril(np.ones((3, 3), bool), -1))
    np.testing.assert_array_equal(AttentionMask("causal-inclusive").allowed(3), np.tril(np.ones((3, 3), bool)))
    seg = AttentionMask("none", segment=2).allowed(4)
    assert seg[1, 0] and not seg[2, 1] and seg[3, 2]
    with pytest.raises(ConfigError):
        AttentionMask("bidirectional")


def test_block_config_rejects_indivisible_heads():
    with pytest.raises(ConfigError):
        BlockConfig(d_model=10, heads=3)


def test_sdpa_against_direct_computation(rng):
    Q, K, V = (rng.standard_normal((2, 5, 4)) for _ in range(3))
    out = sdpa(nc.as_tensor(Q), nc.as_tensor(K), nc.as_tensor(V), AttentionMask("causal-inclusive")).data
    s = Q @ K.transpose(0, 2, 1) / 2.0
    s = np.where(np.tril(np.ones((5, 5), bool)), s, -np.inf)
    w = np.exp(s - s.max(-1, keepdims=True))
    w /= w.sum(-1, keepdims=True)
    np.testing.assert_allclose(out, w @ V, rtol=1e-12)


def test_strict_mask_first_position_reads_nothing(rng):
    Q, K, V = (nc.as_tensor(rng.standard_normal((3, 4))) for _ in range(3))
    out = sdpa(Q, K, V, AttentionMask("causal-strict")).data
    assert np.all(out[0] == 0)


def test_sdpa_shape_errors(rng):
    a = nc.as_tensor(rng.standard_normal((3, 4)))
    with pytest.raises(nc.ShapeError):
        sdpa(a, nc.as_tensor(rng.standard_normal((3, 5))), a)
    with pytest.raises(nc.ShapeError):
        sdpa(a, a, a, np.ones((2, 2), bool))


def test_multi_head_equals_per_head_loop(rng):
    cfg = BlockConfig(d_model=8, heads=2, dropout=0.0)
    layer = MultiHeadAttention(cfg, rng)
    x = rng.standard_normal((1, 5, 8))
    out = multi_head(nc.as_tensor(x), nc.as_tensor(x), nc.as_tensor(x), cfg, layer=layer).data
    q = x @ layer.q.W.data + layer.q.b.data
    k = x @ layer.k.W.data + layer.k.b.data
    v = x @ layer.v.W.data + layer.v.b.data
    heads = []
    for h in range(2):
        sl = slice(4 * h, 4 * h + 4)
        s = q[0, :, sl] @ k[0, :, sl].T / 2.0
        w = np.exp(s - s.max(-1, keepdims=True))
        w /= w.sum(-1, keepdims=True)
        heads.append(w @ v[0, :, sl])
    ref = np.concatenate(heads, -1) @ layer.o.W.data + layer.o.b.data
    np.testing.assert_allclose(out[0], ref, rtol=1e-10)


def _block_case(kind, seed):
    rng = np.random.default_rng(seed)
    cfg = BlockConfig(d_model=8, heads=2, dropout=0.1)
    x = nc.parameter(rng.standard_normal((2, 5, 8)))
    y = nc.parameter(rng.standard_normal((2, 5, 8)))
    mask = AttentionMask("causal-strict")
    if kind == "encoder":
        blk = EncoderBlock(cfg, rng)
        fn = lambda: blk(x, mask, True, np.random.default_rng(3))  # noqa: E731
        inputs = [x]
    elif kind == "cross":
        blk = CrossBlock(cfg, rng)
        fn = lambda: blk(x, y, AttentionMask("causal-inclusive"), True, np.random.default_rng(3))  # noqa: E731
        inputs = [x, y]
    else:
        blk = DecoderBlock(cfg, rng)
        fn = lambda: blk(x, y, AttentionMask("causal-inclusive"), None, True, np.random.default_rng(3))  # noqa: E731
        inputs = [x, y]
    return rng, blk, fn, inputs


@pytest.mark.parametrize("kind", ["encoder", "cross", "decoder"])
@pytest.mark.parametrize("seed", SEEDS)
def test_block_gradients(kind, seed):
    rng, blk, fn, inputs = _block_case(kind, seed)
    w = np.random.default_rng(seed + 50).standard_normal((2, 5, 8))
    tensors = inputs + list(blk.params().values())
    assert check(lambda: nc.sum_all(nc.mul(fn(), w)), tensors, rng, limit=6) <= 1e-4


def test_encoder_block_causal_strict(rng):
    cfg = BlockConfig(d_model=8, heads=2, dropout=0.0)
    blk = EncoderBlock(cfg, rng)
    x = rng.standard_normal((1, 6, 8))
    base = blk(nc.as_tensor(x), AttentionMask("causal-strict")).data
    x2 = x.copy()
    x2[0, 4:] += 1.0
    moved = blk(nc.as_tensor(x2), AttentionMask("causal-strict")).data
    assert np.abs(moved[0, :4] - base[0, :4]).max() <= 1e-12
    assert np.abs(moved[0, 4:] - base[0, 4:]).max() > 1e-3
