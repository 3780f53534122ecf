import numpy as np
import pytest

from quartet import numcore as nc
from quartet.models import (
    DualStreamConfig,
    DualStreamTransformer,
    Seq2SeqConfig,
    Seq2SeqTransformer,
    config_from_dict,
    init_params,
    next_token_loss,
    param_count,
    seq2seq_loss,
)
from gradcheck import check

SMALL = DualStreamConfig(d_model=16, heads=2, depth=1, duration_vocab=7, seq_len=12, dropout=0.0)


def registry_count(model):
    return sum(t.size for t in model.params().values())


def test_full_scale_parameter_count():
    cfg = DualStreamConfig()
    n = param_count(cfg)
    assert 3.15e6 <= n <= 3.85e6
    assert n == registry_count(DualStreamTransformer(cfg))


@pytest.mark.parametrize("cfg", [SMALL, DualStreamConfig(d_model=32, heads=4, depth=2, duration_vocab=5),
                                 Seq2SeqConfig(), Seq2SeqConfig(d_model=16, heads=2, depth=1, source_vocab=9)])
def test_closed_form_count_matches_registry(cfg):
    assert param_count(cfg) == registry_count(init_params(cfg, 0))


def test_init_reproducible_and_scaled():
    a = DualStreamTransformer(SMALL, seed=3).params()
    b = DualStreamTransformer(SMALL, seed=3).params()
    assert all(a[k].data.tobytes() == b[k].data.tobytes() for k in a)
    w = a["pitch_head.W"].data
    bound = np.sqrt(6 / (16 + SMALL.pitch_vocab))
    assert np.abs(w).max() <= bound
    assert np.all(a["pitch_head.b"].data == 0)
    assert np.all(a["pitch_enc.0.norm1.gain"].data == 1)


def test_forward_shapes(rng):
    m = DualStreamTransformer(SMALL)
    p = rng.integers(0, 126, (3, 12))
    d = rng.integers(0, 7, (3, 12))
    pl, dl = m(p, d)
    assert pl.shape == (3, 12, 126) and dl.shape == (3, 12, 7)
    s = Seq2SeqTransformer(Seq2SeqConfig(d_model=16, heads=2, depth=1, source_vocab=7))
    assert s(d, p).shape == (3, 12, 126)


def test_token_range_checked(rng):
    m = DualStreamTransformer(SMALL)
    with pytest.raises(IndexError):
        m(np.full((1, 4), 126), np.zeros((1, 4), int))
    with pytest.raises(nc.ShapeError):
        m(np.zeros((1, 4), int), np.zeros((1, 5), int))


def test_shift_right_prepends_bos():
    s = Seq2SeqTransformer(Seq2SeqConfig(d_model=16, heads=2, depth=1, source_vocab=4))
    np.testing.assert_array_equal(s.shift_right([[5, 6, 7]]), [[126, 5, 6]])


def test_config_round_trip():
    assert config_from_dict("dual-stream", SMALL.to_dict()) == SMALL
    cfg = Seq2SeqConfig(d_model=64)
    assert config_from_dict("seq2seq", cfg.to_dict()) == cfg


def test_initial_loss_near_uniform(rng):
    m = DualStreamTransformer(SMALL)
    lo = float(next_token_loss(m, rng.integers(0, 126, (2, 12)), rng.integers(0, 7, (2, 12))).data)
    assert abs(lo - (np.log(126) + np.log(7))) < 1.5


@pytest.mark.parametrize("seed", range(3))
def test_model_gradients_float64(seed):
    rng = np.random.default_rng(seed)
    with nc.precision("float64"):
        cfg = DualStreamConfig(d_model=8, heads=2, depth=1, duration_vocab=5, dropout=0.0, strict_causal=True)
        m = DualStreamTransformer(cfg, seed)
        p = rng.integers(0, 126, (2, 6))
        d = rng.integers(0, 5, (2, 6))
        err = check(lambda: next_token_loss(m, p, d), list(m.params().values()), rng, limit=4)
        assert err <= 1e-4
        s = Seq2SeqTransformer(Seq2SeqConfig(d_model=8, heads=2, depth=1, source_vocab=5, dropout=0.0), seed)
        err = check(lambda: seq2seq_loss(s, d, p), list(s.params().values()), rng, limit=4)
        assert err <= 1e-4


def _first_change(model, p, d, t, rng):
    """Largest change in outputs at positions <= t when every token after t is replaced."""
    pl, dl = model(p, d)
    p2, d2 = p.copy(), d.copy()
    p2[0, t + 1:] = (p2[0, t + 1:] + 1 + rng.integers(0, 100, p2.shape[1] - t - 1)) % 126
    d2[0, t + 1:] = (d2[0, t + 1:] + 1) % model.cfg.duration_vocab
    ql, el = model(p2, d2)
    return max(np.abs(ql.data[0, :t + 1] - pl.data[0, :t + 1]).max(),
               np.abs(el.data[0, :t + 1] - dl.data[0, :t + 1]).max())


def test_segment_mask_keeps_voices_apart(rng):
    with nc.precision("float64"):
        cfg = DualStreamConfig(d_model=8, heads=2, depth=1, duration_vocab=4, dropout=0.0, strict_causal=True,
                               encoder_mask="causal-inclusive", segment_mask=True, segment_len=4)
        m = DualStreamTransformer(cfg)
        hp, _ = m.encode(rng.integers(0, 126, (1, 8)), rng.integers(0, 4, (1, 8)))
        p = rng.integers(0, 126, (1, 8))
        d = rng.integers(0, 4, (1, 8))
        a, _ = m.encode(p, d)
        p2 = p.copy()
        p2[0, 1] = (p2[0, 1] + 5) % 126
        b, _ = m.encode(p2, d)
        assert np.abs(a.data[0, 4:] - b.data[0, 4:]).max() == 0
        assert np.abs(a.data[0, 1:4] - b.data[0, 1:4]).max() > 0
