import numpy as np
import pytest

from quartet.checkpoint import (
    MAGIC,
    CorruptCheckpointError,
    KindMismatchError,
    VersionError,
    from_bytes,
    from_model,
    load_checkpoint,
    save_checkpoint,
    to_bytes,
)
from quartet.models import DualStreamConfig, DualStreamTransformer, Seq2SeqConfig, Seq2SeqTransformer

CFG = DualStreamConfig(d_model=16, heads=2, depth=1, duration_vocab=5, seq_len=12, dropout=0.0)


@pytest.fixture
def model():
    return DualStreamTransformer(CFG, seed=3)


def test_round_trip_bitwise(model, tmp_path):
    vocab = {"durations": ["1/8", "1/4"]}
    p = save_checkpoint(tmp_path / "m.ckpt", model, vocab=vocab, meta={"epoch": 2})
    ck = load_checkpoint(p, expect_kind="dual-stream")
    assert ck.vocab == vocab and ck.meta == {"epoch": 2}
    rebuilt = ck.build_model()
    for name, t in model.params().items():
        a = np.asarray(t.data, dtype="<f4")
        assert a.tobytes() == np.asarray(rebuilt.params()[name].data, dtype="<f4").tobytes()
    x = np.arange(12)[None] % 5
    a, _ = model(x, x)
    b, _ = rebuilt(x, x)
    np.testing.assert_allclose(a.data, b.data, rtol=1e-6, atol=1e-6)


def test_resave_identical_bytes(model, tmp_path):
    save_checkpoint(tmp_path / "a.ckpt", model)
    again = load_checkpoint(tmp_path / "a.ckpt").build_model()
    save_checkpoint(tmp_path / "b.ckpt", again)
    assert (tmp_path / "a.ckpt").read_bytes() == (tmp_path / "b.ckpt").read_bytes()


def test_truncated_and_corrupt(model):
    data = to_bytes(from_model(model))
    assert data.startswith(MAGIC)
    with pytest.raises(CorruptCheckpointError):
        from_bytes(data[:-10])
    with pytest.raises(CorruptCheckpointError):
        from_bytes(data[:20])
    flipped = bytearray(data)
    flipped[len(data) // 2] ^= 0xFF
    with pytest.raises(CorruptCheckpointError):
        from_bytes(bytes(flipped))
    with pytest.raises(CorruptCheckpointError):
        from_bytes(b"not a checkpoint at all, definitely not" * 2)


def test_kind_mismatch(model):
    data = to_bytes(from_model(model))
    with pytest.raises(KindMismatchError):
        from_bytes(data, expect_kind="seq2seq")
    s = Seq2SeqTransformer(Seq2SeqConfig(d_model=16, heads=2, depth=1, source_vocab=5))
    assert from_bytes(to_bytes(from_model(s)), "seq2seq").kind == "seq2seq"


def test_version_mismatch(model):
    data = bytearray(to_bytes(from_model(model)))
    data[len(MAGIC)] = 9  # little-endian version field
    with pytest.raises(VersionError):
        from_bytes(bytes(data))


def test_config_mismatch_detected(model):
    ck = from_model(model)
    ck.params.pop(sorted(ck.params)[0])
    with pytest.raises(Exception, match="parameter names"):
        ck.build_model()
