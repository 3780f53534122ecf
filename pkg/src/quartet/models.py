"""The dual-stream pitch/duration transformer and the duration-to-pitch seq2seq model."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

from quartet import numcore as nc
from quartet.attention import (
    AttentionMask,
    BlockConfig,
    CrossBlock,
    DecoderBlock,
    EncoderBlock,
    Linear,
    Module,
    glorot,
    positional_encoding,
)
from quartet.numcore import Tensor

PITCH_VOCAB = 126


@dataclass(frozen=True)
class DualStreamConfig:
    d_model: int = 256
    heads: int = 8
    depth: int = 2
    pitch_vocab: int = PITCH_VOCAB
    duration_vocab: int = 833
    seq_len: int = 150
    dropout: float = 0.1
    encoder_mask: str = "causal-strict"
    # mask cross-stream attention so decoders only read positions <= t
    strict_causal: bool = False
    # restrict encoder self-attention to each voice segment
    segment_mask: bool = False
    segment_len: int = 50

    kind = "dual-stream"

    @property
    def block(self) -> BlockConfig:
        return BlockConfig(self.d_model, self.heads, None, self.dropout, self.depth)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


@dataclass(frozen=True)
class Seq2SeqConfig:
    d_model: int = 128
    heads: int = 8
    depth: int = 2
    source_vocab: int = 833
    target_vocab: int = PITCH_VOCAB
    dropout: float = 0.1

    kind = "seq2seq"

    @property
    def block(self) -> BlockConfig:
        return BlockConfig(self.d_model, self.heads, None, self.dropout, self.depth)

    @property
    def bos(self) -> int:
        return self.target_vocab

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def config_from_dict(kind: str, d: dict):
    cls = {"dual-stream": DualStreamConfig, "seq2seq": Seq2SeqConfig}[kind]
    return cls(**d)


class Embedding(Module):
    def __init__(self, vocab: int, d: int, rng):
        self.table = nc.parameter(glorot(rng, vocab, d))

    def __call__(self, ids) -> Tensor:
        return nc.take_rows(self.table, ids)


def _check_tokens(tokens, vocab: int, what: str) -> np.ndarray:
    tokens = np.asarray(tokens, dtype=np.int64)
    if tokens.ndim == 1:
        tokens = tokens[None, :]
    if tokens.size and (tokens.min() < 0 or tokens.max() >= vocab):
        raise IndexError(f"{what} token out of range [0, {vocab})")
    return tokens


def _embed(emb: Embedding, tokens: np.ndarray, d_model: int) -> Tensor:
    pe = positional_encoding(tokens.shape[1], d_model, dtype=emb.table.data.dtype)
    return nc.add(emb(tokens), pe)


class DualStreamTransformer(Module):
    """Two masked encoder stacks whose outputs are cross-wired into two decoder stacks.

    The notes decoder takes queries from the pitch encoder and keys/values
    from the duration encoder; the durations decoder is the mirror image.
    """

    def __init__(self, cfg: DualStreamConfig, seed: int = 0):
        self.cfg = cfg
        rng = np.random.default_rng(seed)
        block = cfg.block
        d = cfg.d_model
        self.pitch_emb = Embedding(cfg.pitch_vocab, d, rng)
        self.dur_emb = Embedding(cfg.duration_vocab, d, rng)
        self.pitch_enc = [EncoderBlock(block, rng) for _ in range(cfg.depth)]
        self.dur_enc = [EncoderBlock(block, rng) for _ in range(cfg.depth)]
        self.pitch_dec = [CrossBlock(block, rng) for _ in range(cfg.depth)]
        self.dur_dec = [CrossBlock(block, rng) for _ in range(cfg.depth)]
        self.pitch_head = Linear(d, cfg.pitch_vocab, rng)
        self.dur_head = Linear(d, cfg.duration_vocab, rng)

    def masks(self, n: int):
        cfg = self.cfg
        enc = AttentionMask(cfg.encoder_mask, cfg.segment_len if cfg.segment_mask else None)
        cross = AttentionMask("causal-inclusive") if cfg.strict_causal else AttentionMask("none")
        return enc, cross

    def encode(self, pitch_tokens, dur_tokens, train=False, rng=None):
        cfg = self.cfg
        pitch_tokens = _check_tokens(pitch_tokens, cfg.pitch_vocab, "pitch")
        dur_tokens = _check_tokens(dur_tokens, cfg.duration_vocab, "duration")
        if pitch_tokens.shape != dur_tokens.shape:
            raise nc.ShapeError(f"pitch {pitch_tokens.shape} and duration {dur_tokens.shape} streams differ")
        enc_mask, _ = self.masks(pitch_tokens.shape[1])
        hp = _embed(self.pitch_emb, pitch_tokens, cfg.d_model)
        hd = _embed(self.dur_emb, dur_tokens, cfg.d_model)
        for blk in self.pitch_enc:
            hp = blk(hp, enc_mask, train, rng)
        for blk in self.dur_enc:
            hd = blk(hd, enc_mask, train, rng)
        return hp, hd

    def decode(self, hp: Tensor, hd: Tensor, train=False, rng=None):
        _, cross = self.masks(hp.shape[-2])
        p, q = hp, hd
        for blk in self.pitch_dec:
            p = blk(p, hd, cross, train, rng)
        for blk in self.dur_dec:
            q = blk(q, hp, cross, train, rng)
        return self.pitch_head(p), self.dur_head(q)

    def __call__(self, pitch_tokens, dur_tokens, train: bool = False, rng=None):
        hp, hd = self.encode(pitch_tokens, dur_tokens, train, rng)
        return self.decode(hp, hd, train, rng)


def dual_forward(model: DualStreamTransformer, pitch_tokens, dur_tokens, mode: str = "infer", rng=None):
    """Return ``(pitch_logits [B,T,126], dur_logits [B,T,V_dur])``."""
    return model(pitch_tokens, dur_tokens, train=(mode == "train"), rng=rng)


class Seq2SeqTransformer(Module):
    """Encoder over duration tokens, causal decoder over right-shifted pitch tokens."""

    def __init__(self, cfg: Seq2SeqConfig, seed: int = 0):
        self.cfg = cfg
        rng = np.random.default_rng(seed)
        block = cfg.block
        d = cfg.d_model
        self.src_emb = Embedding(cfg.source_vocab, d, rng)
        self.tgt_emb = Embedding(cfg.target_vocab + 1, d, rng)  # + BOS
        self.encoder = [EncoderBlock(block, rng) for _ in range(cfg.depth)]
        self.decoder = [DecoderBlock(block, rng) for _ in range(cfg.depth)]
        self.head = Linear(d, cfg.target_vocab, rng)

    def encode(self, src, train=False, rng=None) -> Tensor:
        src = _check_tokens(src, self.cfg.source_vocab, "duration")
        h = _embed(self.src_emb, src, self.cfg.d_model)
        for blk in self.encoder:
            h = blk(h, None, train, rng)
        return h

    def decode(self, memory: Tensor, tgt_in, train=False, rng=None) -> Tensor:
        tgt_in = _check_tokens(tgt_in, self.cfg.target_vocab + 1, "pitch")
        h = _embed(self.tgt_emb, tgt_in, self.cfg.d_model)
        causal = AttentionMask("causal-inclusive")
        for blk in self.decoder:
            h = blk(h, memory, causal, None, train, rng)
        return self.head(h)

    def shift_right(self, tgt) -> np.ndarray:
        tgt = _check_tokens(tgt, self.cfg.target_vocab, "pitch")
        bos = np.full((tgt.shape[0], 1), self.cfg.bos, dtype=np.int64)
        return np.concatenate([bos, tgt[:, :-1]], axis=1)

    def __call__(self, src, tgt, train: bool = False, rng=None) -> Tensor:
        """Logits for ``tgt[t]`` given the source and ``tgt[:t]``."""
        memory = self.encode(src, train, rng)
        return self.decode(memory, self.shift_right(tgt), train, rng)


def seq2seq_forward(model: Seq2SeqTransformer, src_dur_tokens, tgt_pitch_tokens, mode: str = "infer", rng=None):
    return model(src_dur_tokens, tgt_pitch_tokens, train=(mode == "train"), rng=rng)


def loss(pitch_logits: Tensor, dur_logits: Tensor, pitch_targets, dur_targets) -> Tensor:
    """Equal-weight sum of the two heads' sparse cross-entropies."""
    pitch_targets = np.asarray(pitch_targets)
    dur_targets = np.asarray(dur_targets)
    if pitch_targets.shape != pitch_logits.shape[:-1] or dur_targets.shape != dur_logits.shape[:-1]:
        raise nc.ShapeError("loss: targets do not match logits")
    return nc.add(nc.sparse_ce(pitch_logits, pitch_targets), nc.sparse_ce(dur_logits, dur_targets))


def next_token_loss(model: DualStreamTransformer, pitch_tokens, dur_tokens, train=False, rng=None) -> Tensor:
    """Predict position t+1 from positions <= t; the last position has no target."""
    pitch_tokens = np.atleast_2d(pitch_tokens)
    dur_tokens = np.atleast_2d(dur_tokens)
    pl, dl = model(pitch_tokens, dur_tokens, train, rng)
    return loss(pl[:, :-1], dl[:, :-1], pitch_tokens[:, 1:], dur_tokens[:, 1:])


def seq2seq_loss(model: Seq2SeqTransformer, src, tgt, train=False, rng=None) -> Tensor:
    logits = model(src, tgt, train, rng)
    return nc.sparse_ce(logits, np.atleast_2d(tgt))


def _block_params(d: int, ffn: int) -> int:
    attn = 4 * (d * d + d)
    ff = (d * ffn + ffn) + (ffn * d + d)
    return attn + ff + 2 * (2 * d)


def param_count(cfg) -> int:
    """Closed-form count of trainable scalars for either model config."""
    d = cfg.d_model
    blk = _block_params(d, d)
    if isinstance(cfg, DualStreamConfig):
        emb = (cfg.pitch_vocab + cfg.duration_vocab) * d
        heads = (d * cfg.pitch_vocab + cfg.pitch_vocab) + (d * cfg.duration_vocab + cfg.duration_vocab)
        return emb + 4 * cfg.depth * blk + heads
    if isinstance(cfg, Seq2SeqConfig):
        emb = (cfg.source_vocab + cfg.target_vocab + 1) * d
        dec = blk + 4 * (d * d + d) + 2 * d
        return emb + cfg.depth * (blk + dec) + d * cfg.target_vocab + cfg.target_vocab
    raise TypeError(f"unknown config {type(cfg).__name__}")


def init_params(cfg, seed: int):
    """Build a model with scaled-uniform weights drawn from ``seed``."""
    if isinstance(cfg, DualStreamConfig):
        return DualStreamTransformer(cfg, seed)
    if isinstance(cfg, Seq2SeqConfig):
        return Seq2SeqTransformer(cfg, seed)
    raise TypeError(f"unknown config {type(cfg).__name__}")
