"""Autoregressive token sampling from trained checkpoints."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from quartet.models import DualStreamTransformer, Seq2SeqTransformer
from quartet.notation import VoicedMelody
from quartet.tokenizer import VOICES, WINDOW, DurationVocab, PitchVocab, decode_row


def pick(logits: np.ndarray, temperature: float, rng: np.random.Generator) -> int:
    """Argmax at temperature 0, otherwise a draw from softmax(logits / T)."""
    if temperature < 0:
        raise ValueError("temperature must be >= 0")
    z = np.asarray(logits, dtype=np.float64)
    if temperature == 0:
        return int(np.argmax(z))
    z = z / temperature
    z -= z.max()
    p = np.exp(z)
    p /= p.sum()
    return int(rng.choice(p.size, p=p))


def sample_tokens(model: DualStreamTransformer, prefix_pitch: Sequence[int], prefix_dur: Sequence[int],
                  total: int | None = None, temperature: float = 1.0, seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Extend the prefix one position at a time, drawing pitch and duration jointly from both heads.

    The row is filled voice-segment-sequentially: positions 0-49 are voice 1,
    50-99 voice 2 and 100-149 voice 3.
    """
    cfg = model.cfg
    total = cfg.seq_len if total is None else total
    p = [int(t) for t in prefix_pitch]
    d = [int(t) for t in prefix_dur]
    if not p or len(p) != len(d):
        raise ValueError("prefix needs at least one token per stream, equal lengths")
    if len(p) > total:
        raise ValueError(f"prefix longer than the {total}-token row")
    if min(p) < 0 or max(p) >= cfg.pitch_vocab:
        raise IndexError("prefix pitch token out of vocabulary")
    if min(d) < 0 or max(d) >= cfg.duration_vocab:
        raise IndexError("prefix duration token out of vocabulary")
    rng = np.random.default_rng(seed)
    while len(p) < total:
        pl, dl = model(np.array(p)[None], np.array(d)[None])
        p.append(pick(pl.data[0, -1], temperature, rng))
        d.append(pick(dl.data[0, -1], temperature, rng))
    return np.array(p, dtype=np.int64), np.array(d, dtype=np.int64)


def sample(model: DualStreamTransformer, prefix_pitch, prefix_dur, length: int = WINDOW, temperature: float = 1.0,
           seed: int = 0, pvocab: PitchVocab | None = None, dvocab: DurationVocab | None = None,
           title: str = "") -> VoicedMelody:
    """Sample a 3-voice melody with ``length`` notes per voice (at most 50)."""
    if not 1 <= length <= WINDOW:
        raise ValueError(f"length must be in [1, {WINDOW}]")
    if dvocab is None:
        raise ValueError("a duration vocabulary is needed to decode durations")
    if len(dvocab) != model.cfg.duration_vocab:
        raise ValueError(f"duration vocabulary has {len(dvocab)} entries, model expects {model.cfg.duration_vocab}")
    pvocab = pvocab or PitchVocab()
    total = (VOICES - 1) * WINDOW + length
    p, d = sample_tokens(model, prefix_pitch, prefix_dur, total, temperature, seed)
    pad = VOICES * WINDOW - total
    p = np.concatenate([p, np.zeros(pad, np.int64)])
    d = np.concatenate([d, np.zeros(pad, np.int64)])
    m = decode_row(p, d, pvocab, dvocab, title=title)
    return VoicedMelody([v[:length] for v in m.voices], title=title)


def sample_pitches(model: Seq2SeqTransformer, src_tokens: Sequence[int], temperature: float = 1.0,
                   rng: np.random.Generator | None = None) -> np.ndarray:
    """One pitch token per source duration token, decoded left to right from BOS."""
    src = np.asarray(src_tokens, dtype=np.int64)
    if src.ndim != 1 or src.size == 0:
        raise ValueError("source must be a non-empty 1-D token sequence")
    rng = rng or np.random.default_rng(0)
    memory = model.encode(src[None])
    out = [model.cfg.bos]
    for _ in range(src.size):
        logits = model.decode(memory, np.array(out)[None])
        out.append(pick(logits.data[0, -1], temperature, rng))
    return np.array(out[1:], dtype=np.int64)
