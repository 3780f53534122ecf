"""Minibatch Adam training for the dual-stream and seq2seq models."""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from quartet import numcore as nc
from quartet.checkpoint import from_model, save_checkpoint
from quartet.models import (
    DualStreamTransformer,
    Seq2SeqTransformer,
    next_token_loss,
    seq2seq_loss,
)
from quartet.notation import VoicedMelody
from quartet.tokenizer import VOICES, WINDOW, DurationVocab, PitchVocab, make_batches

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    epochs: int = 10
    melodies_per_batch: int = 100
    train_fraction: float = 0.9
    lr: float = 1e-4
    seed: int = 0
    # rows per optimiser step inside a batch
    rows_per_step: int = 16
    # stop after this many optimiser steps in total (None = run all epochs)
    max_steps: int | None = None

    def __post_init__(self):
        if self.epochs < 0 or self.rows_per_step < 1 or self.melodies_per_batch < 1:
            raise ValueError("epochs >= 0, rows_per_step >= 1 and melodies_per_batch >= 1 required")
        if not 0.0 < self.train_fraction <= 1.0:
            raise ValueError("train_fraction must be in (0, 1]")
        if self.lr < 0:
            raise ValueError("learning rate must be non-negative")


def split_corpus(n: int, train_fraction: float, seed: int) -> tuple[list[int], list[int]]:
    """Seeded melody-level split; |train| = round(fraction * n), halves rounded up."""
    n_train = int(np.floor(train_fraction * n + 0.5))
    if n_train < 1:
        raise TrainingError(f"train split is empty ({n} melodies, fraction {train_fraction})")
    perm = np.random.default_rng(seed).permutation(n)
    return sorted(perm[:n_train].tolist()), sorted(perm[n_train:].tolist())


@dataclass
class TrainResult:
    model: object
    metrics: list[dict] = field(default_factory=list)
    steps: int = 0
    train_indices: list[int] = field(default_factory=list)
    test_indices: list[int] = field(default_factory=list)

    def metrics_jsonl(self) -> str:
        return "".join(json.dumps(m, sort_keys=True) + "\n" for m in self.metrics)


def dual_rows(corpus: Sequence[VoicedMelody], pvocab: PitchVocab, dvocab: DurationVocab,
              melodies_per_batch: int = 100) -> tuple[np.ndarray, np.ndarray]:
    """All admissible ``[rows, 150]`` pitch/duration rows for the corpus."""
    ps, ds = [], []
    for b in make_batches(list(corpus), pvocab, dvocab, melodies_per_batch):
        ps.append(b.pitch)
        ds.append(b.duration)
    width = VOICES * WINDOW
    if not ps:
        return np.zeros((0, width), np.int64), np.zeros((0, width), np.int64)
    return np.concatenate(ps), np.concatenate(ds)


def seq2seq_rows(pitch: np.ndarray, dur: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Split each 150-token row into three (duration source, pitch target) voice segments."""
    src = dur.reshape(-1, WINDOW)
    tgt = pitch.reshape(-1, WINDOW)
    return src, tgt


def _step_loss(model, a, b, train, rng):
    if isinstance(model, DualStreamTransformer):
        return next_token_loss(model, a, b, train, rng)
    return seq2seq_loss(model, b, a, train, rng)


def evaluate_loss(model, a: np.ndarray, b: np.ndarray, chunk: int = 32) -> float:
    """Mean loss in inference mode (no dropout) over rows, weighted by row count."""
    if len(a) == 0:
        return float("nan")
    total = 0.0
    for i in range(0, len(a), chunk):
        lo = _step_loss(model, a[i:i + chunk], b[i:i + chunk], False, None)
        total += float(lo.data) * len(a[i:i + chunk])
    return total / len(a)


def next_token_accuracy(model, a: np.ndarray, b: np.ndarray, chunk: int = 32) -> float | None:
    """Fraction of argmax next-token predictions that match, pooled over both heads for the dual model."""
    if len(a) == 0:
        return None
    hits = count = 0
    for i in range(0, len(a), chunk):
        pa, pb = a[i:i + chunk], b[i:i + chunk]
        if isinstance(model, DualStreamTransformer):
            pl, dl = model(pa, pb)
            hits += int((pl.data[:, :-1].argmax(-1) == pa[:, 1:]).sum())
            hits += int((dl.data[:, :-1].argmax(-1) == pb[:, 1:]).sum())
            count += 2 * pa[:, 1:].size
        else:
            logits = model(pb, pa)
            hits += int((logits.data.argmax(-1) == pa).sum())
            count += pa.size
    return hits / count


def prepare_rows(model, corpus: Sequence[VoicedMelody], pvocab: PitchVocab, dvocab: DurationVocab,
                 melodies_per_batch: int = 100):
    """``(a, b)`` training arrays: (pitch, duration) rows for the dual model, (pitch target, duration source) segments for seq2seq."""
    p, d = dual_rows(corpus, pvocab, dvocab, melodies_per_batch)
    if isinstance(model, Seq2SeqTransformer):
        src, tgt = seq2seq_rows(p, d)
        return tgt, src
    return p, d


def train(model, corpus: Sequence[VoicedMelody], cfg: TrainConfig, pvocab: PitchVocab, dvocab: DurationVocab,
          checkpoint_dir=None, vocab_snapshot: dict | None = None) -> TrainResult:
    """Train ``model`` in place and return the per-epoch metrics.

    Melodies are split once by ``cfg.seed``.  Each epoch visits the training
    batches in a seeded order and steps Adam on ``rows_per_step`` rows at a
    time.  With ``checkpoint_dir`` a checkpoint is written after every epoch
    and as ``final.ckpt``.
    """
    tr_idx, te_idx = split_corpus(len(corpus), cfg.train_fraction, cfg.seed)
    train_set = [corpus[i] for i in tr_idx]
    test_set = [corpus[i] for i in te_idx]
    a_tr, b_tr = prepare_rows(model, train_set, pvocab, dvocab, cfg.melodies_per_batch)
    a_te, b_te = prepare_rows(model, test_set, pvocab, dvocab, cfg.melodies_per_batch)
    if len(a_tr) == 0:
        raise TrainingError("no admissible training rows in the train split")
    log.info("training on %d rows (%d melodies), %d held-out rows", len(a_tr), len(train_set), len(a_te))

    order_rng = np.random.default_rng([cfg.seed, 1])
    drop_rng = np.random.default_rng([cfg.seed, 2])
    params = model.params()
    opt = nc.AdamState(lr=cfg.lr)
    result = TrainResult(model, train_indices=tr_idx, test_indices=te_idx)
    out_dir = Path(checkpoint_dir) if checkpoint_dir is not None else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)

    def snapshot(name, epoch):
        if out_dir is not None:
            save_checkpoint(out_dir / name, from_model(model, vocab_snapshot, {"epoch": epoch, "steps": result.steps,
                                                                                "seed": cfg.seed}))

    done = False
    for epoch in range(1, cfg.epochs + 1):
        losses = []
        perm = order_rng.permutation(len(a_tr))
        for s in range(0, len(perm), cfg.rows_per_step):
            idx = perm[s:s + cfg.rows_per_step]
            lo = _step_loss(model, a_tr[idx], b_tr[idx], True, drop_rng)
            nc.backward(lo)
            nc.adam_step(params, nc.grads_of(params), opt)
            nc.zero_grads(params.values())
            losses.append(float(lo.data))
            result.steps += 1
            if cfg.max_steps is not None and result.steps >= cfg.max_steps:
                done = True
                break
        acc = next_token_accuracy(model, a_te, b_te)
        rec = {"epoch": epoch, "steps": result.steps, "mean_loss": float(np.mean(losses)),
               "heldout_accuracy": acc}
        result.metrics.append(rec)
        log.info("epoch %d: loss %.4f, held-out accuracy %s", epoch, rec["mean_loss"], acc)
        snapshot(f"epoch_{epoch:03d}.ckpt", epoch)
        if done:
            break
    snapshot("final.ckpt", len(result.metrics))
    return result


def config_dict(cfg: TrainConfig) -> dict:
    return asdict(cfg)
