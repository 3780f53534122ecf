"""Scale-degree pitch tokens, corpus duration vocabularies and fixed-shape row batches."""

from __future__ import annotations

import json
import logging
from collections import Counter
from dataclasses import dataclass, field
from fractions import Fraction
from importlib import resources
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

from quartet.notation import InsufficientVoicesError, NoteEvent, VoicedMelody, extract_voices

log = logging.getLogger(__name__)

DEGREES = 7
N_SCALES = 18
PITCH_VOCAB_SIZE = N_SCALES * DEGREES
WINDOW = 50
VOICES = 3
ROWS_PER_BATCH = 128
MELODIES_PER_BATCH = 100
# register centre per voice segment when turning degrees back into MIDI pitches
VOICE_REGISTERS = (72, 60, 48)


class TokenizerError(ValueError):
    pass


@dataclass(frozen=True)
class Scale:
    name: str
    tonic: int
    intervals: tuple[int, ...]

    @property
    def pitch_classes(self) -> tuple[int, ...]:
        return tuple((self.tonic + i) % 12 for i in self.intervals)


def load_scale_table(path=None) -> list[Scale]:
    if path is None:
        text = resources.files("quartet").joinpath("data/scales.json").read_text()
    else:
        text = Path(path).read_text()
    rows = json.loads(text)["scales"]
    table = [Scale(r["name"], int(r["tonic"]), tuple(r["intervals"])) for r in rows]
    if len(table) != N_SCALES or any(len(s.intervals) != DEGREES for s in table):
        raise TokenizerError(f"scale table needs {N_SCALES} rows of {DEGREES} intervals")
    return table


class PitchVocab:
    """Token = scale_id * 7 + degree over a fixed table of 18 seven-note scales."""

    size = PITCH_VOCAB_SIZE

    def __init__(self, table: Sequence[Scale] | None = None):
        self.table = list(table) if table is not None else load_scale_table()
        self._pcs = [s.pitch_classes for s in self.table]

    def detect_scale(self, events: Iterable[NoteEvent]) -> int:
        hist = Counter(e.pitch % 12 for e in events if not e.is_rest)
        if not hist:
            raise TokenizerError("cannot detect a scale without pitched notes")
        best, best_score = 0, -1
        for sid, pcs in enumerate(self._pcs):
            score = sum(hist[pc] for pc in pcs)
            if score > best_score:
                best, best_score = sid, score
        return best

    def degree_of(self, pitch: int, scale_id: int) -> int:
        pcs = self._pcs[scale_id]
        pc = pitch % 12
        if pc in pcs:
            return pcs.index(pc)
        # nearest member on the pitch-class circle; ties resolve downward
        best = None
        for deg, member in enumerate(pcs):
            down = (pc - member) % 12
            up = (member - pc) % 12
            cand = (min(down, up), 0 if down <= up else 1, deg)
            if best is None or cand < best:
                best = cand
        return best[2]

    def encode(self, pitch: int, scale_id: int) -> int:
        if not 0 <= scale_id < N_SCALES:
            raise TokenizerError(f"scale id {scale_id} outside [0, {N_SCALES})")
        return scale_id * DEGREES + self.degree_of(pitch, scale_id)

    @staticmethod
    def split(token: int) -> tuple[int, int]:
        if not 0 <= token < PITCH_VOCAB_SIZE:
            raise TokenizerError(f"pitch token {token} outside [0, {PITCH_VOCAB_SIZE})")
        return divmod(int(token), DEGREES)

    def pitch_class(self, token: int) -> int:
        sid, deg = self.split(token)
        return self._pcs[sid][deg]

    def decode(self, token: int, reference: int = 60) -> int:
        """The MIDI pitch with the token's pitch class closest to ``reference`` (lower on ties)."""
        pc = self.pitch_class(token)
        base = reference - ((reference - pc) % 12)
        cands = [c for c in (base, base + 12) if 0 <= c <= 127]
        return min(cands, key=lambda c: (abs(c - reference), c))


def detect_scale(voice: Iterable[NoteEvent], vocab: PitchVocab | None = None) -> int:
    return (vocab or PitchVocab()).detect_scale(voice)


def encode_pitch(pitch: int, scale_id: int, vocab: PitchVocab | None = None) -> int:
    return (vocab or PitchVocab()).encode(pitch, scale_id)


class DurationVocab:
    def __init__(self, durations: Iterable[Fraction]):
        self.durations = sorted({Fraction(d) for d in durations})
        if not self.durations:
            raise TokenizerError("duration vocabulary is empty")
        self._index = {d: i for i, d in enumerate(self.durations)}

    def __len__(self):
        return len(self.durations)

    @property
    def size(self) -> int:
        return len(self.durations)

    def __contains__(self, d) -> bool:
        return Fraction(d) in self._index

    def encode(self, d) -> int:
        try:
            return self._index[Fraction(d)]
        except KeyError:
            raise TokenizerError(f"duration {d} not in vocabulary") from None

    def nearest(self, d) -> int:
        """Token of the closest vocabulary duration (shorter on ties)."""
        d = Fraction(d)
        return min(range(len(self.durations)), key=lambda i: (abs(self.durations[i] - d), self.durations[i]))

    def decode(self, token: int) -> Fraction:
        return self.durations[int(token)]

    def save(self, path) -> None:
        Path(path).write_text("".join(f"{d}\n" for d in self.durations))

    @classmethod
    def load(cls, path) -> "DurationVocab":
        lines = [ln.strip() for ln in Path(path).read_text().splitlines() if ln.strip()]
        return cls(Fraction(ln) for ln in lines)

    def to_list(self) -> list[str]:
        return [str(d) for d in self.durations]


def build_duration_vocab(corpus: Iterable[VoicedMelody]) -> DurationVocab:
    """Sorted distinct durations of every pitched note in the corpus."""
    seen = set()
    n = 0
    for m in corpus:
        n += 1
        for v in m.voices:
            seen.update(e.duration for e in v if not e.is_rest)
    if n == 0:
        raise TokenizerError("cannot build a vocabulary from an empty corpus")
    return DurationVocab(seen)


@dataclass
class SequenceBatch:
    pitch: np.ndarray  # [rows, 150] int64
    duration: np.ndarray  # [rows, 150] int64
    sources: list[tuple[int, int, int]] = field(default_factory=list)  # (melody, window, scale)
    dropped_rows: int = 0
    truncated_rows: int = 0

    def __len__(self):
        return self.pitch.shape[0]


def _row(voices, w, scale, pvocab: PitchVocab, dvocab: DurationVocab):
    pitch, dur = [], []
    for v in voices:
        for ev in v[w * WINDOW:(w + 1) * WINDOW]:
            if ev.is_rest or ev.duration not in dvocab:
                return None
            pitch.append(pvocab.encode(ev.pitch, scale))
            dur.append(dvocab.encode(ev.duration))
    return pitch, dur


def melody_rows(m: VoicedMelody, pvocab: PitchVocab, dvocab: DurationVocab):
    """Yield ``(window, scale, pitch_row, dur_row)`` or ``(window, scale, None, None)`` for dropped rows."""
    picked = extract_voices(m, VOICES)
    usable = min(len(v) for v in picked.voices) // WINDOW
    if usable < 1:
        return
    scale = pvocab.detect_scale(e for v in picked.voices for e in v)
    for w in range(usable):
        row = _row(picked.voices, w, scale, pvocab, dvocab)
        yield (w, scale) + (row if row else (None, None))


def make_batches(
    corpus: Sequence[VoicedMelody],
    pitch_vocab: PitchVocab,
    dur_vocab: DurationVocab,
    melodies_per_batch: int = MELODIES_PER_BATCH,
    rows_per_batch: int = ROWS_PER_BATCH,
) -> Iterator[SequenceBatch]:
    """Cut each group of ``melodies_per_batch`` melodies into up to ``rows_per_batch`` rows.

    A row holds 50 consecutive notes from each of three voices (stride 50).
    """
    width = VOICES * WINDOW
    for start in range(0, len(corpus), melodies_per_batch):
        prow, drow, sources = [], [], []
        dropped = truncated = 0
        for mi in range(start, min(start + melodies_per_batch, len(corpus))):
            m = corpus[mi]
            try:
                rows = list(melody_rows(m, pitch_vocab, dur_vocab))
            except InsufficientVoicesError as exc:
                log.warning("skipping melody %d (%s): %s", mi, m.title, exc)
                continue
            if not rows:
                log.warning("skipping melody %d (%s): fewer than %d notes per voice", mi, m.title, WINDOW)
                continue
            for w, scale, p, d in rows:
                if p is None:
                    dropped += 1
                elif len(prow) >= rows_per_batch:
                    truncated += 1
                else:
                    prow.append(p)
                    drow.append(d)
                    sources.append((mi, w, scale))
        if dropped:
            log.info("dropped %d row(s) with rests or out-of-vocabulary durations", dropped)
        yield SequenceBatch(
            np.array(prow, dtype=np.int64).reshape(-1, width),
            np.array(drow, dtype=np.int64).reshape(-1, width),
            sources,
            dropped,
            truncated,
        )


def decode_row(pitch_row, dur_row, pvocab: PitchVocab, dvocab: DurationVocab,
               registers: Sequence[int] = VOICE_REGISTERS, title: str = "") -> VoicedMelody:
    """Turn a 150-token row back into a 3-voice melody, each voice following its own register."""
    n = len(pitch_row) // VOICES
    voices = []
    for v in range(VOICES):
        ref = registers[v]
        events = []
        for t in range(v * n, (v + 1) * n):
            p = pvocab.decode(int(pitch_row[t]), ref)
            events.append(NoteEvent(p, dvocab.decode(int(dur_row[t]))))
            ref = p
        voices.append(events)
    return VoicedMelody(voices, title=title)
