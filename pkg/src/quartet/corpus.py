"""Access to bundled data: the desk corpus, golden rhythm plans and a demo chat log."""

from __future__ import annotations

from fractions import Fraction
from importlib import resources
from pathlib import Path

import numpy as np

from quartet.notation import NoteEvent, VoicedMelody, parse_midi

_SYNTH_DURATIONS = (Fraction(1, 8), Fraction(1, 4), Fraction(3, 8), Fraction(1, 2))
_MAJOR = (0, 2, 4, 5, 7, 9, 11)


def data_dir() -> Path:
    return Path(str(resources.files("quartet").joinpath("data")))


def desk_corpus_files() -> list[Path]:
    return sorted((data_dir() / "desk_corpus").glob("*.mid"))


def load_corpus(directory=None) -> list[VoicedMelody]:
    """Parse every ``*.mid`` file in ``directory`` (default: the desk corpus) in file-name order."""
    files = desk_corpus_files() if directory is None else sorted(Path(directory).glob("*.mid"))
    out = []
    for f in files:
        m = parse_midi(f.read_bytes())
        m.meta["source"] = f.name
        out.append(m)
    return out


def plan_path(name: str) -> Path:
    """Bundled plan by stem: ``fig1``, ``melody1``, ``melody2`` or ``melody3``."""
    p = data_dir() / "plans" / f"{name}.plan"
    if not p.exists():
        raise FileNotFoundError(f"no bundled plan named {name!r}")
    return p


def demo_chat_path() -> Path:
    return data_dir() / "chats" / "demo.jsonl"


def synthetic_corpus(n: int, seed: int = 0, voices: int = 3, min_notes: int = 16, max_notes: int = 40) -> list[VoicedMelody]:
    """Seeded random diatonic melodies, random walk per voice, for pipeline tests."""
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n):
        tonic = int(rng.integers(0, 12))
        shift = tonic - 12 if tonic > 6 else tonic
        length = int(rng.integers(min_notes, max_notes + 1))
        vs = []
        for v in range(voices):
            step = int(rng.integers(0, 7))
            base = 72 - 12 * v
            events = []
            for _ in range(length):
                step = int(np.clip(step + rng.integers(-2, 3), -7, 13))
                octave, deg = divmod(step, 7)
                pitch = base + shift + 12 * octave + _MAJOR[deg]
                events.append(NoteEvent(int(pitch), _SYNTH_DURATIONS[int(rng.integers(0, len(_SYNTH_DURATIONS)))]))
            vs.append(events)
        out.append(VoicedMelody(vs, title=f"synthetic {i + 1}"))
    return out
