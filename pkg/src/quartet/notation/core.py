"""Note events, voiced melodies and voice selection."""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction

PAD_REST = Fraction(1, 4)


class NotationError(ValueError):
    pass


class EmptyMelodyError(NotationError):
    pass


class InsufficientVoicesError(NotationError):
    pass


@dataclass(frozen=True)
class NoteEvent:
    """A pitched note or a rest; ``duration`` is in whole notes (quarter = 1/4)."""

    pitch: int
    duration: Fraction
    is_rest: bool = False

    def __post_init__(self):
        d = Fraction(self.duration)
        object.__setattr__(self, "duration", d)
        if d <= 0:
            raise NotationError(f"duration must be positive, got {d}")
        if not self.is_rest and not 0 <= self.pitch <= 127:
            raise NotationError(f"pitch {self.pitch} outside MIDI range")
        if self.is_rest:
            object.__setattr__(self, "pitch", 0)

    @classmethod
    def rest(cls, duration) -> "NoteEvent":
        return cls(0, Fraction(duration), True)

    def __repr__(self):
        return f"rest({self.duration})" if self.is_rest else f"note({self.pitch}, {self.duration})"


Voice = list  # list[NoteEvent]


@dataclass
class VoicedMelody:
    voices: list[list[NoteEvent]]
    title: str = ""
    tempo: int = 120
    key: str = ""
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.voices:
            raise EmptyMelodyError("a melody needs at least one voice")

    def totals(self) -> list[Fraction]:
        return [sum((e.duration for e in v), Fraction(0)) for v in self.voices]

    def note_counts(self) -> list[int]:
        return [sum(not e.is_rest for e in v) for v in self.voices]

    def same_events(self, other: "VoicedMelody") -> bool:
        return [list(v) for v in self.voices] == [list(v) for v in other.voices]


def extract_voices(m: VoicedMelody, k: int) -> VoicedMelody:
    """Keep the ``k`` voices with most notes, most first, rest-padded to equal event counts.

    Ties go to the lower original voice index.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    counts = m.note_counts()
    candidates = [i for i, c in enumerate(counts) if c > 0]
    if len(candidates) < k:
        raise InsufficientVoicesError(f"need {k} non-empty voices, found {len(candidates)}")
    chosen = sorted(candidates, key=lambda i: (-counts[i], i))[:k]
    voices = [list(m.voices[i]) for i in chosen]
    longest = max(len(v) for v in voices)
    for v in voices:
        v.extend(NoteEvent.rest(PAD_REST) for _ in range(longest - len(v)))
    return VoicedMelody(voices, m.title, m.tempo, m.key, dict(m.meta))
