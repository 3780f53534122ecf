"""Regenerate the bundled desk corpus (40 three-voice MIDI arrangements).

Each file arranges a public-domain tune for three voices: the tune, a
diatonic harmony line at a third or sixth below, and a bass line built from
the I/IV/V triad that best fits each bar.  Output is deterministic.

    python tools/make_desk_corpus.py [OUT_DIR]
"""

from __future__ import annotations

import sys
from fractions import Fraction
from pathlib import Path

from quartet.notation import NoteEvent, VoicedMelody, decode_abc, write_midi

# (title, ABC body at L:1/4 in C major)
TUNES = [
    ("Ode to Joy",
     "E E F G | G F E D | C C D E | E3/2 D/ D2 | E E F G | G F E D | C C D E | D3/2 C/ C2 |"
     "D D E C | D E/ F/ E C | D E/ F/ E D | C D G,2 | E E F G | G F E D | C C D E | D3/2 C/ C2 |"),
    ("Twinkle Twinkle Little Star",
     "C C G G | A A G2 | F F E E | D D C2 | G G F F | E E D2 | G G F F | E E D2 |"
     "C C G G | A A G2 | F F E E | D D C2 |"),
    ("Frere Jacques",
     "C D E C | C D E C | E F G2 | E F G2 | G/ A/ G/ F/ E C | G/ A/ G/ F/ E C | C G, C2 | C G, C2 |"),
    ("Mary Had a Little Lamb",
     "E D C D | E E E2 | D D D2 | E G G2 | E D C D | E E E E | D D E D | C4 |"),
    ("London Bridge",
     "G3/2 A/ G F | E F G2 | D E F2 | E F G2 | G3/2 A/ G F | E F G2 | D2 G2 | E C C2 |"),
    ("Au Clair de la Lune",
     "C C C D | E2 D2 | C E D D | C4 | C C C D | E2 D2 | C E D D | C4 |"
     "D D D D | A,2 A,2 | D C B, A, | G,4 | C C C D | E2 D2 | C E D D | C4 |"),
    ("Jingle Bells",
     "E E E2 | E E E2 | E G C3/2 D/ | E4 | F F F3/2 F/ | F E E E/ E/ | E D D E | D2 G2 |"
     "E E E2 | E E E2 | E G C3/2 D/ | E4 | F F F F | F E E E/ E/ | G G F D | C4 |"),
    ("Yankee Doodle",
     "C C D E | C E D G, | C C D E | C2 B,2 | C C D E | F E D C | B, G, A, B, | C2 C2 |"),
    ("Hot Cross Buns",
     "E D C2 | E D C2 | C/ C/ C/ C/ D/ D/ D/ D/ | E D C2 |"),
    ("Lightly Row",
     "G E E2 | F D D2 | C D E F | G G G2 | G E E2 | F D D2 | C E G G | C4 |"
     "D D D D | D E F2 | E E E E | E F G2 | G E E2 | F D D2 | C E G G | C4 |"),
]

C_MAJOR = [0, 2, 4, 5, 7, 9, 11]
CHORDS = {"I": (0, 4, 7), "IV": (5, 9, 0), "V": (7, 11, 2)}
# (key offset, harmony shift in scale steps, bass pattern)
VARIANTS = [(0, -2, "quarters"), (7, -5, "eighths"), (5, -2, "root-fifth"), (2, -5, "quarters")]
MIN_NOTES = 56


def _degree(p: int) -> tuple[int, int]:
    octave, pc = divmod(p, 12)
    return octave, C_MAJOR.index(pc)


def _shift(p: int, steps: int) -> int:
    octave, deg = _degree(p)
    total = octave * 7 + deg + steps
    o, d = divmod(total, 7)
    return o * 12 + C_MAJOR[d]


def _bars(events):
    bars, cur, pos = [], [], Fraction(0)
    for e in events:
        cur.append(e)
        pos += e.duration
        if pos.denominator == 1:
            bars.append(cur)
            cur = []
    if cur:
        bars.append(cur)
    return bars


def _chord_for(bar) -> str:
    def score(name):
        tones = CHORDS[name]
        return sum(float(e.duration) for e in bar if e.pitch % 12 in tones)
    return max(["I", "IV", "V"], key=lambda n: (score(n), n == "I"))


def _bass(bars, pattern: str) -> list[NoteEvent]:
    out = []
    for bar in bars:
        length = sum((e.duration for e in bar), Fraction(0))
        root, third, fifth = CHORDS[_chord_for(bar)]
        r, f = 36 + root, 36 + fifth
        if f < r:
            f += 12
        if pattern == "eighths" and length == 1:
            out += [NoteEvent(r if i % 2 == 0 else f, Fraction(1, 8)) for i in range(8)]
        elif pattern == "root-fifth" and length == 1:
            out += [NoteEvent(r, Fraction(1, 4)), NoteEvent(f, Fraction(1, 4)),
                    NoteEvent(r, Fraction(1, 4)), NoteEvent(f, Fraction(1, 4))]
        else:
            q = Fraction(1, 4)
            n, rem = divmod(length, q)
            out += [NoteEvent(r if i % 2 == 0 else 36 + third, q) for i in range(int(n))]
            if rem:
                out.append(NoteEvent(r, rem))
    return out


def arrange(tune_idx: int, variant: int) -> VoicedMelody:
    title, body = TUNES[tune_idx]
    tune = decode_abc("L:1/4\nK:C\n" + body).voices[0]
    reps = 1
    while len(tune) * reps < MIN_NOTES:
        reps += 1
    tune = tune * reps
    key, harm, pattern = VARIANTS[variant]
    key = (key + 3 * tune_idx) % 12
    if key > 6:
        key -= 12
    top = [NoteEvent(e.pitch + 12 + key, e.duration) for e in tune]
    mid = [NoteEvent(_shift(e.pitch, harm) + key, e.duration) for e in tune]
    low = [NoteEvent(e.pitch + key, e.duration) for e in _bass(_bars(tune), pattern)]
    return VoicedMelody([top, mid, low], title=f"{title} ({variant + 1})", tempo=100 + 4 * variant)


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    out = Path(argv[0]) if argv else Path(__file__).resolve().parents[1] / "src/quartet/data/desk_corpus"
    out.mkdir(parents=True, exist_ok=True)
    n = 0
    for v in range(len(VARIANTS)):
        for t in range(len(TUNES)):
            n += 1
            (out / f"{n:03d}.mid").write_bytes(write_midi(arrange(t, v)))
    print(f"wrote {n} files to {out}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
