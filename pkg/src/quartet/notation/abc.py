"""ABC text conversion for a bounded notation subset.

Supported on input: header fields X, T, L, K, M, V; notes with accidentals
(``^ ^^ _ __ =``), octave marks (``,`` and ``'``), duration multipliers and
divisors; rests ``z``/``x``; bar lines; ``%`` comments.  Anything else
(chords, ties, tuplets, broken rhythm, grace notes, decorations, chord
symbols, inline fields) is rejected with its line and column.
"""

from __future__ import annotations

import re
from fractions import Fraction

from quartet.notation.core import EmptyMelodyError, NotationError, NoteEvent, VoicedMelody

DEFAULT_UNIT = Fraction(1, 8)
BARS_PER_LINE = 4

_LETTERS = "CDEFGAB"
_LETTER_PC = {"C": 0, "D": 2, "E": 4, "F": 5, "G": 7, "A": 9, "B": 11}
# sharp spelling for each pitch class: (letter, alteration)
_SPELL = [("C", 0), ("C", 1), ("D", 0), ("D", 1), ("E", 0), ("F", 0),
          ("F", 1), ("G", 0), ("G", 1), ("A", 0), ("A", 1), ("B", 0)]
_SUPPORTED_FIELDS = set("XTLKMV")


class AbcEncodeError(NotationError):
    pass


class AbcDecodeError(NotationError):
    def __init__(self, message: str, line: int, column: int):
        super().__init__(f"{message} at line {line}, column {column}")
        self.line = line
        self.column = column


class DollarAmbiguityError(NotationError):
    pass


# --------------------------------------------------------------------------
# newline flattening


def flatten_newlines(text: str) -> str:
    if "$" in text:
        raise DollarAmbiguityError("text already contains '$'; flattening would not be reversible")
    return text.replace("\n", "$")


def unflatten_newlines(text: str) -> str:
    return text.replace("$", "\n")


# --------------------------------------------------------------------------
# encoding


def _duration_token(d: Fraction, unit: Fraction, where: str) -> str:
    m = Fraction(d) / unit
    num, den = m.numerator, m.denominator
    if den & (den - 1):
        raise AbcEncodeError(f"{where}: duration {d} is not a power-of-two fraction of L:{unit}")
    if den == 1:
        return "" if num == 1 else str(num)
    if num == 1:
        return "/" if den == 2 else f"/{den}"
    return f"{num}/{den}"


def _pitch_token(p: int, bar_state: dict) -> str:
    octave = p // 12 - 1
    letter, alter = _SPELL[p % 12]
    key = (letter, octave)
    # sharps are always written; a natural is marked only after a sharp in the same bar
    acc = ""
    if alter == 1:
        acc = "^"
    elif bar_state.get(key, 0) == 1:
        acc = "="
    bar_state[key] = alter
    if octave >= 5:
        name = letter.lower() + "'" * (octave - 5)
    else:
        name = letter + "," * (4 - octave)
    return acc + name


def encode_voice_body(events, unit: Fraction = DEFAULT_UNIT, start_index: int = 0) -> str:
    """Body lines for one voice; bars close at every whole-note boundary a note lands on."""
    lines, bars, tokens = [], [], []
    state: dict = {}
    pos = Fraction(0)
    for i, ev in enumerate(events, start_index):
        where = f"event {i} ({ev!r})"
        dur = _duration_token(ev.duration, unit, where)
        tokens.append(("z" if ev.is_rest else _pitch_token(ev.pitch, state)) + dur)
        pos += ev.duration
        if pos.denominator == 1:
            bars.append(" ".join(tokens))
            tokens, state = [], {}
            if len(bars) == BARS_PER_LINE:
                lines.append(" | ".join(bars) + " |")
                bars = []
    if tokens:
        bars.append(" ".join(tokens))
    if bars:
        lines.append(" | ".join(bars) + " |")
    return "\n".join(lines)


def encode_header(m: VoicedMelody, unit: Fraction = DEFAULT_UNIT, index: int = 1) -> str:
    title = (m.title or "").replace("\n", " ").replace("$", "")
    head = [f"X:{index}"]
    head.append(f"T:{title}" if title else "T:")
    head.append(f"L:{unit.numerator}/{unit.denominator}")
    head.append("K:C")
    return "\n".join(head)


def encode_abc(m: VoicedMelody, unit: Fraction = DEFAULT_UNIT, index: int = 1) -> str:
    """Render ``m`` as an ABC tune; multi-voice melodies get one ``V:`` section per voice."""
    parts = [encode_header(m, unit, index)]
    multi = len(m.voices) > 1
    for vi, voice in enumerate(m.voices, 1):
        if multi:
            parts.append(f"V:{vi}")
        body = encode_voice_body(voice, unit)
        if body:
            parts.append(body)
    return "\n".join(parts) + "\n"


# --------------------------------------------------------------------------
# decoding

_MODES = {
    "": 0, "maj": 0, "major": 0, "ion": 0, "ionian": 0,
    "m": -3, "min": -3, "minor": -3, "aeo": -3, "aeolian": -3,
    "dor": -2, "dorian": -2, "phr": -4, "phrygian": -4, "lyd": 1, "lydian": 1,
    "mix": -1, "mixolydian": -1, "loc": -5, "locrian": -5,
}
_MAJOR_FIFTHS = {"C": 0, "G": 1, "D": 2, "A": 3, "E": 4, "B": 5, "F#": 6, "C#": 7,
                 "F": -1, "Bb": -2, "Eb": -3, "Ab": -4, "Db": -5, "Gb": -6, "Cb": -7,
                 "G#": 8, "D#": 9, "A#": 10, "E#": 11, "B#": 12, "Fb": -8}
_SHARP_ORDER = "FCGDAEB"


def key_signature(text: str) -> dict[str, int]:
    """Letter -> alteration implied by a ``K:`` value such as ``G``, ``Dm``, ``Ador``."""
    t = text.strip().split("%")[0].strip()
    if not t or t.lower() == "none":
        return {}
    m = re.match(r"^([A-G])([#b]?)\s*([A-Za-z]*)", t)
    if not m:
        raise ValueError(f"unrecognised key {text!r}")
    tonic, acc, mode = m.group(1), m.group(2), m.group(3).lower()
    if mode not in _MODES:
        for name in _MODES:
            if name and len(mode) >= 3 and name.startswith(mode[:3]):
                mode = name
                break
        else:
            raise ValueError(f"unrecognised mode in key {text!r}")
    fifths = _MAJOR_FIFTHS[tonic + acc] + _MODES[mode]
    sig = {}
    if fifths > 0:
        for i in range(fifths):
            letter = _SHARP_ORDER[i % 7]
            sig[letter] = sig.get(letter, 0) + 1
    elif fifths < 0:
        for i in range(-fifths):
            letter = _SHARP_ORDER[6 - i % 7]
            sig[letter] = sig.get(letter, 0) - 1
    return sig


_FIELD_RE = re.compile(r"^([A-Za-z]):(.*)$")
_NOTE_RE = re.compile(r"(\^\^|\^|__|_|=)?([A-Ga-g])([,']*)((?:\d+)?(?:/+\d*)?)")
_REST_RE = re.compile(r"([zx])((?:\d+)?(?:/+\d*)?)")
_BAR_RE = re.compile(r"\|\]|\|\||\[\||\|:|:\||::|\|")


def _parse_duration(tok: str, unit: Fraction) -> Fraction:
    if not tok:
        return unit
    num_s, _, rest = tok.partition("/")
    num = int(num_s) if num_s else 1
    if "/" not in tok:
        return unit * num
    slashes = 1 + len(rest) - len(rest.lstrip("/"))
    den_s = rest.lstrip("/")
    if den_s:
        den = int(den_s) * 2 ** (slashes - 1)
    else:
        den = 2 ** slashes
    return unit * Fraction(num, den)


def decode_abc(text: str) -> VoicedMelody:
    """Parse the supported ABC subset; a leading ``X:`` header block is optional."""
    if "$" in text:
        text = unflatten_newlines(text)
    unit = DEFAULT_UNIT
    title = ""
    key_text = ""
    sig: dict[str, int] = {}
    voices: dict[str, list[NoteEvent]] = {}
    current = "1"
    bar_state: dict = {}
    for ln, raw in enumerate(text.split("\n"), 1):
        line = raw.split("%", 1)[0].rstrip()
        if not line.strip():
            continue
        fm = _FIELD_RE.match(line.strip())
        if fm and not line.strip().startswith(("|", "[")):
            name, value = fm.group(1), fm.group(2).strip()
            col = raw.index(name) + 1
            if name not in _SUPPORTED_FIELDS:
                raise AbcDecodeError(f"unsupported header field '{name}:'", ln, col)
            try:
                if name == "T" and not title:
                    title = value
                elif name == "L":
                    unit = Fraction(value)
                    if unit <= 0:
                        raise ValueError(value)
                elif name == "K":
                    key_text = value
                    sig = key_signature(value)
                elif name == "V":
                    current = value.split()[0] if value else "1"
                elif name == "M" and value.lower() not in ("none", "c", "c|"):
                    Fraction(value)
            except (ValueError, ZeroDivisionError, KeyError):
                raise AbcDecodeError(f"malformed '{name}:' value {value!r}", ln, col) from None
            bar_state = {}
            continue
        voice = voices.setdefault(current, [])
        i = 0
        while i < len(line):
            ch = line[i]
            if ch.isspace():
                i += 1
                continue
            bm = _BAR_RE.match(line, i)
            if bm:
                bar_state = {}
                i = bm.end()
                continue
            nm = _NOTE_RE.match(line, i)
            if nm:
                acc, letter, octs, dur = nm.groups()
                upper = letter.upper()
                octave = 4 if letter.isupper() else 5
                octave += octs.count("'") - octs.count(",")
                key = (upper, octave)
                if acc:
                    alter = {"^": 1, "^^": 2, "_": -1, "__": -2, "=": 0}[acc]
                    bar_state[key] = alter
                else:
                    alter = bar_state.get(key, sig.get(upper, 0))
                pitch = 12 * (octave + 1) + _LETTER_PC[upper] + alter
                d = _parse_duration(dur, unit)
                if d <= 0:
                    raise AbcDecodeError("zero-length note", ln, i + 1)
                try:
                    voice.append(NoteEvent(pitch, d))
                except NotationError as exc:
                    raise AbcDecodeError(str(exc), ln, i + 1) from None
                i = nm.end()
                continue
            rm = _REST_RE.match(line, i)
            if rm:
                voice.append(NoteEvent.rest(_parse_duration(rm.group(2), unit)))
                i = rm.end()
                continue
            raise AbcDecodeError(f"unsupported ABC construct {ch!r}", ln, i + 1)
    voices = {k: v for k, v in voices.items() if v}
    if not voices:
        raise EmptyMelodyError("ABC text contains no notes")
    return VoicedMelody(list(voices.values()), title=title, key=key_text)


def count_events(text: str) -> int:
    """Number of note/rest events in the first voice of an ABC fragment."""
    return len(decode_abc(text).voices[0])
