"""Standard MIDI File (format 0/1) reading and writing."""

from __future__ import annotations

import logging
import struct
from collections import defaultdict, deque
from fractions import Fraction

from quartet.notation.core import EmptyMelodyError, NotationError, NoteEvent, VoicedMelody

log = logging.getLogger(__name__)

DEFAULT_GRID = 48  # cells per whole note


class MidiParseError(NotationError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


class _Reader:
    def __init__(self, data: bytes, pos: int = 0, end: int | None = None):
        self.data = data
        self.pos = pos
        self.end = len(data) if end is None else end

    def need(self, n):
        if self.pos + n > self.end:
            raise MidiParseError(f"unexpected end of data, wanted {n} byte(s)", self.pos)

    def byte(self) -> int:
        self.need(1)
        b = self.data[self.pos]
        self.pos += 1
        return b

    def take(self, n) -> bytes:
        self.need(n)
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def vlq(self) -> int:
        start = self.pos
        value = 0
        for _ in range(4):
            b = self.byte()
            value = (value << 7) | (b & 0x7F)
            if not b & 0x80:
                return value
        raise MidiParseError("variable-length quantity longer than 4 bytes", start)


_DATA_LEN = {0x80: 2, 0x90: 2, 0xA0: 2, 0xB0: 2, 0xC0: 1, 0xD0: 1, 0xE0: 2}


def _read_track(r: _Reader, track_idx: int, notes: dict, info: dict) -> None:
    tick = 0
    status = None
    pending: dict[tuple[int, int], deque] = defaultdict(deque)
    while r.pos < r.end:
        tick += r.vlq()
        at = r.pos
        b = r.byte()
        if b == 0xFF:
            mtype = r.byte()
            data = r.take(r.vlq())
            if mtype == 0x2F:
                break
            if mtype == 0x51 and len(data) == 3 and "tempo" not in info:
                info["tempo"] = round(60_000_000 / int.from_bytes(data, "big"))
            elif mtype == 0x03 and "title" not in info:
                info["title"] = data.decode("latin-1")
            continue
        if b in (0xF0, 0xF7):
            r.take(r.vlq())
            status = None
            continue
        if b & 0x80:
            status = b
            first = None
        else:
            if status is None:
                raise MidiParseError("data byte without running status", at)
            first = b
        kind = status & 0xF0
        if kind not in _DATA_LEN:
            raise MidiParseError(f"unsupported status byte 0x{status:02X}", at)
        n = _DATA_LEN[kind]
        args = [first] if first is not None else []
        while len(args) < n:
            args.append(r.byte())
        chan = status & 0x0F
        if kind == 0x90 and args[1] > 0:
            pending[(chan, args[0])].append(tick)
        elif kind == 0x80 or kind == 0x90:
            q = pending.get((chan, args[0]))
            if q:
                notes[(track_idx, chan)].append((q.popleft(), tick, args[0]))
    for (chan, pitch), starts in pending.items():
        for s in starts:
            notes[(track_idx, chan)].append((s, tick, pitch))


def _quantize(tick: int, ticks_per_cell: Fraction) -> int:
    x = Fraction(tick) / ticks_per_cell
    return int((x + Fraction(1, 2)) // 1)


def _split_lines(spans: list[tuple[int, int, int]]) -> list[list[tuple[int, int, int]]]:
    """Greedy assignment of notes to non-overlapping lines, highest pitch first at equal onsets."""
    lines: list[list[tuple[int, int, int]]] = []
    for span in sorted(spans, key=lambda s: (s[0], -s[2], s[1])):
        for line in lines:
            if line[-1][1] <= span[0]:
                line.append(span)
                break
        else:
            lines.append([span])
    return lines


def parse_midi(data: bytes, grid: int = DEFAULT_GRID) -> VoicedMelody:
    """Read a format 0/1 file into one voice per monophonic line.

    Onsets and offsets are rounded to multiples of ``1/grid`` whole note; gaps
    before a note become rests, so each voice's total equals its quantized span.
    """
    r = _Reader(bytes(data))
    if r.take(4) != b"MThd":
        raise MidiParseError("missing MThd header", 0)
    hlen = struct.unpack(">I", r.take(4))[0]
    if hlen < 6:
        raise MidiParseError("header chunk shorter than 6 bytes", 4)
    fmt, ntrks, division = struct.unpack(">HHH", r.take(6))
    r.pos = 8 + hlen
    if fmt not in (0, 1):
        raise MidiParseError(f"unsupported MIDI format {fmt}", 8)
    if division & 0x8000:
        raise MidiParseError("SMPTE time division is not supported", 12)
    tpq = division
    notes: dict[tuple[int, int], list] = defaultdict(list)
    info: dict = {}
    track_idx = 0
    while r.pos < r.end and track_idx < ntrks:
        if r.end - r.pos < 8:
            raise MidiParseError("truncated chunk header", r.pos)
        start = r.pos
        ctype = r.take(4)
        clen = struct.unpack(">I", r.take(4))[0]
        if r.pos + clen > r.end:
            raise MidiParseError(f"chunk {ctype!r} runs past end of file", start)
        if ctype == b"MTrk":
            _read_track(_Reader(r.data, r.pos, r.pos + clen), track_idx, notes, info)
            track_idx += 1
        r.pos += clen
    if track_idx < ntrks:
        raise MidiParseError(f"header declares {ntrks} tracks, found {track_idx}", r.pos)

    ticks_per_cell = Fraction(4 * tpq, grid)
    voices: list[list[NoteEvent]] = []
    dropped = 0
    for key in sorted(notes):
        spans = []
        for s, e, p in notes[key]:
            qs, qe = _quantize(s, ticks_per_cell), _quantize(e, ticks_per_cell)
            if qe <= qs:
                dropped += 1
                continue
            spans.append((qs, qe, p))
        for line in _split_lines(spans):
            cursor = 0
            events = []
            for qs, qe, p in line:
                if qs > cursor:
                    events.append(NoteEvent.rest(Fraction(qs - cursor, grid)))
                events.append(NoteEvent(p, Fraction(qe - qs, grid)))
                cursor = qe
            voices.append(events)
    if dropped:
        log.warning("dropped %d note(s) shorter than half a grid cell", dropped)
    if not voices:
        raise EmptyMelodyError("no notes found in MIDI data")
    return VoicedMelody(voices, title=info.get("title", ""), tempo=info.get("tempo", 120))


def _vlq(n: int) -> bytes:
    out = [n & 0x7F]
    n >>= 7
    while n:
        out.append(0x80 | (n & 0x7F))
        n >>= 7
    return bytes(reversed(out))


def _chunk(tag: bytes, body: bytes) -> bytes:
    return tag + struct.pack(">I", len(body)) + body


def write_midi(m: VoicedMelody, tpq: int = 480, velocity: int = 80) -> bytes:
    """Encode as format 1: a conductor track then one track per voice."""
    ticks_per_whole = 4 * tpq
    conductor = bytearray()
    if m.title:
        name = m.title.encode("latin-1", "replace")
        conductor += b"\x00\xff\x03" + _vlq(len(name)) + name
    conductor += b"\x00\xff\x51\x03" + round(60_000_000 / m.tempo).to_bytes(3, "big")
    conductor += b"\x00\xff\x2f\x00"
    tracks = [_chunk(b"MTrk", bytes(conductor))]
    channels = [c for c in range(16) if c != 9]
    for vi, voice in enumerate(m.voices):
        chan = channels[vi % len(channels)]
        body = bytearray()
        wait = 0
        carry = Fraction(0)
        for ev in voice:
            exact = ev.duration * ticks_per_whole + carry
            ticks = int(exact)
            carry = exact - ticks
            if ev.is_rest:
                wait += ticks
                continue
            body += _vlq(wait) + bytes([0x90 | chan, ev.pitch, velocity])
            body += _vlq(ticks) + bytes([0x80 | chan, ev.pitch, 0])
            wait = 0
        body += _vlq(wait) + b"\xff\x2f\x00"
        tracks.append(_chunk(b"MTrk", bytes(body)))
    header = _chunk(b"MThd", struct.pack(">HHH", 1, len(tracks), tpq))
    return header + b"".join(tracks)
