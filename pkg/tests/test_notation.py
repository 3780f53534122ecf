import io
import logging
import struct
from fractions import Fraction

import mido
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from quartet.corpus import desk_corpus_files
from quartet.notation import (
    AbcDecodeError,
    AbcEncodeError,
    DollarAmbiguityError,
    EmptyMelodyError,
    InsufficientVoicesError,
    MidiParseError,
    NoteEvent,
    VoicedMelody,
    count_events,
    decode_abc,
    encode_abc,
    extract_voices,
    flatten_newlines,
    join_record,
    make_finetune_records,
    parse_midi,
    read_jsonl,
    split_record,
    unflatten_newlines,
    write_jsonl,
    write_midi,
)
from quartet.notation.abc import key_signature

F = Fraction


def mido_note_count(data: bytes) -> int:
    mf = mido.MidiFile(file=io.BytesIO(data))
    return sum(1 for tr in mf.tracks for msg in tr if msg.type == "note_on" and msg.velocity > 0)


@pytest.mark.parametrize("path", desk_corpus_files(), ids=lambda p: p.name)
def test_midi_note_counts_match_mido(path):
    data = path.read_bytes()
    m = parse_midi(data)
    assert sum(m.note_counts()) == mido_note_count(data)


def test_desk_corpus_shape(desk_corpus):
    assert len(desk_corpus) == 40
    for m in desk_corpus:
        assert len(m.voices) == 3
        assert len(set(m.totals())) == 1


# ---- MIDI ----------------------------------------------------------------

_durs = st.sampled_from([F(1, 16), F(1, 8), F(3, 16), F(1, 4), F(3, 8), F(1, 2), F(1), F(1, 12), F(1, 6)])
_note = st.builds(NoteEvent, st.integers(21, 108), _durs)
_voice = st.lists(_note, min_size=1, max_size=24)


@settings(max_examples=60, deadline=None)
@given(st.lists(_voice, min_size=1, max_size=3))
def test_midi_round_trip(voices):
    m = VoicedMelody(voices, title="t")
    back = parse_midi(write_midi(m))
    assert back.same_events(m)


def test_written_midi_readable_by_mido():
    m = VoicedMelody([[NoteEvent(60, F(1, 4)), NoteEvent(62, F(1, 2))], [NoteEvent(48, F(3, 4))]])
    data = write_midi(m)
    mf = mido.MidiFile(file=io.BytesIO(data))
    assert mf.type == 1 and mf.ticks_per_beat == 480 and len(mf.tracks) == 3
    assert mido_note_count(data) == 3


def _smf(tracks, tpq=96, fmt=1):
    out = b"MThd" + struct.pack(">IHHH", 6, fmt, len(tracks), tpq)
    for body in tracks:
        out += b"MTrk" + struct.pack(">I", len(body)) + body
    return out


def test_running_status_and_leading_rest():
    # delta 96 -> note on C4, running status note-off (velocity 0) after 96 more ticks, end of track
    body = bytes([96, 0x90, 60, 80, 96, 60, 0, 0, 0xFF, 0x2F, 0])
    m = parse_midi(_smf([body]))
    assert m.voices[0] == [NoteEvent.rest(F(1, 4)), NoteEvent(60, F(1, 4))]


def test_zero_length_note_dropped(caplog):
    body = bytes([0, 0x90, 60, 80, 0, 0x80, 60, 0, 0, 0x90, 62, 80, 96, 0x80, 62, 0, 0, 0xFF, 0x2F, 0])
    with caplog.at_level(logging.WARNING):
        m = parse_midi(_smf([body]))
    assert m.voices[0] == [NoteEvent(62, F(1, 4))]
    assert "dropped 1 note" in caplog.text


def test_malformed_midi():
    with pytest.raises(MidiParseError):
        parse_midi(b"RIFF0000")
    good = write_midi(VoicedMelody([[NoteEvent(60, F(1, 4))]]))
    with pytest.raises(MidiParseError):
        parse_midi(good[:-6])
    smpte = b"MThd" + struct.pack(">IHHh", 6, 0, 1, -(25 << 8) | 40) + b"MTrk" + struct.pack(">I", 4) + bytes([0, 0xFF, 0x2F, 0])
    with pytest.raises(MidiParseError):
        parse_midi(smpte)


def test_overlapping_notes_split_into_lines():
    # two overlapping notes on one channel become two monophonic lines
    body = bytes([0, 0x90, 60, 80, 0, 0x90, 64, 80, 96, 0x80, 60, 0, 96, 0x80, 64, 0, 0, 0xFF, 0x2F, 0])
    m = parse_midi(_smf([body]))
    assert sorted(m.note_counts()) == [1, 1]


# ---- ABC -----------------------------------------------------------------


def test_abc_round_trip_desk_corpus(desk_corpus):
    for m in desk_corpus:
        assert decode_abc(encode_abc(m)).same_events(m)


_abc_durs = st.sampled_from([F(1, 32), F(1, 16), F(1, 8), F(3, 16), F(1, 4), F(3, 8), F(1, 2), F(3, 4), F(1), F(2)])
_abc_event = st.one_of(st.builds(NoteEvent, st.integers(21, 108), _abc_durs),
                       _abc_durs.map(NoteEvent.rest))


@settings(max_examples=80, deadline=None)
@given(st.lists(st.lists(_abc_event, min_size=1, max_size=30), min_size=1, max_size=3))
def test_abc_round_trip_property(voices):
    m = VoicedMelody(voices)
    assert decode_abc(encode_abc(m)).same_events(m)


def test_abc_agrees_with_music21(desk_corpus):
    music21 = pytest.importorskip("music21")
    for m in desk_corpus:
        single = VoicedMelody([m.voices[0]], title=m.title)
        score = music21.converter.parse(encode_abc(single), format="abc")
        notes = list(score.flatten().notesAndRests)
        assert len(notes) == len(m.voices[0])
        for ev, n in zip(m.voices[0], notes):
            assert F(n.quarterLength).limit_denominator(64) == ev.duration * 4
            if not ev.is_rest:
                assert n.pitch.midi == ev.pitch


def test_abc_size_far_below_musicxml(desk_corpus):
    music21 = pytest.importorskip("music21")
    from music21.musicxml.m21ToXml import GeneralObjectExporter

    m = desk_corpus[0]
    abc = encode_abc(m)
    xml = GeneralObjectExporter(music21.converter.parse(abc, format="abc")).parse()
    assert len(abc.encode()) * 10 <= len(xml)


def test_abc_encoding_text():
    m = VoicedMelody([[NoteEvent(60, F(1, 8)), NoteEvent(61, F(1, 4)), NoteEvent(61, F(1, 8)),
                       NoteEvent(72, F(1, 2)), NoteEvent.rest(F(1, 16)), NoteEvent(47, F(3, 16))]], title="x")
    assert encode_abc(m) == "X:1\nT:x\nL:1/8\nK:C\nC ^C2 ^C c4 | z/ B,,3/2 |\n"


def test_encode_rejects_tuplets():
    with pytest.raises(AbcEncodeError):
        encode_abc(VoicedMelody([[NoteEvent(60, F(1, 12))]]))


def test_key_signatures():
    assert key_signature("C") == {}
    assert key_signature("G") == {"F": 1}
    assert key_signature("Dm") == {"B": -1}
    assert key_signature("Ador") == {"F": 1}
    assert key_signature("Edor") == {"F": 1, "C": 1}
    assert key_signature("Bb") == {"B": -1, "E": -1}
    m = decode_abc("K:D\nF c =F |")
    assert [e.pitch for e in m.voices[0]] == [66, 73, 65]


def test_natural_after_sharp_is_marked():
    m = VoicedMelody([[NoteEvent(61, F(1, 8)), NoteEvent(60, F(1, 8))]])
    assert encode_abc(m).splitlines()[-1] == "^C =C |"


def test_accidental_persists_within_bar_only():
    m = decode_abc("K:C\n^F F | F")
    assert [e.pitch for e in m.voices[0]] == [66, 66, 65]


def test_duration_forms():
    m = decode_abc("L:1/8\nC C2 C/ C// C3/2 C/4")
    assert [e.duration for e in m.voices[0]] == [F(1, 8), F(1, 4), F(1, 16), F(1, 32), F(3, 16), F(1, 32)]


@pytest.mark.parametrize("text,line,col", [
    ("X:1\nK:C\nC [CEG] D", 3, 3),
    ("K:C\nC D (3CDE", 2, 5),
    ("K:C\nW:words", 2, 1),
    ("K:C\nC ~D", 2, 3),
])
def test_unsupported_constructs_report_position(text, line, col):
    with pytest.raises(AbcDecodeError) as info:
        decode_abc(text)
    assert (info.value.line, info.value.column) == (line, col)


def test_empty_abc():
    with pytest.raises(EmptyMelodyError):
        decode_abc("X:1\nT:nothing\nK:C\n")


def test_headerless_body_and_comments():
    m = decode_abc("C D E % a comment\n| G2 |")
    assert count_events("C D E % a comment\n| G2 |") == 4
    assert m.voices[0][-1] == NoteEvent(67, F(1, 4))


def test_dollar_flattening():
    text = "X:1\nK:C\nC D |\n"
    assert flatten_newlines(text) == "X:1$K:C$C D |$"
    assert unflatten_newlines(flatten_newlines(text)) == text
    with pytest.raises(DollarAmbiguityError):
        flatten_newlines("a$b")
    assert decode_abc(flatten_newlines(text)).same_events(decode_abc(text))


# ---- records and voices --------------------------------------------------


def test_split_record_prompt_has_ten_events(desk_corpus):
    for m in desk_corpus:
        rec = split_record(m)
        assert "\n" not in rec.prompt and "\n" not in rec.completion
        assert count_events(rec.prompt) == 10
        joined = join_record(rec.prompt, rec.completion)
        assert joined.voices[0] == m.voices[0]


def test_jsonl_round_trip(tmp_path, desk_corpus):
    recs = make_finetune_records(desk_corpus)
    p = write_jsonl(recs, tmp_path / "ft.jsonl")
    assert read_jsonl(p) == recs
    (tmp_path / "bad.jsonl").write_text('{"prompt": "x"}\n')
    with pytest.raises(ValueError):
        read_jsonl(tmp_path / "bad.jsonl")


def test_short_melodies_skipped(caplog):
    short = VoicedMelody([[NoteEvent(60, F(1, 4))] * 10])
    long = VoicedMelody([[NoteEvent(60, F(1, 4))] * 11])
    with caplog.at_level(logging.WARNING):
        recs = make_finetune_records([short, long])
    assert len(recs) == 1 and "skipped 1" in caplog.text


def test_extract_voices_orders_and_pads():
    a = [NoteEvent(60, F(1, 4))] * 3
    b = [NoteEvent(62, F(1, 4))] * 5
    c = [NoteEvent(64, F(1, 4))] * 4
    m = extract_voices(VoicedMelody([a, b, c, a]), 3)
    assert [v[0].pitch for v in m.voices] == [62, 64, 60]
    assert len({len(v) for v in m.voices}) == 1
    assert m.voices[2][-1].is_rest and m.voices[2][-1].duration == F(1, 4)
    with pytest.raises(InsufficientVoicesError):
        extract_voices(VoicedMelody([a, b]), 3)


def test_note_event_validation():
    with pytest.raises(ValueError):
        NoteEvent(128, F(1, 4))
    with pytest.raises(ValueError):
        NoteEvent(60, F(0))
    assert NoteEvent.rest(F(1, 2)).pitch == 0
