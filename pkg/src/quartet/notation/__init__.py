"""MIDI and ABC conversion for voiced melodies."""

from quartet.notation.abc import (
    AbcDecodeError,
    AbcEncodeError,
    DollarAmbiguityError,
    count_events,
    decode_abc,
    encode_abc,
    flatten_newlines,
    unflatten_newlines,
)
from quartet.notation.core import (
    EmptyMelodyError,
    InsufficientVoicesError,
    NotationError,
    NoteEvent,
    VoicedMelody,
    extract_voices,
)
from quartet.notation.midi import MidiParseError, parse_midi, write_midi
from quartet.notation.records import (
    FinetuneRecord,
    join_record,
    make_finetune_records,
    read_jsonl,
    split_record,
    write_jsonl,
)

__all__ = [
    "AbcDecodeError",
    "AbcEncodeError",
    "DollarAmbiguityError",
    "EmptyMelodyError",
    "FinetuneRecord",
    "InsufficientVoicesError",
    "MidiParseError",
    "NotationError",
    "NoteEvent",
    "VoicedMelody",
    "count_events",
    "decode_abc",
    "encode_abc",
    "extract_voices",
    "flatten_newlines",
    "join_record",
    "make_finetune_records",
    "parse_midi",
    "read_jsonl",
    "split_record",
    "unflatten_newlines",
    "write_jsonl",
    "write_midi",
]
