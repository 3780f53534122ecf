"""Prompt/completion records for fine-tuning a text model on ABC melodies."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

from quartet.notation.abc import (
    DEFAULT_UNIT,
    decode_abc,
    encode_header,
    encode_voice_body,
    flatten_newlines,
)
from quartet.notation.core import VoicedMelody

log = logging.getLogger(__name__)

PROMPT_LEN = 10


@dataclass(frozen=True)
class FinetuneRecord:
    prompt: str
    completion: str

    def to_json(self) -> str:
        return json.dumps({"prompt": self.prompt, "completion": self.completion}, ensure_ascii=False)


def split_record(m: VoicedMelody, prompt_len: int = PROMPT_LEN) -> FinetuneRecord:
    """First ``prompt_len`` events of the first voice as a headed prompt, the rest as completion."""
    voice = m.voices[0]
    header = encode_header(VoicedMelody([voice], title=m.title), DEFAULT_UNIT)
    prompt = header + "\n" + encode_voice_body(voice[:prompt_len]) + "\n"
    completion = encode_voice_body(voice[prompt_len:], start_index=prompt_len) + "\n"
    return FinetuneRecord(flatten_newlines(prompt), flatten_newlines(completion))


def make_finetune_records(corpus: Iterable[VoicedMelody], prompt_len: int = PROMPT_LEN) -> list[FinetuneRecord]:
    """One record per melody whose first voice is longer than ``prompt_len`` events."""
    records = []
    skipped = 0
    for m in corpus:
        if len(m.voices[0]) <= prompt_len:
            skipped += 1
            continue
        records.append(split_record(m, prompt_len))
    if skipped:
        log.warning("skipped %d melodies with <= %d events in the first voice", skipped, prompt_len)
    return records


def join_record(prompt: str, completion: str) -> VoicedMelody:
    """Decode a prompt and its continuation as one single-voice melody."""
    return decode_abc(prompt + completion)


def write_jsonl(records: Iterable[FinetuneRecord], path) -> Path:
    path = Path(path)
    with path.open("w", encoding="utf-8", newline="\n") as fh:
        for rec in records:
            fh.write(rec.to_json() + "\n")
    return path


def read_jsonl(path) -> list[FinetuneRecord]:
    out = []
    with Path(path).open(encoding="utf-8") as fh:
        for n, line in enumerate(fh, 1):
            if not line.strip():
                continue
            obj = json.loads(line)
            if set(obj) != {"prompt", "completion"}:
                raise ValueError(f"{path}:{n}: expected keys prompt/completion, got {sorted(obj)}")
            out.append(FinetuneRecord(obj["prompt"], obj["completion"]))
    return out
