"""The four melody generation methods behind one request type.

1. dual-stream transformer sampled end to end
2. chat-sonification rhythm, pitches from the seq2seq model
3. permutation-plan rhythm, pitches from the seq2seq model
4. ABC continuation of a 10-note prompt by a completion service
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np

from quartet import __version__
from quartet.checkpoint import Checkpoint, to_bytes
from quartet.notation import AbcDecodeError, NoteEvent, VoicedMelody, join_record, split_record
from quartet.notation.records import PROMPT_LEN
from quartet.pipelines.llm import LlmClient, estimate_tokens, TOKEN_LIMIT, TokenLimitError
from quartet.pipelines.sampling import sample, sample_pitches
from quartet.rhythm import ChatLog, RhythmPlan, SonificationConfig, expand_plan, sonify_chat
from quartet.tokenizer import VOICE_REGISTERS, WINDOW, DurationVocab, PitchVocab

log = logging.getLogger(__name__)

PITCH_CONDITIONS = ("durations", "fixed")


class GenerationError(RuntimeError):
    def __init__(self, message: str, raw: str | None = None):
        super().__init__(message)
        self.raw = raw


@dataclass
class GenerationRequest:
    method: int
    seed: int = 0
    temperature: float = 1.0
    length: int = WINDOW
    plan: RhythmPlan | None = None
    chat: ChatLog | None = None
    prompt: VoicedMelody | None = None
    # method 1 starting tokens, (pitch ids, duration ids)
    prefix: tuple[list[int], list[int]] | None = None
    # "fixed" feeds the seq2seq model a constant source so pitch choice ignores rhythm
    pitch_condition: str = "durations"
    retries: int = 3
    inputs: dict = field(default_factory=dict)  # name -> sha256 of the input files, for provenance

    def __post_init__(self):
        if self.method not in (1, 2, 3, 4):
            raise ValueError(f"method must be 1-4, got {self.method}")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if self.pitch_condition not in PITCH_CONDITIONS:
            raise ValueError(f"pitch_condition must be one of {PITCH_CONDITIONS}")
        need = {2: ("chat", self.chat), 3: ("plan", self.plan), 4: ("prompt", self.prompt)}.get(self.method)
        if need is not None and need[1] is None:
            raise ValueError(f"method {self.method} needs a {need[0]}")


@dataclass
class Resources:
    dual: Checkpoint | None = None
    seq2seq: Checkpoint | None = None
    llm: LlmClient | None = None
    pitch_vocab: PitchVocab | None = None
    sonification: SonificationConfig | None = None
    _models: dict = field(default_factory=dict, repr=False)

    def model(self, kind: str):
        if kind not in self._models:
            ck = self.dual if kind == "dual-stream" else self.seq2seq
            if ck is None:
                raise GenerationError(f"a {kind} checkpoint is required")
            self._models[kind] = ck.build_model()
        return self._models[kind]

    def dvocab(self, kind: str) -> DurationVocab:
        ck = self.dual if kind == "dual-stream" else self.seq2seq
        try:
            return DurationVocab(Fraction(s) for s in ck.vocab["durations"])
        except (KeyError, TypeError):
            raise GenerationError(f"{kind} checkpoint carries no duration vocabulary") from None


@dataclass
class GenerationResult:
    melody: VoicedMelody
    provenance: dict


def checkpoint_hash(ck: Checkpoint | None) -> str | None:
    return None if ck is None else hashlib.sha256(to_bytes(ck)).hexdigest()


def _method1(req: GenerationRequest, res: Resources) -> VoicedMelody:
    model = res.model("dual-stream")
    dv = res.dvocab("dual-stream")
    if req.prefix is not None:
        pp, pd = req.prefix
    else:
        pp, pd = [0], [dv.nearest(Fraction(1, 4))]
    return sample(model, pp, pd, req.length, req.temperature, req.seed, res.pitch_vocab, dv, title="method 1")


def _pitch_voices(voices: list[list[tuple[Fraction, bool]]], req: GenerationRequest, res: Resources,
                  title: str) -> VoicedMelody:
    """Attach seq2seq pitches to given rhythms; rests stay rests."""
    model = res.model("seq2seq")
    dv = res.dvocab("seq2seq")
    pv = res.pitch_vocab or PitchVocab()
    fixed_tok = dv.nearest(Fraction(1, 4))
    out = []
    for vi, events in enumerate(voices):
        rng = np.random.default_rng([req.seed, vi])
        notes = [d for d, rest in events if not rest]
        if not notes:
            out.append([NoteEvent(0, d, True) for d, _ in events])
            continue
        if req.pitch_condition == "fixed":
            # constant source of a length that depends only on the note count bucket
            n_src = -(-len(notes) // WINDOW) * WINDOW
            src = np.full(n_src, fixed_tok, dtype=np.int64)
        else:
            src = np.array([dv.nearest(d) for d in notes], dtype=np.int64)
        toks = sample_pitches(model, src, req.temperature, rng)[:len(notes)]
        ref = VOICE_REGISTERS[min(vi, len(VOICE_REGISTERS) - 1)]
        it = iter(toks)
        evs = []
        for d, rest in events:
            if rest:
                evs.append(NoteEvent(0, d, True))
            else:
                p = pv.decode(int(next(it)), ref)
                evs.append(NoteEvent(p, d))
                ref = p
        out.append(evs)
    return VoicedMelody(out, title=title)


def _method2(req: GenerationRequest, res: Resources) -> VoicedMelody:
    sv = sonify_chat(req.chat, res.sonification)
    return _pitch_voices([v.events for v in sv], req, res, "method 2")


def _method3(req: GenerationRequest, res: Resources) -> VoicedMelody:
    seqs = expand_plan(req.plan)
    return _pitch_voices([[(d, False) for d in s] for s in seqs], req, res, "method 3")


def _method4(req: GenerationRequest, res: Resources) -> tuple[VoicedMelody, dict]:
    if res.llm is None:
        raise GenerationError("method 4 needs a completion client")
    rec = split_record(req.prompt)
    if estimate_tokens(rec.prompt) > TOKEN_LIMIT:
        raise TokenLimitError("prompt exceeds the token limit")
    want = req.prompt.voices[0][:PROMPT_LEN]
    raw = None
    last_err = ""
    for attempt in range(req.retries):
        raw = res.llm.complete(rec.prompt, temperature=req.temperature, seed=req.seed + attempt)
        try:
            m = join_record(rec.prompt, raw)
        except AbcDecodeError as exc:
            last_err = str(exc)
            log.warning("completion attempt %d is not valid ABC: %s", attempt + 1, exc)
            continue
        if len(m.voices) == 1 and m.voices[0][:PROMPT_LEN] == want:
            m.title = "method 4"
            return m, {"prompt": rec.prompt, "attempts": attempt + 1}
        last_err = "decoded melody does not start with the prompt notes"
    raise GenerationError(f"completion failed validation after {req.retries} attempt(s): {last_err}", raw)


def generate(req: GenerationRequest, res: Resources) -> GenerationResult:
    extra: dict = {}
    if req.method == 1:
        m = _method1(req, res)
    elif req.method == 2:
        m = _method2(req, res)
    elif req.method == 3:
        m = _method3(req, res)
    else:
        m, extra = _method4(req, res)
    used = {1: {"dual-stream": res.dual}, 2: {"seq2seq": res.seq2seq}, 3: {"seq2seq": res.seq2seq}}.get(req.method, {})
    prov = {
        "method": req.method,
        "seed": req.seed,
        "temperature": req.temperature,
        "length": req.length,
        "pitch_condition": req.pitch_condition if req.method in (2, 3) else None,
        "inputs": dict(sorted(req.inputs.items())),
        "checkpoints": {k: checkpoint_hash(v) for k, v in used.items()},
        "voices": len(m.voices),
        "notes": m.note_counts(),
        "quartet_version": __version__,
        **extra,
    }
    return GenerationResult(m, prov)


def provenance_json(prov: dict) -> str:
    return json.dumps(prov, indent=2, sort_keys=True, default=str) + "\n"


def sha256_file(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()
