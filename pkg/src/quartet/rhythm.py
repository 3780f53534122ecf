"""Permutation rhythm plans and a chat-log sonification duration source.

A plan labels groups of durations with letters, optionally relabels strings
of letters with macro letters, and lists one label string per voice::

    group A = 3/8 1/4 1/8
    macro C = A B A
    voice 1 = A B C C A B
"""

from __future__ import annotations

import csv
import itertools
import json
from bisect import bisect_right
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Sequence


class PlanError(ValueError):
    pass


class ResolutionError(PlanError):
    pass


class ValidationError(PlanError):
    pass


@dataclass(frozen=True)
class RhythmGroup:
    label: str
    durations: tuple[Fraction, ...]

    def __post_init__(self):
        if not self.durations:
            raise PlanError(f"group {self.label} has no durations")
        if any(d <= 0 for d in self.durations):
            raise PlanError(f"group {self.label} has a non-positive duration")


@dataclass
class RhythmPlan:
    groups: dict[str, RhythmGroup]
    voices: list[list[str]]
    macros: dict[str, list[str]] = field(default_factory=dict)
    name: str = ""


def _labels(s: str | Sequence[str]) -> list[str]:
    return s.split() if isinstance(s, str) else list(s)


def parse_plan(text: str, name: str = "") -> RhythmPlan:
    groups: dict[str, RhythmGroup] = {}
    macros: dict[str, list[str]] = {}
    voices: dict[int, list[str]] = {}
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        lhs, eq, rhs = line.partition("=")
        parts = lhs.split()
        if not eq or len(parts) != 2:
            raise PlanError(f"line {n}: expected '<group|macro|voice> NAME = ...', got {raw!r}")
        kind, key = parts
        try:
            if kind == "group":
                groups[key] = RhythmGroup(key, tuple(Fraction(tok) for tok in rhs.split()))
            elif kind == "macro":
                macros[key] = rhs.split()
            elif kind == "voice":
                voices[int(key)] = rhs.split()
            else:
                raise PlanError(f"unknown directive {kind!r}")
        except (ValueError, ZeroDivisionError) as exc:
            raise PlanError(f"line {n}: {exc}") from None
    clash = set(groups) & set(macros)
    if clash:
        raise PlanError(f"labels defined both as group and macro: {sorted(clash)}")
    return RhythmPlan(groups, [voices[k] for k in sorted(voices)], macros, name)


def load_plan(path) -> RhythmPlan:
    path = Path(path)
    return parse_plan(path.read_text(encoding="utf-8"), path.stem)


def format_plan(plan: RhythmPlan) -> str:
    out = [f"group {g.label} = " + " ".join(str(d) for d in g.durations) for g in plan.groups.values()]
    out += [f"macro {k} = " + " ".join(v) for k, v in plan.macros.items()]
    out += [f"voice {i} = " + " ".join(v) for i, v in enumerate(plan.voices, 1)]
    return "\n".join(out) + "\n"


def expand_labels(labels: Sequence[str], macros: dict[str, list[str]]) -> list[str]:
    """Rewrite macro letters down to base letters (macros may nest)."""
    out: list[str] = []

    def walk(label, trail):
        if label in macros:
            if label in trail:
                raise ResolutionError(f"macro cycle through {' -> '.join(trail + (label,))}")
            for sub in macros[label]:
                walk(sub, trail + (label,))
        else:
            out.append(label)

    for lab in labels:
        walk(lab, ())
    return out


def expand_plan(plan: RhythmPlan) -> list[list[Fraction]]:
    """Per-voice duration sequences; all voices must have the same total."""
    result = []
    for vi, voice in enumerate(plan.voices, 1):
        seq: list[Fraction] = []
        for lab in expand_labels(voice, plan.macros):
            if lab not in plan.groups:
                raise ResolutionError(f"voice {vi}: undefined label {lab!r}")
            seq.extend(plan.groups[lab].durations)
        result.append(seq)
    totals = [sum(v, Fraction(0)) for v in result]
    if len(set(totals)) > 1:
        raise ValidationError("voice totals differ: " + ", ".join(f"voice {i}={t}" for i, t in enumerate(totals, 1)))
    return result


@dataclass
class PlanReport:
    ok: bool
    totals: dict[int, Fraction | None]
    label_counts: dict[int, dict[str, int]]
    problems: list[str]

    def to_dict(self):
        return {
            "ok": self.ok,
            "totals": {k: (str(v) if v is not None else None) for k, v in self.totals.items()},
            "label_counts": self.label_counts,
            "problems": self.problems,
        }


def validate_plan(plan: RhythmPlan) -> PlanReport:
    problems: list[str] = []
    totals: dict[int, Fraction | None] = {}
    counts: dict[int, dict[str, int]] = {}
    if not plan.voices:
        problems.append("plan has no voices")
    for name, body in plan.macros.items():
        if not body:
            problems.append(f"macro {name} is empty")
    for vi, voice in enumerate(plan.voices, 1):
        if not voice:
            problems.append(f"voice {vi} is empty")
            totals[vi] = None
            continue
        try:
            labels = expand_labels(voice, plan.macros)
        except ResolutionError as exc:
            problems.append(f"voice {vi}: {exc}")
            totals[vi] = None
            continue
        missing = sorted({lab for lab in labels if lab not in plan.groups})
        if missing:
            problems.append(f"voice {vi}: undefined label(s) {', '.join(missing)}")
            totals[vi] = None
            continue
        counts[vi] = {lab: labels.count(lab) for lab in sorted(set(labels))}
        totals[vi] = sum((d for lab in labels for d in plan.groups[lab].durations), Fraction(0))
    known = {t for t in totals.values() if t is not None}
    if len(known) > 1:
        problems.append("voice totals differ: " + ", ".join(f"voice {k}={v}" for k, v in totals.items()))
    return PlanReport(not problems, totals, counts, problems)


def permute_groups(labels: str | Sequence[str], kind: str = "rotation") -> list[str]:
    seq = _labels(labels)
    if not seq:
        raise ValueError("empty label string")
    if kind == "rotation":
        out = [seq[i:] + seq[:i] for i in range(len(seq))]
    elif kind == "reversal":
        out = [seq[::-1]]
    elif kind == "all":
        out = sorted(set(itertools.permutations(seq)))
    else:
        raise ValueError(f"unknown permutation kind {kind!r}")
    return [" ".join(p) for p in out]


# --------------------------------------------------------------------------
# chat sonification


@dataclass(frozen=True)
class Utterance:
    timestamp: float
    participant: str
    text: str


@dataclass
class ChatLog:
    utterances: list[Utterance]

    def __post_init__(self):
        for a, b in zip(self.utterances, self.utterances[1:]):
            if b.timestamp < a.timestamp:
                raise ValueError(f"timestamps decrease at {b.timestamp}")


def load_chat(path) -> ChatLog:
    path = Path(path)
    rows = []
    if path.suffix.lower() == ".csv":
        with path.open(newline="", encoding="utf-8") as fh:
            rows = list(csv.DictReader(fh))
    else:
        with path.open(encoding="utf-8") as fh:
            rows = [json.loads(ln) for ln in fh if ln.strip()]
    return ChatLog([Utterance(float(r["timestamp"]), str(r["participant"]), str(r["text"])) for r in rows])


@dataclass(frozen=True)
class SonificationConfig:
    """Text length -> note duration buckets.

    ``length_thresholds[i]`` is the exclusive upper text length that maps to
    ``durations[i]``; longer texts get ``durations[-1]``.
    """

    length_thresholds: tuple[int, ...] = (10, 20, 40, 60, 100)
    durations: tuple[Fraction, ...] = (Fraction(1, 16), Fraction(1, 8), Fraction(1, 4),
                                       Fraction(3, 8), Fraction(1, 2), Fraction(1))
    silence_seconds: float = 30.0
    silence_duration: Fraction = Fraction(1, 4)
    max_voices: int = 3

    def __post_init__(self):
        if len(self.durations) != len(self.length_thresholds) + 1:
            raise ValueError("need exactly one more duration than thresholds")
        if list(self.length_thresholds) != sorted(self.length_thresholds):
            raise ValueError("thresholds must be ascending")
        if self.silence_duration not in self.durations:
            raise ValueError("silence duration must be one of the configured durations")

    def duration_for(self, text: str) -> Fraction:
        return self.durations[bisect_right(self.length_thresholds, len(text))]


@dataclass
class SonifiedVoice:
    participant: str
    # (duration, is_rest)
    events: list[tuple[Fraction, bool]]

    @property
    def durations(self):
        return [d for d, _ in self.events]


def sonify_chat(log: ChatLog, cfg: SonificationConfig | None = None) -> list[SonifiedVoice]:
    """One note per utterance in its speaker's voice; the other voices rest meanwhile.

    Gaps of at least ``silence_seconds`` insert a rest in every voice, so all
    voices span the same total duration.
    """
    cfg = cfg or SonificationConfig()
    if not log.utterances:
        raise ValueError("chat log is empty")
    slot: dict[str, int] = {}
    labels: list[str] = []
    for u in log.utterances:
        if u.participant not in slot:
            if len(labels) < cfg.max_voices:
                slot[u.participant] = len(labels)
                labels.append(u.participant)
            else:
                slot[u.participant] = cfg.max_voices - 1
                labels[-1] = labels[-1] + "+" if not labels[-1].endswith("+") else labels[-1]
    voices = [SonifiedVoice(lab, []) for lab in labels]
    prev_t = None
    for u in log.utterances:
        if prev_t is not None and u.timestamp - prev_t >= cfg.silence_seconds:
            for v in voices:
                v.events.append((cfg.silence_duration, True))
        d = cfg.duration_for(u.text)
        who = slot[u.participant]
        for i, v in enumerate(voices):
            v.events.append((d, i != who))
        prev_t = u.timestamp
    return voices
