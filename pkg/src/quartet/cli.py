"""``quartet`` command line: ingest, train, generate, transcode, finetune, stats."""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import io
import json
import logging
import os
import sys
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from quartet import __version__
from quartet import evalstats
from quartet.checkpoint import CheckpointError, from_model, load_checkpoint, to_bytes
from quartet.corpus import demo_chat_path, load_corpus, plan_path, synthetic_corpus
from quartet.models import DualStreamConfig, Seq2SeqConfig, init_params
from quartet.notation import (
    NotationError,
    decode_abc,
    encode_abc,
    make_finetune_records,
    parse_midi,
    read_jsonl,
    write_jsonl,
    write_midi,
)
from quartet.pipelines import (
    GenerationError,
    GenerationRequest,
    HttpLlmClient,
    LlmJob,
    MockLlmClient,
    Resources,
    TrainConfig,
    generate,
    llm_finetune,
    train,
)
from quartet.pipelines.llm import LlmError
from quartet.pipelines.training import TrainingError
from quartet.rhythm import PlanError, load_chat, load_plan
from quartet.tokenizer import DurationVocab, PitchVocab, TokenizerError, build_duration_vocab, make_batches

log = logging.getLogger("quartet")


@dataclass
class RunConfig:
    corpus: str | None = None
    plans: str | None = None
    chats: str | None = None
    out_dir: str = "out"
    dual_d_model: int = 256
    seq2seq_d_model: int = 128
    heads: int = 8
    depth: int = 2
    dropout: float = 0.1
    lr: float = 1e-4
    epochs: int = 10
    melodies_per_batch: int = 100
    train_fraction: float = 0.9
    rows_per_step: int = 16
    max_steps: int | None = None
    seed: int = 0
    strict_causal: bool = False
    segment_mask: bool = False

    @classmethod
    def load(cls, path) -> "RunConfig":
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ValueError(f"{path}: unknown config keys {unknown}")
        return cls(**data)


def _sha(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def _timestamp() -> str:
    epoch = os.environ.get("SOURCE_DATE_EPOCH")
    t = int(epoch) if epoch is not None else int(time.time())
    return time.strftime("%Y%m%dT%H%M%SZ", time.gmtime(t))


class Run:
    """Collects inputs and artifacts of one command and writes its provenance record."""

    def __init__(self, command: str, out_dir: Path, config: dict, seeds: dict):
        self.command = command
        self.out_dir = Path(out_dir)
        self.out_dir.mkdir(parents=True, exist_ok=True)
        self.config = config
        self.seeds = seeds
        self.inputs: dict[str, str] = {}
        self.artifacts: dict[str, str] = {}

    def input(self, path) -> bytes:
        data = Path(path).read_bytes()
        self.inputs[Path(path).name] = _sha(data)
        return data

    def write(self, name: str, data: bytes | str) -> Path:
        if isinstance(data, str):
            data = data.encode("utf-8")
        p = self.out_dir / name
        p.write_bytes(data)
        self.artifacts[name] = _sha(data)
        return p

    def finish(self, name: str = "provenance.json", extra: dict | None = None) -> Path:
        rec = {"command": self.command, "config": self.config, "seeds": self.seeds,
               "inputs": dict(sorted(self.inputs.items())), "artifacts": dict(sorted(self.artifacts.items())),
               "quartet_version": __version__, **(extra or {})}
        p = self.out_dir / name
        p.write_text(json.dumps(rec, indent=2, sort_keys=True, default=str) + "\n", encoding="utf-8")
        return p


def _config(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if getattr(args, "config", None) else RunConfig()
    overrides = {}
    for f in dataclasses.fields(RunConfig):
        v = getattr(args, f.name, None)
        if v is not None and v is not False:
            overrides[f.name] = v
    return dataclasses.replace(cfg, **overrides)


def _corpus(run: Run, directory):
    corpus = load_corpus(directory)
    if not corpus:
        raise ValueError(f"no .mid files in {directory}")
    src = Path(directory) if directory else None
    for m in corpus:
        f = (src / m.meta["source"]) if src else None
        if f is not None:
            run.input(f)
        else:
            run.inputs[m.meta["source"]] = "bundled"
    return corpus


def _vocab(run: Run, corpus, path):
    if path:
        run.input(path)
        return DurationVocab.load(path)
    return build_duration_vocab(corpus)


# --------------------------------------------------------------------------
# commands


def cmd_ingest(args) -> int:
    cfg = _config(args)
    run = Run("ingest", Path(cfg.out_dir), dataclasses.asdict(cfg), {})
    corpus = _corpus(run, cfg.corpus)
    dv = build_duration_vocab(corpus)
    pv = PitchVocab()
    run.write("durations.txt", "".join(f"{d}\n" for d in dv.durations))
    pitch, dur, sources = [], [], []
    dropped = truncated = 0
    for b in make_batches(corpus, pv, dv, cfg.melodies_per_batch):
        pitch.append(b.pitch)
        dur.append(b.duration)
        sources += [{"melody": corpus[mi].meta["source"], "window": w, "scale": s} for mi, w, s in b.sources]
        dropped += b.dropped_rows
        truncated += b.truncated_rows
    for name, arrs in (("pitch.npy", pitch), ("duration.npy", dur)):
        buf = io.BytesIO()
        np.save(buf, np.concatenate(arrs) if arrs else np.zeros((0, 150), np.int64))
        run.write(name, buf.getvalue())
    summary = {"melodies": len(corpus), "rows": len(sources), "dropped_rows": dropped,
               "truncated_rows": truncated, "duration_vocab": len(dv), "sources": sources}
    run.write("rows.json", json.dumps(summary, indent=2, sort_keys=True) + "\n")
    run.finish()
    print(f"ingested {len(corpus)} melodies -> {len(sources)} rows, {len(dv)} durations in {run.out_dir}")
    return 0


def cmd_train(args) -> int:
    cfg = _config(args)
    run = Run("train", Path(cfg.out_dir), dataclasses.asdict(cfg) | {"model": args.model}, {"seed": cfg.seed})
    corpus = _corpus(run, cfg.corpus)
    dv = _vocab(run, corpus, args.vocab)
    if args.model == "dual":
        mcfg = DualStreamConfig(cfg.dual_d_model, cfg.heads, cfg.depth, duration_vocab=len(dv), dropout=cfg.dropout,
                                strict_causal=cfg.strict_causal, segment_mask=cfg.segment_mask)
    else:
        mcfg = Seq2SeqConfig(cfg.seq2seq_d_model, cfg.heads, cfg.depth, source_vocab=len(dv), dropout=cfg.dropout)
    model = init_params(mcfg, cfg.seed)
    tcfg = TrainConfig(cfg.epochs, cfg.melodies_per_batch, cfg.train_fraction, cfg.lr, cfg.seed,
                       cfg.rows_per_step, cfg.max_steps)
    vocab = {"durations": dv.to_list()}
    ck_dir = run.out_dir / "checkpoints"
    result = train(model, corpus, tcfg, PitchVocab(), dv, ck_dir, vocab)
    for p in sorted(ck_dir.glob("*.ckpt")):
        run.artifacts[f"checkpoints/{p.name}"] = _sha(p.read_bytes())
    name = "dual.ckpt" if args.model == "dual" else "s2s.ckpt"
    run.write(name, to_bytes(from_model(model, vocab, {"epoch": len(result.metrics), "steps": result.steps,
                                                       "seed": cfg.seed})))
    run.write("metrics.jsonl", result.metrics_jsonl())
    run.finish(extra={"train_melodies": [corpus[i].meta["source"] for i in result.train_indices],
                      "test_melodies": [corpus[i].meta["source"] for i in result.test_indices]})
    last = result.metrics[-1] if result.metrics else {}
    print(f"trained {args.model} for {result.steps} step(s); last epoch {last or 'n/a'}; checkpoint {run.out_dir / name}")
    return 0


def _load_melody(path):
    p = Path(path)
    if p.suffix.lower() in (".mid", ".midi"):
        return parse_midi(p.read_bytes())
    return decode_abc(p.read_text(encoding="utf-8"))


def cmd_generate(args) -> int:
    run = Run("generate", Path(args.out), {k: v for k, v in vars(args).items()
                                           if k not in ("func", "out")}, {"seed": args.seed})
    res = Resources()
    req_kw = {}
    if args.checkpoint:
        run.input(args.checkpoint)
        kind = "dual-stream" if args.method == 1 else "seq2seq"
        ck = load_checkpoint(args.checkpoint, expect_kind=kind if args.method in (1, 2, 3) else None)
        if kind == "dual-stream":
            res.dual = ck
        else:
            res.seq2seq = ck
    if args.method == 3:
        if not args.plan:
            raise ValueError("method 3 needs --plan")
        p = Path(args.plan)
        if not p.exists():
            p = plan_path(p.stem)
        run.input(p)
        req_kw["plan"] = load_plan(p)
    if args.method == 2:
        p = Path(args.chat) if args.chat else demo_chat_path()
        run.input(p)
        req_kw["chat"] = load_chat(p)
    if args.method == 4:
        if not args.prompt:
            raise ValueError("method 4 needs --prompt (a .mid or .abc melody)")
        run.input(args.prompt)
        req_kw["prompt"] = _load_melody(args.prompt)
        if args.client == "http":
            res.llm = HttpLlmClient()
        else:
            if not args.records:
                raise ValueError("the mock client needs --records (fine-tune JSONL)")
            run.input(args.records)
            res.llm = MockLlmClient()
            llm_finetune(LlmJob(read_jsonl(args.records)), res.llm)
    req = GenerationRequest(args.method, args.seed, args.temperature, args.length,
                            pitch_condition=args.pitch_condition, inputs=dict(run.inputs), **req_kw)
    result = generate(req, res)
    stem = args.name or f"{args.method}_{args.seed}_{_timestamp()}"
    m = result.melody
    run.write(f"{stem}.mid", write_midi(m))
    run.write(f"{stem}.abc", encode_abc(m))
    run.finish(f"{stem}.json", {"generation": result.provenance})
    print(f"method {args.method}: wrote {run.out_dir / stem}.mid/.abc/.json")
    return 0


def cmd_transcode(args) -> int:
    src, dst = Path(args.input), Path(args.output)
    is_midi = src.suffix.lower() in (".mid", ".midi")
    run = Run("transcode", dst.parent if str(dst.parent) else Path("."), {"input": src.name, "output": dst.name}, {})
    run.input(src)
    if is_midi:
        m = parse_midi(src.read_bytes())
        data = encode_abc(m)
    else:
        m = decode_abc(src.read_text(encoding="utf-8"))
        data = write_midi(m)
    run.write(dst.name, data)
    run.finish(f"{dst.stem}.provenance.json")
    print(f"{src} -> {dst}")
    return 0


def cmd_finetune(args) -> int:
    run = Run("finetune", Path(args.out), {k: v for k, v in vars(args).items() if k not in ("func", "out")},
              {"seed": args.seed})
    if args.synthetic:
        corpus = synthetic_corpus(args.synthetic, args.seed)
    else:
        corpus = _corpus(run, args.corpus)
    if args.limit is not None:
        rng = np.random.default_rng(args.seed)
        if args.limit < len(corpus):
            keep = sorted(rng.choice(len(corpus), size=args.limit, replace=False).tolist())
            corpus = [corpus[i] for i in keep]
    records = make_finetune_records(corpus)
    job = LlmJob(records, epochs=args.epochs, model=args.base_model, token_limit=args.token_limit)
    over = job.over_limit()
    if over:
        log.warning("rejecting %d record(s) over the %d-token limit", len(over), job.token_limit)
        job = LlmJob([r for i, r in enumerate(records) if i not in set(over)], args.epochs, args.base_model,
                     args.token_limit)
    path = write_jsonl(job.records, run.out_dir / "finetune.jsonl")
    run.artifacts[path.name] = _sha(path.read_bytes())
    client = HttpLlmClient() if args.client == "http" else MockLlmClient()
    handle = llm_finetune(job, client)
    run.finish(extra={"records": len(job.records), "rejected": len(over), "job": dataclasses.asdict(handle)})
    print(f"{len(job.records)} records ({len(over)} rejected) -> {path}; job {handle.job_id}")
    return 0


def cmd_stats(args) -> int:
    run = Run("stats", Path(args.out), {k: v for k, v in vars(args).items() if k not in ("func", "out")},
              {"seed": args.seed})
    if args.scores:
        run.input(args.scores)
        if args.mapping:
            run.input(args.mapping)
        table = evalstats.load_scores(args.scores, args.mapping)
    else:
        table = evalstats.synthetic_table(args.respondents, args.seed)
        evalstats.write_scores(table, run.out_dir / "scores.csv")
        run.artifacts["scores.csv"] = _sha((run.out_dir / "scores.csv").read_bytes())
    rep = evalstats.study_report(table, "holm" if args.holm else "none")
    jp, tp = evalstats.write_report(rep, run.out_dir)
    for p in (jp, tp):
        run.artifacts[p.name] = _sha(p.read_bytes())
    run.finish()
    print(evalstats.report_text(rep), end="")
    return 0


# --------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="quartet", description=__doc__)
    ap.add_argument("--version", action="version", version=f"quartet {__version__}")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON run configuration")
        p.add_argument("--corpus", help="directory of .mid files (default: bundled desk corpus)")
        p.add_argument("--out", dest="out_dir", help="output directory")
        p.add_argument("--seed", type=int)
        p.add_argument("--melodies-per-batch", dest="melodies_per_batch", type=int)

    p = sub.add_parser("ingest", help="build vocabularies and the row cache")
    common(p)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("train", help="train a dual-stream or seq2seq model")
    common(p)
    p.add_argument("--model", choices=("dual", "seq2seq"), default="dual")
    p.add_argument("--vocab", help="durations.txt from ingest")
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--dropout", type=float)
    p.add_argument("--d-model", dest="dual_d_model", type=int)
    p.add_argument("--seq2seq-d-model", dest="seq2seq_d_model", type=int)
    p.add_argument("--heads", type=int)
    p.add_argument("--depth", type=int)
    p.add_argument("--train-fraction", dest="train_fraction", type=float)
    p.add_argument("--rows-per-step", dest="rows_per_step", type=int)
    p.add_argument("--max-steps", dest="max_steps", type=int)
    p.add_argument("--strict-causal", dest="strict_causal", action="store_true")
    p.add_argument("--segment-mask", dest="segment_mask", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("generate", help="generate a melody with method 1-4")
    p.add_argument("--method", type=int, choices=(1, 2, 3, 4), required=True)
    p.add_argument("--checkpoint", help="dual-stream (method 1) or seq2seq (methods 2, 3) checkpoint")
    p.add_argument("--plan", help="rhythm plan file or bundled name (method 3)")
    p.add_argument("--chat", help="chat log .jsonl/.csv (method 2, default: bundled demo)")
    p.add_argument("--prompt", help="melody whose first 10 notes seed method 4")
    p.add_argument("--records", help="fine-tune JSONL memorised by the mock client (method 4)")
    p.add_argument("--client", choices=("mock", "http"), default="mock")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--temperature", type=float, default=1.0)
    p.add_argument("--length", type=int, default=50)
    p.add_argument("--pitch-condition", dest="pitch_condition", choices=("durations", "fixed"), default="durations")
    p.add_argument("--name", help="output stem (default <method>_<seed>_<timestamp>)")
    p.add_argument("--out", default="out")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("transcode", help="convert MIDI <-> ABC by file suffix")
    p.add_argument("input")
    p.add_argument("output")
    p.set_defaults(func=cmd_transcode)

    p = sub.add_parser("finetune", help="build prompt/completion JSONL and submit a fine-tune job")
    p.add_argument("--corpus")
    p.add_argument("--synthetic", type=int, help="use N seeded synthetic melodies instead of a corpus")
    p.add_argument("--limit", type=int, default=400, help="random subset size")
    p.add_argument("--epochs", type=int, default=5)
    p.add_argument("--base-model", dest="base_model", default="curie")
    p.add_argument("--token-limit", dest="token_limit", type=int, default=1000)
    p.add_argument("--client", choices=("mock", "http"), default="mock")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="out")
    p.set_defaults(func=cmd_finetune)

    p = sub.add_parser("stats", help="run the listener-study statistics on a score CSV")
    p.add_argument("--scores", help="long-format score CSV (default: a seeded synthetic table)")
    p.add_argument("--mapping", help="melody_id,method CSV")
    p.add_argument("--holm", action="store_true", help="report Holm-corrected pairwise p-values")
    p.add_argument("--respondents", type=int, default=108)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="out")
    p.set_defaults(func=cmd_stats)
    return ap


_EXPECTED = (ValueError, RuntimeError, FileNotFoundError, CheckpointError, NotationError, PlanError,
             TokenizerError, TrainingError, GenerationError, LlmError)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except _EXPECTED as exc:
        print(f"quartet {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
