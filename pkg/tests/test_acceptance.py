"""End-to-end acceptance checks, one test per criterion.

Each test prints a ``criterion N: PASS|FAIL`` line straight to the terminal,
so ``pytest tests/test_acceptance.py`` (or running this file) gives a
nine-line summary alongside the usual pytest report.
"""

import io
import json
import time
from contextlib import contextmanager
from fractions import Fraction

import mido
import numpy as np
import pytest

from quartet import evalstats as ev
from quartet import numcore as nc
from quartet.corpus import desk_corpus_files, load_corpus, plan_path, synthetic_corpus
from quartet.models import DualStreamConfig, DualStreamTransformer, init_params, param_count
from quartet.notation import (
    FinetuneRecord,
    VoicedMelody,
    count_events,
    decode_abc,
    encode_abc,
    make_finetune_records,
    parse_midi,
)
from quartet.pipelines.generate import GenerationRequest, Resources, generate
from quartet.pipelines.llm import LlmJob, MockLlmClient, TokenLimitError
from quartet.pipelines.sampling import sample_tokens
from quartet.pipelines.training import TrainConfig, dual_rows, evaluate_loss, train
from quartet.rhythm import expand_plan, load_plan
from quartet.special import chi2_sf
from quartet.tokenizer import PitchVocab, build_duration_vocab

from gradcheck import check
from test_attention import _block_case
from test_numcore import OPS
from test_rhythm import GOLDEN


@contextmanager
def criterion(n, label, capsys):
    start = time.perf_counter()
    try:
        yield
    except BaseException:
        with capsys.disabled():
            print(f"\ncriterion {n}: FAIL  {label} ({time.perf_counter() - start:.1f}s)")
        raise
    with capsys.disabled():
        print(f"\ncriterion {n}: PASS  {label} ({time.perf_counter() - start:.1f}s)")


def test_criterion_1_gradients(capsys):
    with criterion(1, "finite-difference gradients <= 1e-4 over 10 seeds", capsys):
        start = time.perf_counter()
        worst = 0.0
        with nc.precision("float64"):
            for seed in range(10):
                for name in sorted(OPS):
                    rng = np.random.default_rng(seed)
                    tensors, fn = OPS[name](rng)
                    w = {}

                    def build():
                        out = fn(*tensors)
                        if out.size == 1:
                            return out
                        if "w" not in w:
                            w["w"] = np.random.default_rng(100 + seed).standard_normal(out.shape)
                        return nc.sum_all(nc.mul(out, w["w"]))

                    worst = max(worst, check(build, tensors, rng))
                for kind in ("encoder", "cross", "decoder"):
                    rng, blk, fn, inputs = _block_case(kind, seed)
                    wb = np.random.default_rng(seed + 50).standard_normal((2, 5, 8))
                    worst = max(worst, check(lambda: nc.sum_all(nc.mul(fn(), wb)),
                                             inputs + list(blk.params().values()), rng, limit=6))
        assert worst <= 1e-4, worst
        assert time.perf_counter() - start < 120


def _downstream_change(model, p, d, t, rng):
    pl, dl = model(p, d)
    p2, d2 = p.copy(), d.copy()
    n = p.shape[1] - t - 1
    p2[0, t + 1:] = (p2[0, t + 1:] + 1 + rng.integers(0, 100, n)) % 126
    d2[0, t + 1:] = (d2[0, t + 1:] + 1 + rng.integers(0, 3, n)) % model.cfg.duration_vocab
    ql, el = model(p2, d2)
    return max(np.abs(ql.data[0, :t + 1] - pl.data[0, :t + 1]).max(),
               np.abs(el.data[0, :t + 1] - dl.data[0, :t + 1]).max())


def test_criterion_2_causality(capsys):
    with criterion(2, "causal-strict invariance <= 1e-12 at all t; unmasked mode leaks", capsys):
        rng = np.random.default_rng(0)
        with nc.precision("float64"):
            kw = dict(d_model=16, heads=2, depth=2, duration_vocab=5, dropout=0.0)
            strict = DualStreamTransformer(DualStreamConfig(strict_causal=True, **kw), seed=1)
            loose = DualStreamTransformer(DualStreamConfig(strict_causal=False, **kw), seed=1)
            p = rng.integers(0, 126, (1, 150))
            d = rng.integers(0, 5, (1, 150))
            worst = max(_downstream_change(strict, p, d, t, rng) for t in range(149))
            assert worst <= 1e-12, worst
            leaks = [_downstream_change(loose, p, d, t, rng) for t in (0, 49, 100, 148)]
            assert min(leaks) > 1e-6, leaks


def test_criterion_3_parameter_count(capsys):
    with criterion(3, "d256/8 heads/depth 2 parameter count within 3.5M +-10%", capsys):
        cfg = DualStreamConfig(d_model=256, heads=8, depth=2, pitch_vocab=126, duration_vocab=833)
        n = param_count(cfg)
        registry = sum(t.size for t in init_params(cfg, 0).params().values())
        assert n == registry
        assert 3.15e6 <= n <= 3.85e6, n


def test_criterion_4_overfit(capsys):
    with criterion(4, "two-melody overfit: loss < 0.1, greedy reproduction >= 95%", capsys):
        start = time.perf_counter()
        corpus = load_corpus()
        pv = PitchVocab()
        dv = build_duration_vocab(corpus)
        # melodies 0 and 1 each give one row and start on different pitch tokens
        pair = [corpus[0], corpus[1]]
        P, D = dual_rows(pair, pv, dv)
        assert P.shape == (2, 150) and P[0, 0] != P[1, 0]
        model = DualStreamTransformer(DualStreamConfig(duration_vocab=len(dv), dropout=0.0, strict_causal=True), seed=0)
        train(model, pair, TrainConfig(epochs=400, lr=1e-3, train_fraction=1.0, seed=0), pv, dv)
        lo = evaluate_loss(model, P, D)
        assert lo < 0.1, lo
        hits = 0
        for r in range(2):
            gp, gd = sample_tokens(model, [P[r, 0]], [D[r, 0]], 150, temperature=0.0)
            hits += int((gp == P[r]).sum() + (gd == D[r]).sum())
        rate = hits / (2 * 2 * 150)
        assert rate >= 0.95, rate
        assert time.perf_counter() - start < 600


def test_criterion_5_rhythm_golden(capsys):
    with criterion(5, "plan expansion matches the reference voice strings exactly", capsys):
        totals = {"melody1": Fraction(9, 2), "melody2": Fraction(2), "melody3": Fraction(7, 2), "fig1": Fraction(2)}
        for name, (seqs, total) in GOLDEN.items():
            got = expand_plan(load_plan(plan_path(name)))
            assert got == seqs, name
            assert {sum(v) for v in got} == {totals[name]} and total == totals[name]


def test_criterion_6_codec(capsys):
    with criterion(6, "ABC round-trip, MIDI note counts vs mido, ABC <= MusicXML/10", capsys):
        music21 = pytest.importorskip("music21")
        from music21.musicxml.m21ToXml import GeneralObjectExporter

        small = 0
        files = desk_corpus_files()
        assert len(files) == 40
        for f in files:
            data = f.read_bytes()
            m = parse_midi(data)
            assert decode_abc(encode_abc(m)).same_events(m), f.name
            mf = mido.MidiFile(file=io.BytesIO(data))
            ref = sum(1 for tr in mf.tracks for msg in tr if msg.type == "note_on" and msg.velocity > 0)
            assert sum(m.note_counts()) == ref, f.name
            xml = GeneralObjectExporter(music21.converter.parse(str(f))).parse()
            small += len(encode_abc(m).encode()) * 10 <= len(xml)
        assert small >= 0.9 * len(files), small


def test_criterion_7_finetune(capsys):
    with criterion(7, "400 ten-note prompts, mock completions keep the prefix, limit enforced", capsys):
        corpus = synthetic_corpus(400, seed=0)
        records = make_finetune_records(corpus)
        assert len(records) == 400
        assert all(count_events(r.prompt) == 10 for r in records)
        jsonl = LlmJob(records).jsonl()
        assert all(set(json.loads(x)) == {"prompt", "completion"} for x in jsonl.splitlines())
        client = MockLlmClient()
        client.finetune(LlmJob(records))
        res = Resources(llm=client)
        for m in corpus:
            out = generate(GenerationRequest(4, prompt=m, temperature=0.0), res).melody
            assert isinstance(out, VoicedMelody)
            assert out.voices[0][:10] == m.voices[0][:10]
            decode_abc(encode_abc(out))
        long_job = LlmJob([FinetuneRecord("x" * 4004, "y")] + records[:3])
        assert long_job.over_limit() == [0]
        with pytest.raises(TokenLimitError):
            client.finetune(long_job)


def test_criterion_8_statistics(capsys):
    with criterion(8, "statistics hand cases, audit and simulations", capsys):
        start = time.perf_counter()
        fr = ev.friedman([[1, 2, 3], [1, 2, 3]])
        assert fr.statistic == pytest.approx(4) and fr.effect_size == pytest.approx(1)
        assert ev.cochran_q([[0, 0, 1], [0, 0, 1], [0, 1, 1]]).statistic == pytest.approx(28 / 6)
        assert chi2_sf(3.841, 1) == pytest.approx(0.05, abs=1e-3)
        assert ev.wilcoxon_signed_rank([1, 2, 3], alternative="greater").p_value == pytest.approx(1 / 8)
        assert max(ev.audit_reference_table().values()) <= 0.02
        planted = ev.study_report(ev.synthetic_table(108, seed=11, effect=(0, 0, 1.0, 0)))
        assert planted["friedman"]["p_value"] < 0.01
        spurious = sum(bool(ev.study_report(ev.synthetic_table(108, seed=s), "holm")["significant_pairs"])
                       for s in range(100))
        assert spurious <= 10, spurious
        assert time.perf_counter() - start < 180


def _cli_tree(root, monkeypatch):
    from quartet.cli import main

    root.mkdir()
    monkeypatch.chdir(root)
    small = ["--d-model", "16", "--seq2seq-d-model", "16", "--heads", "2", "--depth", "1"]
    cmds = [
        ["ingest", "--out", "ing"],
        ["train", *small, "--epochs", "1", "--lr", "1e-3", "--out", "dual"],
        ["train", "--model", "seq2seq", *small, "--epochs", "1", "--max-steps", "2", "--out", "s2s"],
        ["generate", "--method", "1", "--checkpoint", "dual/dual.ckpt", "--length", "6", "--seed", "2", "--out", "g"],
        ["generate", "--method", "2", "--checkpoint", "s2s/s2s.ckpt", "--seed", "2", "--out", "g"],
        ["generate", "--method", "3", "--checkpoint", "s2s/s2s.ckpt", "--plan", "melody3", "--seed", "2",
         "--name", "m3", "--out", "g"],
        ["finetune", "--synthetic", "30", "--out", "ft"],
        ["generate", "--method", "4", "--prompt", str(desk_corpus_files()[2]), "--records", "ft/finetune.jsonl",
         "--name", "m4", "--out", "g"],
        ["transcode", "g/m3.abc", "g/m3_copy.mid"],
        ["stats", "--respondents", "40", "--holm", "--out", "st"],
    ]
    for c in cmds:
        assert main(c) == 0, c
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def test_criterion_9_determinism(capsys, tmp_path, monkeypatch):
    with criterion(9, "every CLI command is byte-identical on repeat", capsys):
        monkeypatch.setenv("SOURCE_DATE_EPOCH", "1700000000")
        a = _cli_tree(tmp_path / "a", monkeypatch)
        b = _cli_tree(tmp_path / "b", monkeypatch)
        assert a.keys() == b.keys()
        kinds = {k.rsplit(".", 1)[-1] for k in a}
        assert {"mid", "abc", "json"} <= kinds
        diff = [k for k in a if a[k] != b[k]]
        assert not diff, diff


if __name__ == "__main__":
    import sys

    sys.exit(pytest.main([__file__, "-q"]))
