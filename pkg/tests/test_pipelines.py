"""Pipeline integration: synthetic corpora, training commands, reports,
search, decoding, and determinism across reruns and thread counts."""

import json
import os

import numpy as np
import pytest

from awekit import pipelines, recognition, synth
from awekit.config import ConfigError, ExperimentConfig


@pytest.fixture(scope="module")
def corpus_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("corpus")
    spec = synth.SyntheticSpec(vocab_size=8, num_train=40, num_eval=16, num_speakers=4,
                               noise=0.2, speaker_scale=0.2, words_per_utterance=(1, 2),
                               base_duration=(12, 20))
    corpus = synth.generate_corpus(spec, seed=5)
    return synth.write_corpus(corpus, out)


def small_cfg(paths, extra=None):
    overrides = {
        ("data", "train"): paths["train"],
        ("data", "train_align"): paths["train_align"],
        ("data", "dev"): paths["dev"],
        ("data", "dev_align"): paths["dev_align"],
        ("data", "lexicon"): paths["lexicon"],
        ("data", "feature_table"): paths["feature_table"],
        ("encoder", "layers"): "1",
        ("encoder", "hidden"): "16",
        ("encoder", "embed_dim"): "12",
        ("written", "hidden"): "16",
        ("written", "symbol_embed_dim"): "8",
        ("training", "epochs"): "1",
        ("training", "batch_size"): "8",
        ("run", "seed"): "9",
    }
    overrides.update(extra or {})
    return ExperimentConfig.load(None, overrides=overrides)


class TestSynth:
    def test_instances_identical_without_noise_or_jitter(self):
        spec = synth.SyntheticSpec(vocab_size=3, noise=0.0, duration_jitter=0.0,
                                   num_speakers=1, num_train=20, num_eval=2)
        corpus = synth.generate_corpus(spec, seed=1)
        by_word = {}
        for fm, al in zip(corpus.train, corpus.train_alignments):
            (s, e, w) = al.entries[0]
            by_word.setdefault(w, []).append(fm.frames[s:e])
        for w, insts in by_word.items():
            for inst in insts[1:]:
                np.testing.assert_array_equal(inst, insts[0])

    def test_same_seed_bit_identical_files(self, tmp_path):
        spec = synth.SyntheticSpec(vocab_size=4, num_train=10, num_eval=4)
        a = synth.write_corpus(synth.generate_corpus(spec, seed=3), tmp_path / "a")
        b = synth.write_corpus(synth.generate_corpus(spec, seed=3), tmp_path / "b")
        for key in a:
            assert open(a[key], "rb").read() == open(b[key], "rb").read()

    def test_alignments_exact_by_construction(self, corpus_dir):
        import awekit.corpus as cp

        fms = cp.load_feature_archive(corpus_dir["train"])
        als = cp.load_alignments(corpus_dir["train_align"])
        for fm in fms:
            al = als[fm.utterance_id]
            assert al.entries[0][0] == 0
            assert al.entries[-1][1] == fm.num_frames


class TestConfig:
    def test_unknown_key_rejected(self, tmp_path):
        path = tmp_path / "bad.ini"
        path.write_text("[encoder]\nbogus = 1\n")
        with pytest.raises(ConfigError):
            ExperimentConfig.load(path)

    def test_seed_mandatory(self):
        cfg = ExperimentConfig.load(None)
        with pytest.raises(ConfigError):
            cfg.seed

    def test_preset_then_file_then_override(self, tmp_path):
        path = tmp_path / "exp.ini"
        path.write_text("[objective]\nmargin = 0.7\n")
        cfg = ExperimentConfig.load(path, preset="ch5-multiview",
                                    overrides={("objective", "k"): "3"})
        assert cfg.getfloat("objective", "margin") == 0.7  # file beats preset
        assert cfg.getint("objective", "k") == 3  # override beats both
        assert cfg.getbool("objective", "sqrt_variant") is True  # preset beats default

    def test_missing_path_reported(self, corpus_dir):
        cfg = small_cfg(corpus_dir, {("data", "train"): "/nonexistent/x.cadf"})
        with pytest.raises(ConfigError):
            cfg.data_path("train")


class TestTrainEmbed:
    @pytest.mark.parametrize("kind,extra", [
        ("multiview", {}),
        ("multiview", {("objective", "contextual"): "true", ("objective", "strategy"): "semi-hard",
                       ("objective", "terms"): "0,1,2"}),
        ("multiview", {("objective", "contextual"): "true", ("objective", "spans"): "true",
                       ("training", "spec_augment"): "true"}),
        ("triplet", {("objective", "strategy"): "uniform"}),
        ("triplet", {("objective", "strategy"): "confusion"}),
        ("triplet", {("objective", "strategy"): "offending", ("objective", "k"): "3"}),
    ])
    def test_one_epoch_runs_and_reports(self, corpus_dir, tmp_path, kind, extra):
        cfg = small_cfg(corpus_dir, {("objective", "kind"): kind, **extra})
        report = pipelines.train_embed(cfg, tmp_path / "run")
        assert os.path.exists(report["checkpoint"])
        assert 0.0 <= report["final"]["acoustic_ap"] <= 1.0

    def test_classifier_objective(self, corpus_dir, tmp_path):
        cfg = small_cfg(corpus_dir, {("objective", "kind"): "classifier",
                                       ("encoder", "embed_dim"): "8"})
        report = pipelines.train_embed(cfg, tmp_path / "cls")
        assert report["final"]["cross_view_ap"] is None

    def test_zero_epochs_checkpoint_equals_initialization(self, corpus_dir, tmp_path):
        from awekit import nn

        cfg = small_cfg(corpus_dir, {("training", "epochs"): "0"})
        report = pipelines.train_embed(cfg, tmp_path / "zero")
        f, g, meta, _ = pipelines.rebuild_embed_model(report["checkpoint"])
        from awekit.config import component_rng
        from awekit.pipelines import build_acoustic_encoder

        fresh = build_acoustic_encoder(cfg, meta["input_dim"], component_rng(cfg.seed, "init"))
        for p, q in zip(fresh.parameters(), f.parameters()):
            np.testing.assert_array_equal(
                p.values.astype(np.float32), q.values.astype(np.float32))

    def test_same_seed_same_checkpoint_and_log(self, corpus_dir, tmp_path):
        cfg = small_cfg(corpus_dir, {("training", "epochs"): "2"})
        r1 = pipelines.train_embed(cfg, tmp_path / "d1")
        r2 = pipelines.train_embed(cfg, tmp_path / "d2")
        assert open(r1["checkpoint"], "rb").read() == open(r2["checkpoint"], "rb").read()
        assert (tmp_path / "d1" / "train_log.jsonl").read_text() == \
               (tmp_path / "d2" / "train_log.jsonl").read_text()

    def test_thread_count_does_not_change_results(self, corpus_dir, tmp_path):
        cfg1 = small_cfg(corpus_dir, {("run", "threads"): "1"})
        cfg4 = small_cfg(corpus_dir, {("run", "threads"): "4"})
        r1 = pipelines.train_embed(cfg1, tmp_path / "t1")
        r4 = pipelines.train_embed(cfg4, tmp_path / "t4")
        assert open(r1["checkpoint"], "rb").read() == open(r4["checkpoint"], "rb").read()
        a1 = pipelines.eval_ap(cfg1, r1["checkpoint"], tmp_path / "ap1.json")
        a4 = pipelines.eval_ap(cfg4, r4["checkpoint"], tmp_path / "ap4.json")
        assert a1["acoustic_ap"] == a4["acoustic_ap"]


class TestEvalAndSearch:
    @pytest.fixture(scope="class")
    def trained(self, corpus_dir, tmp_path_factory):
        out = tmp_path_factory.mktemp("trained")
        cfg = small_cfg(corpus_dir, {("training", "epochs"): "2"})
        report = pipelines.train_embed(cfg, out)
        return cfg, report["checkpoint"]

    def test_eval_ap_reports(self, trained, tmp_path):
        cfg, ckpt = trained
        report = pipelines.eval_ap(cfg, ckpt, tmp_path / "ap.json")
        assert 0 <= report["acoustic_ap"] <= 1
        assert 0 <= report["cross_view_ap"] <= 1
        assert os.path.exists(tmp_path / "ap.tsv")

    def test_dtw_ap_reports_both_normalizations(self, trained, tmp_path):
        cfg, _ = trained
        report = pipelines.dtw_ap(cfg, tmp_path / "dtw.json")
        assert 0 <= report["dtw_ap"] <= 1
        assert 0 <= report["dtw_ap_path_normalized"] <= 1

    def test_index_query_roundtrip_and_self_hit(self, trained, corpus_dir, tmp_path):
        cfg, ckpt = trained
        cfg = small_cfg(corpus_dir, {
            ("search", "window_sizes"): "8,12,16,20",
            ("search", "stride"): "4",
            ("search", "bits"): "128",
            ("search", "permutations"): "4",
            ("search", "beamwidth"): "4000",
        })
        idx_path = tmp_path / "dev.cadi"
        rep = pipelines.build_search_index(cfg, ckpt, corpus_dir["dev"], idx_path)
        assert rep["num_segments"] > 0
        out = tmp_path / "query_report.json"
        qrep = pipelines.query_search_index(
            cfg, ckpt, idx_path, corpus_dir["dev"], corpus_dir["dev_align"], out,
            truth_align_path=corpus_dir["dev_align"], search_archive=corpus_dir["dev"])
        # querying the collection with its own utterances: generous scores
        assert qrep["p_at_10"] > 0
        assert "min_cnxe" in qrep and qrep["min_cnxe"] <= 1.0
        assert os.path.exists(tmp_path / "query_report_hits.tsv")

    def test_beam_covering_index_matches_exhaustive(self, trained, corpus_dir, tmp_path):
        cfg, ckpt = trained
        base = {("search", "window_sizes"): "8,12,16,20", ("search", "stride"): "4",
                ("search", "bits"): "64", ("search", "permutations"): "2"}
        cfg_beam = small_cfg(corpus_dir, {**base, ("search", "beamwidth"): "100000"})
        cfg_exh = small_cfg(corpus_dir, {**base, ("search", "exhaustive"): "true"})
        idx_path = tmp_path / "i.cadi"
        pipelines.build_search_index(cfg_beam, ckpt, corpus_dir["dev"], idx_path)
        a = pipelines.query_search_index(cfg_beam, ckpt, idx_path, corpus_dir["dev"],
                                         corpus_dir["dev_align"], tmp_path / "a.json",
                                         truth_align_path=corpus_dir["dev_align"])
        b = pipelines.query_search_index(cfg_exh, ckpt, idx_path, corpus_dir["dev"],
                                         corpus_dir["dev_align"], tmp_path / "b.json",
                                         truth_align_path=corpus_dir["dev_align"])
        for key in ("fom", "otwv", "p_at_10"):
            assert a[key] == pytest.approx(b[key])


class TestRecognition:
    @pytest.mark.parametrize("kind", ["ctc", "segmental"])
    def test_one_epoch_asr_runs(self, corpus_dir, tmp_path, kind):
        cfg = small_cfg(corpus_dir, {("recognizer", "kind"): kind,
                                       ("recognizer", "s_max"): "24",
                                       ("training", "epochs"): "1"})
        report = recognition.train_asr(cfg, tmp_path / kind)
        assert os.path.exists(report["checkpoint"])
        assert report["history"][0]["dev_wer"] >= 0

    def test_decode_determinism_and_wer_report(self, corpus_dir, tmp_path):
        cfg = small_cfg(corpus_dir, {("training", "epochs"): "1"})
        report = recognition.train_asr(cfg, tmp_path / "asr")
        out1 = tmp_path / "dec1.json"
        out2 = tmp_path / "dec2.json"
        r1 = recognition.decode_archive(cfg, report["checkpoint"], corpus_dir["dev"], out1,
                                        align_path=corpus_dir["dev_align"])
        r2 = recognition.decode_archive(cfg, report["checkpoint"], corpus_dir["dev"], out2,
                                        align_path=corpus_dir["dev_align"])
        assert r1["wer"] == r2["wer"]
        assert open(str(out1).replace(".json", "_hyp.tsv")).read() == \
               open(str(out2).replace(".json", "_hyp.tsv")).read()

    def test_dynamic_lexicon_trains(self, corpus_dir, tmp_path):
        cfg = small_cfg(corpus_dir, {("recognizer", "lexicon_mode"): "dynamic",
                                       ("training", "epochs"): "1"})
        report = recognition.train_asr(cfg, tmp_path / "dyn")
        assert os.path.exists(report["checkpoint"])

    def test_frozen_rows_unchanged_after_training(self, corpus_dir, tmp_path):
        emb_cfg = small_cfg(corpus_dir, {("training", "epochs"): "1"})
        emb = pipelines.train_embed(emb_cfg, tmp_path / "emb")
        cfg = small_cfg(corpus_dir, {
            ("training", "epochs"): "1",
            ("recognizer", "training_mode"): "pretrain",
            ("recognizer", "init_checkpoint"): emb["checkpoint"],
            ("recognizer", "freeze"): "true",
            ("recognizer", "unk"): "true",
        })
        report = recognition.train_asr(cfg, tmp_path / "frozen")
        model, meta, _ = recognition.rebuild_recognizer(report["checkpoint"])
        f2, g2, _, _ = pipelines.rebuild_embed_model(emb["checkpoint"])
        from awekit.encoders import PredictionLayer, unit_rows
        import awekit.corpus as cp

        lex = cp.load_lexicon(corpus_dir["lexicon"])
        expect = unit_rows(g2.embed_words(
            [w for w in model.vocab.labels if w != model.vocab.unk_token], lex).values)
        got = model.pl.w.values[: len(expect)]
        np.testing.assert_allclose(got, expect.astype(np.float32).astype(np.float64), atol=1e-7)

    def test_export_embeddings_header_and_rows(self, corpus_dir, tmp_path):
        emb_cfg = small_cfg(corpus_dir, {("training", "epochs"): "0"})
        emb = pipelines.train_embed(emb_cfg, tmp_path / "emb0")
        out = tmp_path / "dump.tsv"
        rep = recognition.export_embeddings(emb["checkpoint"], corpus_dir["dev"], out,
                                            align_path=corpus_dir["dev_align"])
        lines = out.read_text().strip().split("\n")
        header = lines[0].split("\t")
        assert header[:2] == ["id", "label"]
        assert len(header) - 2 == rep["dim"]
        assert len(lines) - 1 == rep["rows"]
        rep2 = recognition.export_embeddings(emb["checkpoint"], corpus_dir["dev"],
                                             tmp_path / "dump2.tsv",
                                             align_path=corpus_dir["dev_align"])
        assert out.read_text() == (tmp_path / "dump2.tsv").read_text()


class TestCli:
    def test_make_synth_and_exit_codes(self, tmp_path):
        from awekit.cli import main

        assert main(["make-synth", "--out", str(tmp_path / "c"), "--seed", "4",
                     "--vocab", "4", "--train", "6", "--eval", "3"]) == 0
        assert os.path.exists(tmp_path / "c" / "train.cadf")
        # missing seed -> config error
        assert main(["make-synth", "--out", str(tmp_path / "d")]) == 2

    def test_cli_train_and_eval(self, corpus_dir, tmp_path):
        from awekit.cli import main

        ini = tmp_path / "exp.ini"
        ini.write_text(
            "[data]\n"
            f"train = {corpus_dir['train']}\ntrain_align = {corpus_dir['train_align']}\n"
            f"dev = {corpus_dir['dev']}\ndev_align = {corpus_dir['dev_align']}\n"
            f"lexicon = {corpus_dir['lexicon']}\n"
            "[encoder]\nlayers = 1\nhidden = 12\nembed_dim = 8\n"
            "[written]\nhidden = 12\nsymbol_embed_dim = 6\n"
            "[training]\nepochs = 1\nbatch_size = 8\n"
        )
        out = tmp_path / "run"
        assert main(["train-embed", "--config", str(ini), "--seed", "2", "--out", str(out)]) == 0
        ckpt = out / "embed.cadp"
        assert main(["eval-ap", "--config", str(ini), "--seed", "2",
                     "--checkpoint", str(ckpt), "--out", str(tmp_path / "ap.json")]) == 0
        report = json.loads((tmp_path / "ap.json").read_text())
        assert "acoustic_ap" in report and "config" in report

    def test_data_error_exit_code(self, tmp_path):
        from awekit.cli import main

        ini = tmp_path / "bad.ini"
        ini.write_text("[data]\ntrain = missing.cadf\n")
        rc = main(["train-embed", "--config", str(ini), "--seed", "1",
                   "--out", str(tmp_path / "x")])
        assert rc == 2  # missing path is flagged at config validation
