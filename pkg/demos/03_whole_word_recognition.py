"""Whole-word recognition two ways: frame-level CTC and explicit-segment
marginal-loss training, both warm-started from multi-view embeddings.

Run:  python demos/03_whole_word_recognition.py
"""

import tempfile

from awekit import pipelines, recognition, synth
from awekit.config import ExperimentConfig

workdir = tempfile.mkdtemp(prefix="awekit-demo3-")
print(f"working in {workdir}")

spec = synth.SyntheticSpec(vocab_size=30, num_train=300, num_eval=60,
                           words_per_utterance=(1, 3), noise=0.3, speaker_scale=0.3)
paths = synth.write_corpus(synth.generate_corpus(spec, seed=13), workdir)
data = {("data", "train"): paths["train"], ("data", "train_align"): paths["train_align"],
        ("data", "dev"): paths["dev"], ("data", "dev_align"): paths["dev_align"],
        ("data", "lexicon"): paths["lexicon"]}
arch = {("encoder", "layers"): "2", ("encoder", "hidden"): "96",
        ("encoder", "embed_dim"): "48", ("encoder", "subsample"): "3",
        ("written", "hidden"): "96"}


def mv_checkpoint(pooling):
    o = {**data, **arch,
         ("encoder", "pooling"): pooling,
         ("objective", "kind"): "multiview", ("objective", "terms"): "0,2",
         ("objective", "contextual"): "true", ("objective", "k"): "10",
         ("training", "epochs"): "8", ("training", "batch_size"): "16",
         ("optimizer", "lr"): "0.001", ("run", "seed"): "21"}
    rep = pipelines.train_embed(ExperimentConfig.load(None, overrides=o),
                                f"{workdir}/mv_{pooling}")
    return rep["checkpoint"]


def train(kind, pooling, ckpt, lr):
    o = {**data, **arch,
         ("encoder", "pooling"): pooling,
         ("training", "epochs"): "15", ("training", "batch_size"): "8",
         ("training", "stop_at_wer"): "0.03",
         ("optimizer", "lr"): lr,
         ("scheduler", "patience"): "10", ("scheduler", "factor"): "0.5",
         ("run", "seed"): "5",
         ("recognizer", "kind"): kind, ("recognizer", "s_max"): "20",
         ("recognizer", "training_mode"): "pretrain",
         ("recognizer", "init_checkpoint"): ckpt}
    cfg = ExperimentConfig.load(None, overrides=o)
    rep = recognition.train_asr(cfg, f"{workdir}/{kind}")
    wers = [round(h["dev_wer"], 3) for h in rep["history"]]
    print(f"   {kind:10s} dev WER per epoch: {wers}")
    return cfg, rep


print("\n== multi-view pretraining (mean pooling for CTC, concat for segmental)")
ck_mean = mv_checkpoint("mean")
ck_concat = mv_checkpoint("concat")

print("\n== CTC recognizer (greedy decode)")
ctc_cfg, ctc_rep = train("ctc", "mean", ck_mean, "0.002")

print("\n== segmental recognizer (explicit segment lattice)")
seg_cfg, seg_rep = train("segmental", "concat", ck_concat, "0.001")

print("\n== decoding the dev archive with both")
for cfg, rep, kind in ((ctc_cfg, ctc_rep, "ctc"), (seg_cfg, seg_rep, "segmental")):
    dec = recognition.decode_archive(cfg, rep["checkpoint"], paths["dev"],
                                     f"{workdir}/{kind}_decode.json",
                                     align_path=paths["dev_align"])
    print(f"   {kind:10s} WER {dec['wer']:.3f} "
          f"(S {dec['substitutions']} / D {dec['deletions']} / I {dec['insertions']})")
    print(f"              transcripts: {dec['transcripts']}")
