"""Extending a frozen recognizer's vocabulary at decode time.

Ten words are held out of the recognizer vocabulary (their training
occurrences become <unk>), the prediction layer is frozen at its
written-embedding initialization, and decoding replaces each <unk>
span with the best-matching word from a ten-word extension built by
the written encoder — no retraining.

Run:  python demos/04_vocabulary_extension.py
"""

import tempfile
from dataclasses import replace

from awekit import corpus as cp
from awekit import pipelines, recognition, synth
from awekit.config import ExperimentConfig

workdir = tempfile.mkdtemp(prefix="awekit-demo4-")
print(f"working in {workdir}")

spec = synth.SyntheticSpec(vocab_size=40, num_train=300, num_eval=60,
                           words_per_utterance=(1, 3), noise=0.3, speaker_scale=0.3)
corpus = synth.generate_corpus(spec, seed=13)
paths = synth.write_corpus(corpus, workdir)
heldout = corpus.words[30:]
open(f"{workdir}/vocab30.txt", "w").write("\n".join(corpus.words[:30]))
open(f"{workdir}/extend10.txt", "w").write("\n".join(heldout))
print(f"held-out words: {', '.join(heldout)}")

probe = synth.generate_corpus(replace(spec, words_per_utterance=(1, 1), num_eval=160), seed=13)
keep = [(fm, al) for fm, al in zip(probe.eval, probe.eval_alignments) if al.labels()[0] in heldout]
cp.save_feature_archive(f"{workdir}/probes.cadf", [fm for fm, _ in keep])
cp.save_alignments(f"{workdir}/probe_align.tsv", [al for _, al in keep])
print(f"{len(keep)} isolated probe utterances of held-out words")

data = {("data", "train"): paths["train"], ("data", "train_align"): paths["train_align"],
        ("data", "dev"): paths["dev"], ("data", "dev_align"): paths["dev_align"],
        ("data", "lexicon"): paths["lexicon"]}
arch = {("encoder", "layers"): "2", ("encoder", "hidden"): "96",
        ("encoder", "embed_dim"): "48", ("encoder", "subsample"): "3",
        ("encoder", "pooling"): "mean", ("written", "hidden"): "96"}

print("\n== multi-view pretraining over the full 40-word vocabulary")
o = {**data, **arch, ("objective", "kind"): "multiview", ("objective", "terms"): "0,2",
     ("objective", "contextual"): "true", ("objective", "k"): "10",
     ("training", "epochs"): "8", ("training", "batch_size"): "16",
     ("optimizer", "lr"): "0.001", ("run", "seed"): "21"}
mv = pipelines.train_embed(ExperimentConfig.load(None, overrides=o), f"{workdir}/mv")

print("\n== joint CTC training with a frozen 30-word prediction layer")
o = {**data, **arch,
     ("training", "epochs"): "10", ("training", "batch_size"): "8",
     ("optimizer", "lr"): "0.003",
     ("scheduler", "patience"): "10", ("scheduler", "factor"): "0.5",
     ("run", "seed"): "101",
     ("recognizer", "training_mode"): "joint",
     ("recognizer", "init_checkpoint"): mv["checkpoint"],
     ("recognizer", "freeze"): "true", ("recognizer", "unk"): "true",
     ("recognizer", "vocab_file"): f"{workdir}/vocab30.txt",
     ("recognizer", "lambda_emb"): "1.0",
     ("objective", "kind"): "multiview", ("objective", "terms"): "0,2",
     ("objective", "k"): "10"}
cfg = ExperimentConfig.load(None, overrides=o)
asr = recognition.train_asr(cfg, f"{workdir}/frozen")

print("\n== decoding probes with the 10-word extension + UNK rescoring")
recognition.decode_archive(cfg, asr["checkpoint"], f"{workdir}/probes.cadf",
                           f"{workdir}/probe_decode.json",
                           align_path=f"{workdir}/probe_align.tsv",
                           extend_words_path=f"{workdir}/extend10.txt")
hyp = {}
for line in open(f"{workdir}/probe_decode_hyp.tsv"):
    if not line.startswith("#"):
        uid, _, text = line.rstrip("\n").partition("\t")
        hyp[uid] = text.split()
als = cp.load_alignments(f"{workdir}/probe_align.tsv")
correct = sum(1 for uid, al in als.items() if al.labels()[0] in hyp.get(uid, []))
print(f"\nrecovered {correct}/{len(als)} held-out word tokens "
      f"({correct / len(als):.0%}) without ever training on their acoustics")
