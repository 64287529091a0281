"""Query-by-example search over windowed segment embeddings.

Embeds sliding windows of every search utterance, builds the
permuted-bit-signature index, and scores spoken queries against the
collection — comparing beamwidth lookup against exhaustive search and
reporting the retrieval metrics.

Run:  python demos/02_query_by_example.py
"""

import tempfile

from awekit import pipelines, synth
from awekit.config import ExperimentConfig

workdir = tempfile.mkdtemp(prefix="awekit-demo2-")
print(f"working in {workdir}")

print("\n== corpus + a quick embedding model")
spec = synth.SyntheticSpec(num_train=300, num_eval=100)
paths = synth.write_corpus(synth.generate_corpus(spec, seed=14), workdir)
base = {
    ("data", "train"): paths["train"], ("data", "train_align"): paths["train_align"],
    ("data", "dev"): paths["dev"], ("data", "dev_align"): paths["dev_align"],
    ("data", "lexicon"): paths["lexicon"], ("run", "seed"): "3",
    ("training", "epochs"): "8",
    ("search", "window_sizes"): "15,18,21,24,27,30,36,42,48",
    ("search", "bits"): "512", ("search", "permutations"): "8",
}
cfg = ExperimentConfig.load(None, preset="ch5-multiview", overrides=base)
rep = pipelines.train_embed(cfg, f"{workdir}/embed")

print("\n== indexing windowed segments of the dev collection")
idx_rep = pipelines.build_search_index(cfg, rep["checkpoint"], paths["dev"],
                                       f"{workdir}/dev.cadi")
print(f"   {idx_rep['num_segments']} windows across {idx_rep['num_utterances']} utterances")

print("\n== querying with dev utterances themselves (every query has a true hit)")
for beam, tag in ((25, "narrow beam"), (100000, "beam covering everything")):
    cfg_b = ExperimentConfig.load(None, preset="ch5-multiview",
                                  overrides={**base, ("search", "beamwidth"): str(beam)})
    q_rep = pipelines.query_search_index(
        cfg_b, rep["checkpoint"], f"{workdir}/dev.cadi", paths["dev"], paths["dev_align"],
        f"{workdir}/query_{beam}.json", truth_align_path=paths["dev_align"],
        search_archive=paths["dev"])
    print(f"   {tag:26s} P@10 {q_rep['p_at_10']:.3f}  FOM {q_rep['fom']:.3f}  "
          f"OTWV {q_rep['otwv']:.3f}  maxTWV {q_rep['max_twv']:.3f}  "
          f"minCnxe {q_rep['min_cnxe']:.3f}")
print("\nranked hits for inspection:", f"{workdir}/query_25_hits.tsv")
