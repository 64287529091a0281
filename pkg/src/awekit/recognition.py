"""Whole-word recognizers: CTC and segmental training, decoding, and
embedding export.

Training modes: "baseline" initializes everything randomly; "pretrain"
loads an embedding checkpoint, copies the acoustic encoder, builds the
prediction layer from written-view embeddings (optionally frozen), and
can regularize rows toward the (fixed) written embeddings; "joint" adds
the contrastive embedding loss with a live written encoder. Lexicon mode
"static" keeps the prediction rows as free parameters; "dynamic" rebuilds
them from the written encoder every batch.
"""

from __future__ import annotations

import json
import os

import numpy as np

from . import autodiff as ad
from . import corpus as cp
from . import ctc as ctc_mod
from . import encoders as enc
from . import metrics as mx
from . import nn
from . import objectives as obj
from . import segmental as segm
from .autodiff import Tape, Tensor
from .config import SCHEMA_VERSION, ConfigError, ExperimentConfig, component_rng
from .pipelines import (
    DataError,
    Dataset,
    _length_bucketed_batches,
    _restore,
    _snapshot,
    _write_report,
    build_acoustic_encoder,
    build_optimizer,
    build_written_encoder,
    load_dataset,
    load_model_meta,
    parallel_map,
    save_model,
)

UNK_TOKEN = "<unk>"


class RecognizerModel:
    def __init__(self, kind, f, g, pl, blank_w, blank_b, vocab, lexicon):
        self.kind = kind
        self.f = f
        self.g = g
        self.pl = pl
        self.blank_w = blank_w
        self.blank_b = blank_b
        self.vocab = vocab
        self.lexicon = lexicon

    def parameters(self):
        out = list(self.f.parameters())
        if self.g is not None:
            for p in self.g.parameters():
                if p not in out:
                    out.append(p)
        out.extend(self.pl.parameters())
        if self.blank_w is not None:
            out.extend([self.blank_w, self.blank_b])
        return out


def _merge_encoder_config(cfg: ExperimentConfig, ckpt_meta: dict) -> ExperimentConfig:
    """Weight-bearing encoder fields follow the checkpoint; pooling and
    subsampling (parameter-free) follow the recognizer config."""
    merged = {s: dict(kv) for s, kv in cfg.resolved().items()}
    ck = ckpt_meta["config"]
    for key in ("cell", "layers", "hidden", "embed_dim", "fc_layers", "fc_dim"):
        merged["encoder"][key] = ck["encoder"][key]
    for key in ("mode", "symbol_embed_dim", "hidden", "cell", "shared_projection"):
        merged["written"][key] = ck["written"][key]
    return ExperimentConfig(merged)


def build_recognizer(cfg: ExperimentConfig, ds: Dataset, input_dim: int) -> RecognizerModel:
    kind = cfg.get("recognizer", "kind")
    if kind not in ("ctc", "segmental"):
        raise ConfigError(f"unknown recognizer kind {kind!r}")
    mode = cfg.get("recognizer", "training_mode")
    lexicon_mode = cfg.get("recognizer", "lexicon_mode")
    use_unk = cfg.getbool("recognizer", "unk")
    vocab_file = cfg.get("recognizer", "vocab_file")
    if vocab_file:
        # restricted vocabulary: training words outside it map to UNK
        with open(vocab_file, encoding="utf-8") as fh:
            labels = sorted({w.strip() for w in fh if w.strip()})
    else:
        labels = sorted({v for al in ds.train_align.values() for v in al.labels()})
    vocab = cp.Vocabulary(labels, unk_token=UNK_TOKEN if use_unk else None)
    init_rng = component_rng(cfg.seed, "init")
    d = cfg.getint("encoder", "embed_dim")

    init_ckpt = cfg.get("recognizer", "init_checkpoint")
    if mode in ("pretrain", "joint"):
        if not init_ckpt:
            raise ConfigError(f"training_mode {mode!r} needs [recognizer] init_checkpoint")
        meta = load_model_meta(init_ckpt)
        cfg = _merge_encoder_config(cfg, meta)
        d = cfg.getint("encoder", "embed_dim")
        f = build_acoustic_encoder(cfg, input_dim, init_rng)
        g = build_written_encoder(cfg, ds, labels, f, init_rng)
        nn.assign_from_checkpoint(f.parameters() + g.parameters(), nn.load_checkpoint(init_ckpt),
                                  strict=False)
        pl = enc.PredictionLayer.from_written_encoder(
            vocab, g, ds.lexicon, mode=lexicon_mode, rng=component_rng(cfg.seed, "pred-init"),
            unit_normalize=cfg.getbool("recognizer", "unit_normalize"))
        if use_unk and lexicon_mode == "static" and cfg.get("recognizer", "unk_row_init") == "zero":
            # a zero UNK row scores through its bias alone, so OOV spans do
            # not pull the encoder toward an arbitrary frozen direction
            pl.w.values[vocab.unk_index] = 0.0
        if cfg.getbool("recognizer", "freeze"):
            pl.freeze()
        if cfg.getbool("recognizer", "freeze_encoder"):
            # keep the pretrained embedding geometry exactly: only biases,
            # the blank row, and (joint mode) the written encoder train
            for p in f.parameters():
                p.frozen = True
    else:
        f = build_acoustic_encoder(cfg, input_dim, init_rng)
        g = None
        if lexicon_mode == "dynamic":
            g = build_written_encoder(cfg, ds, labels, f, init_rng)
            pl = enc.PredictionLayer.from_written_encoder(
                vocab, g, ds.lexicon, mode="dynamic", rng=component_rng(cfg.seed, "pred-init"))
        else:
            pl = enc.PredictionLayer(vocab, d, mode="static",
                                     rng=component_rng(cfg.seed, "pred-init"))
    blank_w = blank_b = None
    if kind == "ctc":
        blank_rng = component_rng(cfg.seed, "blank-init")
        blank_w = nn.Parameter("blank.w", nn.normal_init(blank_rng, d) / np.sqrt(d))
        blank_b = nn.Parameter("blank.b", np.zeros(1))
    model = RecognizerModel(kind, f, g, pl, blank_w, blank_b, vocab, ds.lexicon)
    _rescale_projection(model, ds)
    return model


def _rescale_projection(model, ds: Dataset, sample: int = 64):
    """Scale the encoder projection so word-segment embeddings have unit
    mean norm at initialization.

    Cosine-trained embeddings carry no scale anchor, so transferring them
    into a dot-product scorer can start in a degenerate tiny-logit regime
    (segment counts then dominate word identity in the segmental
    lattice). Rescaling the projection preserves cosine geometry and
    restores O(1) scores; prediction rows and biases are untouched.
    """
    norms = []
    for fm in ds.train:
        if len(norms) >= sample:
            break
        al = ds.train_align[fm.utterance_id]
        if not al.entries:
            continue
        out, lengths = _encode_batch(model, [fm], train=False, rng=None)
        items = [(0, model.f.map_start(s), model.f.map_end(e)) for s, e, _ in al.entries]
        if model.kind == "ctc":
            B, T, W = out.values.shape
            proj = ad.reshape(model.f.project(ad.reshape(out, (B * T, W))), (B, T, -1))
            embs = np.stack([proj.values[r, s:e].mean(axis=0) for r, s, e in items])
        else:
            embs = model.f.project(model.f.pool_batch(out, items)).values
        norms.extend(np.linalg.norm(embs, axis=1).tolist())
    mean_norm = float(np.mean(norms)) if norms else 1.0
    if mean_norm > 0:
        model.f.proj_w.values /= mean_norm
        model.f.proj_b.values /= mean_norm


# ---------------------------------------------------------------------------
# Forward passes


def _encode_batch(model, fms, train, rng):
    x, mask, _ = enc.pad_and_mask([fm.frames for fm in fms], model.f.config.subsample)
    out, out_mask = model.f.encode_padded(Tensor(x), mask, train=train, rng=rng)
    lengths = out_mask.sum(axis=1).astype(int)
    return out, lengths


def _ctc_frame_logits(model, out: Tensor):
    """Project frame outputs and score against [rows; blank]."""
    B, T, W = out.values.shape
    proj = model.f.project(ad.reshape(out, (B * T, W)))  # (B*T, d)
    w_full = ad.concat([model.pl.weight_tensor(),
                        ad.reshape(model.blank_w.tensor, (1, -1))], axis=0)
    b_full = ad.concat([model.pl.b.tensor, model.blank_b.tensor], axis=0)
    logits = ad.affine(proj, ad.transpose(w_full), b_full)
    return proj, ad.log_softmax(logits, axis=1), T


def _transcript_ids(model, al: cp.WordAlignment):
    try:
        return [model.vocab.index(v) for v in al.labels()]
    except KeyError as e:
        raise DataError(f"{al.utterance_id}: word {e.args[0]!r} not in the vocabulary "
                        "(enable [recognizer] unk or extend the training set)") from e


def ctc_batch_loss(model, fms, alignments, train=True, rng=None):
    out, lengths = _encode_batch(model, fms, train, rng)
    _, log_probs, T = _ctc_frame_logits(model, out)
    total = None
    n = 0
    for i, fm in enumerate(fms):
        ids = _transcript_ids(model, alignments[fm.utterance_id])
        rows = ad.getitem(log_probs, slice(i * T, i * T + int(lengths[i])))
        piece = ctc_mod.ctc_loss(rows, ids)
        total = piece if total is None else ad.add(total, piece)
        n += len(ids)
    return total, n, out, lengths


def segmental_batch_loss(model, fms, alignments, cfg, train=True, rng=None, sample_rng=None):
    out, lengths = _encode_batch(model, fms, train, rng)
    counts = [len(alignments[fm.utterance_id]) for fm in fms]
    s_cap = segm.batch_segment_cap(lengths, counts, cfg.getint("recognizer", "s_max"))
    vocab_sample = cfg.getint("recognizer", "vocab_sample")
    subset = None
    remap = None
    if vocab_sample > 0:
        needed = sorted({i for fm in fms for i in _transcript_ids(model, alignments[fm.utterance_id])})
        pool = [i for i in range(model.vocab.size) if i not in set(needed)]
        extra = max(0, min(vocab_sample - len(needed), len(pool)))
        if extra and sample_rng is not None:
            picks = sample_rng.choice(len(pool), size=extra, replace=False)
            needed = sorted(set(needed) | {pool[p] for p in picks})
        subset = np.array(needed, dtype=np.intp)
        remap = {v: i for i, v in enumerate(needed)}
    total = None
    n = 0
    for i, fm in enumerate(fms):
        ids = _transcript_ids(model, alignments[fm.utterance_id])
        if remap is not None:
            ids = [remap[v] for v in ids]
        H = ad.getitem(out, (i, slice(0, int(lengths[i]))))
        st = segm.score_segments(model.f, H, model.pl, s_cap, label_subset=subset)
        piece = segm.seg_loss(st, ids)
        total = piece if total is None else ad.add(total, piece)
        n += len(ids)
    return total, n, out, lengths


def _word_segment_items(model, fms, alignments, min_f, max_f):
    items, labels = [], []
    for row, fm in enumerate(fms):
        for s, e, lab in alignments[fm.utterance_id].entries:
            if min_f <= e - s <= max_f:
                items.append((row, model.f.map_start(s), model.f.map_end(e)))
                labels.append(lab)
    return items, labels


def joint_embedding_loss(model, cfg, out, fms, alignments, sample_rng):
    """Contrastive multi-view loss over the batch's word segments.

    CTC models pool mean projected frame outputs over each word span;
    segmental models use the segment embedding function directly (pool +
    project with the configured mode)."""
    min_f = max(1, cfg.getint("training", "min_frames"))
    max_f = cfg.getint("training", "max_frames")
    items, labels = _word_segment_items(model, fms, alignments, min_f, max_f)
    if not items:
        return None
    if model.kind == "ctc":
        B, T, W = out.values.shape
        proj = ad.reshape(model.f.project(ad.reshape(out, (B * T, W))), (B, T, -1))
        pooled = [ad.mean(ad.getitem(proj, (r, slice(s, e))), axis=0) for r, s, e in items]
        acoustic = ad.stack(pooled, axis=0)
    else:
        acoustic = model.f.project(model.f.pool_batch(out, items))
    full_vocab = [v for v in model.vocab.labels if v != model.vocab.unk_token]
    vocab_words = obj.batch_vocabulary(labels, full_vocab, cfg.getint("objective", "extras"), sample_rng)
    word_embs = model.g.embed_words(vocab_words, model.lexicon)
    batch = obj.MultiViewBatch(acoustic, labels, vocab_words, word_embs)
    sampling = obj.SamplingConfig(k=cfg.getint("objective", "k"),
                                  strategy=cfg.get("objective", "strategy"))
    loss = obj.multiview_loss(batch, cfg.getfloat("objective", "margin"), sampling,
                              terms=tuple(cfg.getints("objective", "terms")),
                              sqrt_variant=cfg.getbool("objective", "sqrt_variant"),
                              rng=sample_rng)
    return ad.scale(loss, 1.0 / max(1, len(labels)))


def regularizer_loss(model, fms, alignments, live: bool):
    words = sorted({v for fm in fms for v in alignments[fm.utterance_id].labels()
                    if v in model.vocab and v != model.vocab.unk_token})
    if not words or model.pl.mode != "static":
        return None
    idx = np.array([model.vocab.index(w) for w in words], dtype=np.intp)
    rows = ad.getitem(model.pl.w.tensor, idx)
    if live:
        written = model.g.embed_words(words, model.lexicon)
    else:
        written = Tensor(model.g.embed_words(words, model.lexicon).values)
    return obj.agwe_regularizer(rows, written)


# ---------------------------------------------------------------------------
# Decoding


def decode_utterance(model, fm: cp.FrameMatrix, s_max: int | None = None):
    """Decode one utterance; returns (words, spans, frame_embeddings)."""
    out, lengths = _encode_batch(model, [fm], train=False, rng=None)
    T = int(lengths[0])
    if model.kind == "ctc":
        proj, log_probs, Tpad = _ctc_frame_logits(model, out)
        lp = log_probs.values[:T]
        spans = ctc_mod.ctc_greedy_decode_with_spans(lp)
        if model.vocab.unk_index is not None:
            spans = ctc_mod.widen_unk_spans(lp, spans, model.vocab.unk_index)
        words = [model.vocab.label(tok) for tok, _, _ in spans]
        return words, spans, proj.values[:T]
    H = ad.getitem(out, (0, slice(0, T)))
    st = segm.score_segments(model.f, H, model.pl, s_max if s_max is not None else 32)
    path = segm.viterbi_decode(st)
    words = [model.vocab.label(v) for v in path.labels()]
    spans = [(v, t, t + s) for t, s, v in path.segments]
    return words, spans, None


def dev_wer(model, fms, alignments, threads: int, s_max: int = 32) -> float:
    def run(fm):
        words, _, _ = decode_utterance(model, fm, s_max=s_max)
        ref = alignments[fm.utterance_id].labels()
        return mx.wer(ref, words)

    results = parallel_map(run, list(fms), threads)
    errors = sum(r.substitutions + r.deletions + r.insertions for r in results)
    total = sum(len(alignments[fm.utterance_id].labels()) for fm in fms)
    return errors / total


# ---------------------------------------------------------------------------
# Training


def train_asr(cfg: ExperimentConfig, outdir: str) -> dict:
    os.makedirs(outdir, exist_ok=True)
    ds = load_dataset(cfg)
    model = build_recognizer(cfg, ds, ds.train[0].dim)
    if cfg.get("recognizer", "training_mode") in ("pretrain", "joint"):
        cfg = _merge_encoder_config(cfg, load_model_meta(cfg.get("recognizer", "init_checkpoint")))
    params = model.parameters()
    optimizer = build_optimizer(cfg)
    scheduler = nn.PlateauScheduler(
        lr=optimizer.lr,
        patience=cfg.getint("scheduler", "patience"),
        factor=cfg.getfloat("scheduler", "factor"),
        min_lr=cfg.getfloat("scheduler", "min_lr"),
        mode="min",
    )
    shuffle_rng = component_rng(cfg.seed, "shuffle")
    dropout_rng = component_rng(cfg.seed, "dropout")
    sample_rng = component_rng(cfg.seed, "sampling")
    mode = cfg.get("recognizer", "training_mode")
    lam_emb = cfg.getfloat("recognizer", "lambda_emb")
    lam_reg = cfg.getfloat("recognizer", "lambda_reg")
    scheme = cfg.get("recognizer", "scheme")
    batch_size = cfg.getint("training", "batch_size")
    s_max = cfg.getint("recognizer", "s_max")

    frozen_snapshot = model.pl.w.values.copy() if model.pl.mode == "static" else None

    history = []
    best_snap = _snapshot(params)
    best_wer = None
    log_file = open(os.path.join(outdir, "train_log.jsonl"), "w", encoding="utf-8")
    for epoch in range(cfg.getint("training", "epochs")):
        epoch_loss = 0.0
        n_batches = 0
        order = _length_bucketed_batches(
            len(ds.train), [fm.num_frames for fm in ds.train], batch_size, shuffle_rng)
        for batch_ids in order:
            fms = [ds.train[i] for i in batch_ids]
            nn.zero_grads(params)
            with Tape() as tape:
                if model.kind == "ctc":
                    asr, n_tok, out, _ = ctc_batch_loss(model, fms, ds.train_align,
                                                        train=True, rng=dropout_rng)
                else:
                    asr, n_tok, out, _ = segmental_batch_loss(model, fms, ds.train_align, cfg,
                                                              train=True, rng=dropout_rng,
                                                              sample_rng=sample_rng)
                asr = ad.scale(asr, 1.0 / max(1, n_tok))
                emb_loss = reg_loss = None
                if mode == "joint" and lam_emb > 0:
                    emb_loss = joint_embedding_loss(model, cfg, out, fms, ds.train_align, sample_rng)
                if mode in ("pretrain", "joint") and lam_reg > 0 and model.pl.mode == "static" \
                        and not model.pl.w.frozen:
                    reg_loss = regularizer_loss(model, fms, ds.train_align, live=(mode == "joint"))
                loss = obj.combine_joint(asr, emb_loss, reg_loss, lam_emb, lam_reg, scheme)
            tape.backward(loss)
            optimizer.step(params)
            epoch_loss += float(loss.values)
            n_batches += 1
        wer = dev_wer(model, ds.dev, ds.dev_align, cfg.threads, s_max=s_max)
        decision = scheduler.update(wer)
        optimizer.lr = decision.lr
        if decision.improved or best_wer is None:
            best_wer = wer
            best_snap = _snapshot(params)
        elif decision.reset_to_best:
            _restore(params, best_snap)
        entry = {"epoch": epoch, "loss": epoch_loss / max(1, n_batches), "dev_wer": wer,
                 "lr": optimizer.lr}
        history.append(entry)
        log_file.write(json.dumps(entry, sort_keys=True) + "\n")
        stop_at = cfg.getfloat("training", "stop_at_wer")
        if decision.stop or (stop_at > 0 and wer <= stop_at):
            break
    log_file.close()
    _restore(params, best_snap)
    if frozen_snapshot is not None and model.pl.w.frozen:
        assert np.array_equal(model.pl.w.values, frozen_snapshot), "freeze contract violated"

    ckpt = os.path.join(outdir, "asr.cadp")
    meta = {
        "version": SCHEMA_VERSION,
        "model": "asr",
        "kind": model.kind,
        "input_dim": ds.train[0].dim,
        "config": cfg.resolved(),
        "vocab": model.vocab.labels,
        "unk": model.vocab.unk_token,
        "has_written": model.g is not None,
        "written_symbols": (model.g.symbols if model.g is not None and model.g.symbol_index is not None
                            else None),
    }
    save_model(ckpt, params, meta)
    report = {"checkpoint": ckpt, "best_wer": best_wer, "epochs_run": len(history),
              "history": history, "config": cfg.resolved(), "version": SCHEMA_VERSION}
    with open(os.path.join(outdir, "train_report.json"), "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=1, sort_keys=True)
    return report


def rebuild_recognizer(checkpoint: str):
    meta = load_model_meta(checkpoint)
    cfg = ExperimentConfig(meta["config"])
    vocab_words = [w for w in meta["vocab"] if w != meta["unk"]]
    vocab = cp.Vocabulary(vocab_words, unk_token=meta["unk"])
    rng = component_rng(cfg.seed, "init")
    f = build_acoustic_encoder(cfg, meta["input_dim"], rng)
    lexicon = None
    lex_path = cfg.get("data", "lexicon")
    if lex_path and os.path.exists(lex_path):
        lexicon = cp.load_lexicon(lex_path)
    g = None
    if meta["has_written"]:
        ds = Dataset([], {}, [], {}, lexicon, _table_if_exists(cfg))
        g = build_written_encoder(cfg, ds, vocab_words, f, rng)
    if cfg.get("recognizer", "lexicon_mode") == "dynamic" and g is not None:
        pl = enc.PredictionLayer.from_written_encoder(
            vocab, g, lexicon, mode="dynamic", rng=component_rng(cfg.seed, "pred-init"))
    else:
        pl = enc.PredictionLayer(vocab, cfg.getint("encoder", "embed_dim"), mode="static",
                                 rng=component_rng(cfg.seed, "pred-init"),
                                 unit_normalized=cfg.getbool("recognizer", "unit_normalize"))
    blank_w = blank_b = None
    if meta["kind"] == "ctc":
        d = cfg.getint("encoder", "embed_dim")
        blank_w = nn.Parameter("blank.w", np.zeros(d))
        blank_b = nn.Parameter("blank.b", np.zeros(1))
    model = RecognizerModel(meta["kind"], f, g, pl, blank_w, blank_b, vocab, lexicon)
    nn.assign_from_checkpoint(model.parameters(), nn.load_checkpoint(checkpoint), strict=False)
    if cfg.getbool("recognizer", "freeze") and pl.mode == "static":
        pl.freeze()
    return model, meta, cfg


def _table_if_exists(cfg):
    path = cfg.get("data", "feature_table")
    return cp.load_feature_table(path) if path and os.path.exists(path) else None


def decode_archive(cfg: ExperimentConfig, checkpoint: str, archive_path: str, out_path: str,
                   align_path: str | None = None, extend_words_path: str | None = None) -> dict:
    """Decode an archive; optionally rescore UNK spans against an extended
    vocabulary, and report WER when reference alignments are given."""
    model, meta, _ = rebuild_recognizer(checkpoint)
    fms = cp.load_feature_archive(archive_path)
    s_max = cfg.getint("recognizer", "s_max")
    extended = None
    if extend_words_path:
        if model.g is None:
            raise ConfigError("vocabulary extension needs a written encoder in the checkpoint")
        with open(extend_words_path, encoding="utf-8") as fh:
            new_words = [w.strip() for w in fh if w.strip()]
        extended = enc.extend_vocabulary(model.pl, model.g, new_words, model.lexicon)

    def run(fm):
        words, spans, frame_emb = decode_utterance(model, fm, s_max=s_max)
        if extended is not None and model.kind == "ctc" and model.vocab.unk_index is not None:
            toks = ctc_mod.unk_rescore(spans, frame_emb, extended, model.vocab.unk_index)
            words = [extended.vocab.label(t) for t in toks]
        return words

    hyps = parallel_map(run, fms, cfg.threads)
    trans_path = os.path.splitext(out_path)[0] + "_hyp.tsv"
    with open(trans_path, "w", encoding="utf-8") as fh:
        fh.write("# utterance_id\thypothesis\n")
        for fm, words in zip(fms, hyps):
            fh.write(f"{fm.utterance_id}\t{' '.join(words)}\n")
    report = {"num_utterances": len(fms), "transcripts": trans_path,
              "config": cfg.resolved(), "version": SCHEMA_VERSION}
    if align_path:
        align = cp.load_alignments(align_path)
        errors = total = 0
        subs = dels = ins = 0
        for fm, words in zip(fms, hyps):
            ref = align[fm.utterance_id].labels()
            r = mx.wer(ref, words)
            subs += r.substitutions
            dels += r.deletions
            ins += r.insertions
            errors += r.substitutions + r.deletions + r.insertions
            total += len(ref)
        report.update({"wer": errors / total, "substitutions": subs,
                       "deletions": dels, "insertions": ins, "ref_words": total})
    _write_report(out_path, report)
    return report


def export_embeddings(checkpoint: str, archive_path: str, out_path: str,
                      align_path: str | None = None, threads: int = 1) -> dict:
    """Dump (id, label, vector) rows for aligned segments (or whole
    utterances when no alignment is given)."""
    from .pipelines import rebuild_embed_model

    f, _, meta, _ = rebuild_embed_model(checkpoint)
    fms = cp.load_feature_archive(archive_path)
    align = cp.load_alignments(align_path) if align_path else None
    items = []
    for fm in fms:
        if align is None:
            items.append((f"{fm.utterance_id}", "", fm.frames))
        else:
            for s, e, lab in align[fm.utterance_id].entries:
                items.append((f"{fm.utterance_id}:{s}-{e}", lab, fm.frames[s:e]))
    d = f.config.embed_dim

    def run(chunk):
        return f.embed_segments_isolated([fr for _, _, fr in chunk]).values

    chunks = [items[i : i + 64] for i in range(0, len(items), 64)]
    embs = parallel_map(run, chunks, threads)
    flat = np.concatenate(embs, axis=0) if embs else np.zeros((0, d))
    with open(out_path, "w", encoding="utf-8") as fh:
        fh.write("id\tlabel\t" + "\t".join(f"v{i}" for i in range(d)) + "\n")
        for (uid, lab, _), row in zip(items, flat):
            fh.write(uid + "\t" + lab + "\t" + "\t".join(f"{x:.8g}" for x in row) + "\n")
    return {"rows": len(items), "dim": d, "path": out_path}
