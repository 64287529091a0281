"""End-to-end pipelines: embedding training, word-discrimination
evaluation, DTW baselines, index build / query-by-example search,
recognizer training (CTC and segmental), decoding, and embedding export.

Every pipeline is deterministic given (config, seed, inputs): random
streams derive from the master seed per component, batch formation is
independent of the thread count, and parallel maps preserve order.
"""

from __future__ import annotations

import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import corpus as cp
from . import ctc as ctc_mod
from . import dtw as dtw_mod
from . import encoders as enc
from . import metrics as mx
from . import nn
from . import objectives as obj
from . import search as srch
from . import segmental as segm
from .autodiff import Tape, Tensor
from .config import SCHEMA_VERSION, ConfigError, ExperimentConfig, component_rng


class DataError(Exception):
    pass


def parallel_map(fn, items, threads: int):
    """Order-preserving map, optionally on a thread pool."""
    items = list(items)
    if threads <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


# ---------------------------------------------------------------------------
# Data assembly


@dataclass
class Dataset:
    train: list
    train_align: dict
    dev: list
    dev_align: dict
    lexicon: cp.Lexicon | None
    feature_table: cp.FeatureTable | None


def load_dataset(cfg: ExperimentConfig, need_dev: bool = True) -> Dataset:
    train = cp.load_feature_archive(cfg.data_path("train"))
    train_align = cp.load_alignments(cfg.data_path("train_align"))
    dev, dev_align = [], {}
    if need_dev:
        dev = cp.load_feature_archive(cfg.data_path("dev"))
        dev_align = cp.load_alignments(cfg.data_path("dev_align"))
    lex_path = cfg.get("data", "lexicon")
    lexicon = cp.load_lexicon(cfg.data_path("lexicon")) if lex_path else None
    ft_path = cfg.get("data", "feature_table")
    feature_table = cp.load_feature_table(cfg.data_path("feature_table")) if ft_path else None
    for fms, als in ((train, train_align), (dev, dev_align)):
        for fm in fms:
            if fm.utterance_id not in als:
                raise DataError(f"no alignment for utterance {fm.utterance_id!r}")
            als[fm.utterance_id].check_bounds(fm)
    return Dataset(train, train_align, dev, dev_align, lexicon, feature_table)


def collect_segments(fms, alignments, min_frames, max_frames):
    """(FrameMatrix, SegmentRef) pairs across a split, in archive order."""
    out = []
    for fm in fms:
        for seg in cp.extract_segments(fm, alignments[fm.utterance_id], min_frames, max_frames):
            out.append((fm, seg))
    return out


def _length_bucketed_batches(n_items, lengths, batch_size, rng):
    """Batches of similar lengths in a seeded random order.

    Items are sorted by length (ties by index), cut into consecutive
    batches, and the batch order is shuffled.
    """
    order = np.lexsort((np.arange(n_items), np.asarray(lengths)))
    batches = [order[i : i + batch_size] for i in range(0, n_items, batch_size)]
    rng.shuffle(batches)
    return [b.tolist() for b in batches]


# ---------------------------------------------------------------------------
# Model construction


def build_acoustic_encoder(cfg: ExperimentConfig, input_dim: int, rng) -> enc.AcousticEncoder:
    config = enc.AcousticEncoderConfig(
        input_dim=input_dim,
        cell=cfg.get("encoder", "cell"),
        layers=cfg.getint("encoder", "layers"),
        hidden=cfg.getint("encoder", "hidden"),
        dropout=cfg.getfloat("encoder", "dropout"),
        pooling=cfg.get("encoder", "pooling"),
        embed_dim=cfg.getint("encoder", "embed_dim"),
        subsample=cfg.getint("encoder", "subsample"),
        fc_layers=cfg.getint("encoder", "fc_layers"),
        fc_dim=cfg.getint("encoder", "fc_dim"),
    )
    return enc.AcousticEncoder(config, rng)


def _symbol_inventory(ds: Dataset, labels) -> list:
    if ds.lexicon is not None:
        chars = {ch for w in ds.lexicon.pronunciations for ch in w}
    else:
        chars = set()
    chars.update(ch for w in labels for ch in w)
    return sorted(chars)


def build_written_encoder(cfg: ExperimentConfig, ds: Dataset, labels, f: enc.AcousticEncoder, rng):
    mode = cfg.get("written", "mode")
    wcfg = enc.WrittenEncoderConfig(
        mode=mode,
        symbol_embed_dim=cfg.getint("written", "symbol_embed_dim"),
        cell=cfg.get("written", "cell"),
        hidden=cfg.getint("written", "hidden"),
        embed_dim=cfg.getint("encoder", "embed_dim"),
    )
    shared = None
    if cfg.getbool("written", "shared_projection") and 2 * wcfg.hidden == f.frame_width and not f.fc:
        shared = (f.proj_w, f.proj_b)
    symbols = None
    feature_table = None
    if mode == "char":
        symbols = _symbol_inventory(ds, labels)
    elif mode == "phone":
        if ds.lexicon is None:
            raise ConfigError("phone mode needs [data] lexicon")
        symbols = ds.lexicon.symbols()
    else:
        if ds.feature_table is None:
            raise ConfigError("feature mode needs [data] feature_table")
        feature_table = ds.feature_table
    return enc.WrittenEncoder(wcfg, rng, symbols=symbols, feature_table=feature_table,
                              shared_projection=shared)


def build_optimizer(cfg: ExperimentConfig):
    kind = cfg.get("optimizer", "kind")
    if kind == "adam":
        return nn.Adam(cfg.getfloat("optimizer", "lr"), cfg.getfloat("optimizer", "beta1"),
                       cfg.getfloat("optimizer", "beta2"), cfg.getfloat("optimizer", "eps"))
    if kind == "sgd":
        return nn.NesterovSGD(cfg.getfloat("optimizer", "lr"), cfg.getfloat("optimizer", "momentum"))
    raise ConfigError(f"unknown optimizer {kind!r}")


def _snapshot(params):
    return [p.values.copy() for p in params]


def _restore(params, snap):
    for p, v in zip(params, snap):
        p.values[...] = v


def save_model(path, params, meta: dict):
    nn.save_checkpoint(path, params)
    with open(str(path) + ".json", "w", encoding="utf-8") as f:
        json.dump(meta, f, indent=1, sort_keys=True)


def load_model_meta(path) -> dict:
    with open(str(path) + ".json", encoding="utf-8") as f:
        return json.load(f)


# ---------------------------------------------------------------------------
# Embedding evaluation helpers


def embed_dev_segments(f: enc.AcousticEncoder, segments, threads: int, batch: int = 64) -> np.ndarray:
    """Embed (fm, seg) pairs without recording; batched and thread-mapped."""
    chunks = [segments[i : i + batch] for i in range(0, len(segments), batch)]

    def run(chunk):
        frames = [fm.frames[s.start : s.end] for fm, s in chunk]
        return f.embed_segments_isolated(frames).values

    if not chunks:
        return np.zeros((0, f.config.embed_dim))
    return np.concatenate(parallel_map(run, chunks, threads), axis=0)


def embed_dev_contextual(f: enc.AcousticEncoder, fms, alignments, min_frames, max_frames,
                         threads: int) -> tuple[np.ndarray, list]:
    """Contextual embeddings of every admissible aligned word segment."""

    def run(fm):
        al = alignments[fm.utterance_id]
        segs = cp.extract_segments(fm, al, min_frames, max_frames)
        if not segs:
            return np.zeros((0, f.config.embed_dim)), []
        x, mask, _ = enc.pad_and_mask([fm.frames], f.config.subsample)
        out, _ = f.encode_padded(Tensor(x), mask)
        items = [(0, f.map_start(s.start), f.map_end(s.end)) for s in segs]
        pooled = f.pool_batch(out, items)
        return f.project(pooled).values, [s.label for s in segs]

    results = parallel_map(run, list(fms), threads)
    embs = [r[0] for r in results if len(r[1])]
    labels = [lab for r in results for lab in r[1]]
    if not embs:
        return np.zeros((0, f.config.embed_dim)), []
    return np.concatenate(embs, axis=0), labels


def classifier_embeddings(f: enc.AcousticEncoder, segments, threads: int) -> np.ndarray:
    """Softmax posteriors used as embeddings for classifier models."""
    logits = embed_dev_segments(f, segments, threads)
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


# ---------------------------------------------------------------------------
# Embedding training


def train_embed(cfg: ExperimentConfig, outdir: str) -> dict:
    os.makedirs(outdir, exist_ok=True)
    seed = cfg.seed
    ds = load_dataset(cfg)
    min_f = cfg.getint("training", "min_frames")
    max_f = cfg.getint("training", "max_frames")
    kind = cfg.get("objective", "kind")
    contextual = cfg.getbool("objective", "contextual")
    spans = cfg.getbool("objective", "spans")
    use_augment = cfg.getbool("training", "spec_augment")

    train_segments = collect_segments(ds.train, ds.train_align, min_f, max_f)
    dev_segments = collect_segments(ds.dev, ds.dev_align, min_f, max_f)
    if not train_segments or not dev_segments:
        raise DataError("no admissible segments; check the frame-length window")
    train_labels = sorted({s.label for _, s in train_segments})

    input_dim = ds.train[0].dim
    init_rng = component_rng(seed, "init")
    f = build_acoustic_encoder(cfg, input_dim, init_rng)
    params = f.parameters()
    g = None
    if kind == "multiview":
        g = build_written_encoder(cfg, ds, train_labels, f, init_rng)
        params = params + g.parameters()
    elif kind == "classifier":
        if f.config.embed_dim != len(train_labels):
            raise ConfigError(
                f"classifier objective needs [encoder] embed_dim = vocabulary size ({len(train_labels)})"
            )
    elif kind != "triplet":
        raise ConfigError(f"unknown objective kind {kind!r}")

    optimizer = build_optimizer(cfg)
    rule = cfg.get("scheduler", "rule")
    scheduler = nn.PlateauScheduler(
        lr=optimizer.lr,
        patience=cfg.getint("scheduler", "patience"),
        factor=cfg.getfloat("scheduler", "factor"),
        min_lr=cfg.getfloat("scheduler", "min_lr"),
        mode="max",
    )
    loss_rule = nn.LossPlateauHeuristic(optimizer.lr, cfg.getfloat("scheduler", "factor")) \
        if rule == "loss-heuristic" else None

    shuffle_rng = component_rng(seed, "shuffle")
    sample_rng = component_rng(seed, "sampling")
    dropout_rng = component_rng(seed, "dropout")
    augment_rng = component_rng(seed, "augment")
    span_rng = component_rng(seed, "spans")

    margin = cfg.getfloat("objective", "margin")
    k_start = cfg.getint("objective", "k")
    k_end = cfg.getint("objective", "k_end")
    strategy = cfg.get("objective", "strategy")
    terms = tuple(cfg.getints("objective", "terms"))
    sqrt_variant = cfg.getbool("objective", "sqrt_variant")
    extras = cfg.getint("objective", "extras")
    batch_size = cfg.getint("training", "batch_size")
    epochs = cfg.getint("training", "epochs")
    label_index = {w: i for i, w in enumerate(train_labels)}
    confusion = obj.ConfusionMatrix(len(train_labels), cfg.getfloat("objective", "confusion_threshold")) \
        if (kind == "triplet" and strategy == "confusion") else None
    by_label: dict = {}
    for idx, (_, s) in enumerate(train_segments):
        by_label.setdefault(s.label, []).append(idx)

    def current_k(batches_done):
        if k_end <= 0:
            return k_start
        return max(k_end, k_start - batches_done)

    def eval_dev():
        if kind == "classifier":
            dev_embs = classifier_embeddings(f, dev_segments, cfg.threads)
        elif contextual:
            dev_embs, labels = embed_dev_contextual(f, ds.dev, ds.dev_align, min_f, max_f, cfg.threads)
            dev_labels = labels
            acoustic = mx.acoustic_ap(dev_embs, dev_labels)
            xv = None
            if g is not None:
                uniq = sorted(set(dev_labels))
                wemb = g.embed_words(uniq, ds.lexicon).values
                xv = mx.cross_view_ap(dev_embs, dev_labels, wemb, uniq)
            return acoustic, xv
        else:
            dev_embs = embed_dev_segments(f, dev_segments, cfg.threads)
        dev_labels = [s.label for _, s in dev_segments]
        acoustic = mx.acoustic_ap(dev_embs, dev_labels)
        xv = None
        if g is not None:
            uniq = sorted(set(dev_labels))
            wemb = g.embed_words(uniq, ds.lexicon).values
            xv = mx.cross_view_ap(dev_embs, dev_labels, wemb, uniq)
        return acoustic, xv

    log_path = os.path.join(outdir, "train_log.jsonl")
    log_file = open(log_path, "w", encoding="utf-8")
    best_snap = _snapshot(params)
    best_metric = None
    batches_done = 0
    history = []

    for epoch in range(epochs):
        epoch_loss = 0.0
        n_batches = 0
        if contextual:
            order = _length_bucketed_batches(
                len(ds.train), [fm.num_frames for fm in ds.train], batch_size, shuffle_rng
            )
        else:
            order = _length_bucketed_batches(
                len(train_segments), [s.length for _, s in train_segments], batch_size, shuffle_rng
            )
        for batch_ids in order:
            nn.zero_grads(params)
            with Tape() as tape:
                if kind == "multiview":
                    loss = _multiview_batch_loss(
                        cfg, f, g, ds, train_segments, batch_ids, contextual, spans,
                        use_augment, margin, current_k(batches_done), k_end, strategy, terms,
                        sqrt_variant, extras, train_labels, sample_rng, dropout_rng,
                        augment_rng, span_rng, min_f, max_f,
                    )
                elif kind == "classifier":
                    frames = [train_segments[i][0].frames[train_segments[i][1].start:train_segments[i][1].end]
                              for i in batch_ids]
                    logits = f.embed_segments_isolated(frames, train=True, rng=dropout_rng)
                    ids = [label_index[train_segments[i][1].label] for i in batch_ids]
                    loss = ad.scale(obj.cross_entropy_batch(logits, ids), 1.0 / len(batch_ids))
                else:  # triplet
                    loss = _triplet_batch_loss(
                        cfg, f, train_segments, batch_ids, by_label, margin, k_start,
                        strategy, confusion, label_index, sample_rng, dropout_rng,
                    )
            tape.backward(loss)
            optimizer.step(params)
            epoch_loss += float(loss.values)
            n_batches += 1
            batches_done += 1
        mean_loss = epoch_loss / max(1, n_batches)

        acoustic, xv = eval_dev()
        metric = xv if (kind == "multiview" and xv is not None) else acoustic
        decision = scheduler.update(metric)
        if loss_rule is not None:
            optimizer.lr = loss_rule.update(mean_loss)
        else:
            optimizer.lr = decision.lr
        if decision.improved or best_metric is None:
            best_metric = metric
            best_snap = _snapshot(params)
        elif decision.reset_to_best:
            _restore(params, best_snap)
        entry = {"epoch": epoch, "loss": mean_loss, "acoustic_ap": acoustic,
                 "cross_view_ap": xv, "lr": optimizer.lr, "metric": metric}
        history.append(entry)
        log_file.write(json.dumps(entry, sort_keys=True) + "\n")
        if confusion is not None:
            confusion.reset()
        if decision.stop:
            break
    log_file.close()

    _restore(params, best_snap)
    ckpt = os.path.join(outdir, "embed.cadp")
    meta = {
        "version": SCHEMA_VERSION,
        "model": "embed",
        "objective": kind,
        "input_dim": input_dim,
        "config": cfg.resolved(),
        "train_labels": train_labels,
        "written_symbols": (g.symbols if g is not None and g.symbol_index is not None else None),
    }
    save_model(ckpt, params, meta)
    report = {
        "checkpoint": ckpt,
        "best_metric": best_metric,
        "epochs_run": len(history),
        "final": history[-1] if history else None,
        "config": cfg.resolved(),
        "version": SCHEMA_VERSION,
    }
    with open(os.path.join(outdir, "train_report.json"), "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=1, sort_keys=True)
    return report


def _multiview_batch_loss(cfg, f, g, ds, train_segments, batch_ids, contextual, spans,
                          use_augment, margin, k, k_end, strategy, terms, sqrt_variant,
                          extras, full_vocab, sample_rng, dropout_rng, augment_rng,
                          span_rng, min_f, max_f):
    if contextual:
        fms = [ds.train[i] for i in batch_ids]
        aligns = [ds.train_align[fm.utterance_id] for fm in fms]
        if use_augment:
            fms = [cp.spec_augment(fm, al, augment_rng) for fm, al in zip(fms, aligns)]
        x, mask, _ = enc.pad_and_mask([fm.frames for fm in fms], f.config.subsample)
        out, _ = f.encode_padded(Tensor(x), mask, train=True, rng=dropout_rng)
        items, labels = [], []
        for row, (fm, al) in enumerate(zip(fms, aligns)):
            if spans:
                sp = cp.merge_spans(al, span_rng)
                entries = [(s, e, " ".join(vs)) for s, e, vs in sp.entries]
            else:
                entries = list(al.entries)
            for s, e, lab in entries:
                if not min_f <= e - s <= max_f:
                    continue
                items.append((row, f.map_start(s), f.map_end(e)))
                labels.append(lab)
        if not items:
            return ad.constant(0.0)
        acoustic = f.project(f.pool_batch(out, items))
    else:
        frames = [train_segments[i][0].frames[train_segments[i][1].start:train_segments[i][1].end]
                  for i in batch_ids]
        labels = [train_segments[i][1].label for i in batch_ids]
        acoustic = f.embed_segments_isolated(frames, train=True, rng=dropout_rng)
    vocab_words = obj.batch_vocabulary(labels, full_vocab, extras, sample_rng)
    if spans:
        # span labels are word sequences; the written view encodes the
        # concatenated symbol sequence of the span
        seqs = [sum((g.resolve(w, ds.lexicon) for w in v.split(" ")), ()) for v in vocab_words]
        word_embs = g.embed_sequences(seqs)
    else:
        word_embs = g.embed_words(vocab_words, ds.lexicon)
    batch = obj.MultiViewBatch(acoustic, labels, vocab_words, word_embs)
    sampling = obj.SamplingConfig(k=k, strategy=strategy, extras=extras)
    loss = obj.multiview_loss(batch, margin, sampling, terms=terms,
                              sqrt_variant=sqrt_variant, rng=sample_rng)
    return ad.scale(loss, 1.0 / max(1, len(labels)))


def _triplet_batch_loss(cfg, f, train_segments, batch_ids, by_label, margin, k,
                        strategy, confusion, label_index, sample_rng, dropout_rng):
    """Siamese triplets: anchors paired with a same-word segment and a
    sampled different-word segment (uniform, confusion-PMF, or the most
    offending of k uniform candidates). Each pair also contributes its
    mirrored triplet."""
    all_labels = list(by_label)
    triplets = []  # (anchor_idx, same_idx, [negative idxs])
    seg_ids = set()
    for i in batch_ids:
        label = train_segments[i][1].label
        pool = by_label[label]
        if len(pool) < 2:
            continue
        j = i
        while j == i:
            j = pool[int(sample_rng.integers(0, len(pool)))]
        if strategy == "offending":
            negs = []
            for _ in range(k):
                lab = label
                while lab == label:
                    lab = all_labels[int(sample_rng.integers(0, len(all_labels)))]
                negs.append(by_label[lab][int(sample_rng.integers(0, len(by_label[lab])))])
        elif strategy == "confusion":
            lab_idx = confusion.sample_different(label_index[label], sample_rng)
            lab = all_labels[lab_idx] if all_labels[lab_idx] != label else None
            if lab is None:
                continue
            negs = [by_label[lab][int(sample_rng.integers(0, len(by_label[lab])))]]
        else:  # uniform
            lab = label
            while lab == label:
                lab = all_labels[int(sample_rng.integers(0, len(all_labels)))]
            negs = [by_label[lab][int(sample_rng.integers(0, len(by_label[lab])))]]
        triplets.append((i, j, negs))
        seg_ids.update([i, j], negs)
    if not triplets:
        return ad.constant(0.0)
    seg_ids = sorted(seg_ids)
    row = {s: r for r, s in enumerate(seg_ids)}
    frames = [train_segments[s][0].frames[train_segments[s][1].start:train_segments[s][1].end]
              for s in seg_ids]
    embs = f.embed_segments_isolated(frames, train=True, rng=dropout_rng)
    losses = []
    for a, s, negs in triplets:
        ea = ad.getitem(embs, row[a])
        es = ad.getitem(embs, row[s])
        if len(negs) == 1:
            ed = ad.getitem(embs, row[negs[0]])
            losses.append(obj.cos_hinge_triplet(ea, es, ed, margin))
            losses.append(obj.cos_hinge_triplet(es, ea, ed, margin))
        else:
            nd = ad.getitem(embs, np.array([row[n] for n in negs], dtype=np.intp))
            losses.append(obj.most_offending_triplet(ea, es, nd, margin))
            losses.append(obj.most_offending_triplet(es, ea, nd, margin))
        if confusion is not None:
            la = label_index[train_segments[a][1].label]
            ld = label_index[train_segments[negs[0]][1].label]
            confusion.update(la, ld, embs.values[row[a]], embs.values[row[s]], embs.values[row[negs[0]]])
    total = losses[0]
    for piece in losses[1:]:
        total = ad.add(total, piece)
    return ad.scale(total, 1.0 / len(losses))


# ---------------------------------------------------------------------------
# Evaluation pipelines


def rebuild_embed_model(checkpoint: str):
    """Reconstruct encoders from a checkpoint and its sidecar metadata."""
    meta = load_model_meta(checkpoint)
    cfg = ExperimentConfig(meta["config"])
    rng = component_rng(cfg.seed, "init")
    f = build_acoustic_encoder(cfg, meta["input_dim"], rng)
    params = f.parameters()
    g = None
    if meta["objective"] == "multiview":
        ds = Dataset([], {}, [], {}, _load_optional_lexicon(cfg), _load_optional_table(cfg))
        g = build_written_encoder(cfg, ds, meta["train_labels"], f, rng)
        params = params + g.parameters()
    nn.assign_from_checkpoint(params, nn.load_checkpoint(checkpoint))
    return f, g, meta, cfg


def _load_optional_lexicon(cfg):
    path = cfg.get("data", "lexicon")
    return cp.load_lexicon(path) if path and os.path.exists(path) else None


def _load_optional_table(cfg):
    path = cfg.get("data", "feature_table")
    return cp.load_feature_table(path) if path and os.path.exists(path) else None


def eval_ap(cfg: ExperimentConfig, checkpoint: str, out_path: str) -> dict:
    """Acoustic (and, for multi-view models, cross-view) AP on the dev set."""
    f, g, meta, _ = rebuild_embed_model(checkpoint)
    ds = load_dataset(cfg)
    min_f = cfg.getint("training", "min_frames")
    max_f = cfg.getint("training", "max_frames")
    dev_segments = collect_segments(ds.dev, ds.dev_align, min_f, max_f)
    contextual = ExperimentConfig(meta["config"]).getbool("objective", "contextual")
    if meta["objective"] == "classifier":
        embs = classifier_embeddings(f, dev_segments, cfg.threads)
        labels = [s.label for _, s in dev_segments]
    elif contextual:
        embs, labels = embed_dev_contextual(f, ds.dev, ds.dev_align, min_f, max_f, cfg.threads)
    else:
        embs = embed_dev_segments(f, dev_segments, cfg.threads)
        labels = [s.label for _, s in dev_segments]
    report = {
        "acoustic_ap": mx.acoustic_ap(embs, labels),
        "num_segments": len(labels),
        "config": cfg.resolved(),
        "version": SCHEMA_VERSION,
    }
    if g is not None:
        uniq = sorted(set(labels))
        wemb = g.embed_words(uniq, ds.lexicon).values
        report["cross_view_ap"] = mx.cross_view_ap(embs, labels, wemb, uniq)
    _write_report(out_path, report)
    return report


def dtw_ap(cfg: ExperimentConfig, out_path: str) -> dict:
    """DTW-on-raw-features AP over the same dev pairs (both with and
    without path-length normalization, since either convention appears
    in practice)."""
    ds = load_dataset(cfg)
    min_f = cfg.getint("training", "min_frames")
    max_f = cfg.getint("training", "max_frames")
    dev_segments = collect_segments(ds.dev, ds.dev_align, min_f, max_f)
    frames = [fm.frames[s.start : s.end] for fm, s in dev_segments]
    labels = [s.label for _, s in dev_segments]
    n = len(frames)
    pairs = [(frames[i], frames[j]) for i in range(n) for j in range(i + 1, n)]
    same = np.array([labels[i] == labels[j] for i in range(n) for j in range(i + 1, n)])

    def run(cfg_dtw):
        chunks = [pairs[i : i + 2000] for i in range(0, len(pairs), 2000)]
        costs = parallel_map(lambda c: dtw_mod.dtw_cost_batch(c, cfg_dtw), chunks, cfg.threads)
        return np.concatenate(costs) if costs else np.zeros(0)

    raw = run(dtw_mod.DtwConfig("cosine", "none"))
    norm = run(dtw_mod.DtwConfig("cosine", "path-length"))
    report = {
        "dtw_ap": mx.average_precision(raw, same),
        "dtw_ap_path_normalized": mx.average_precision(norm, same),
        "num_pairs": len(pairs),
        "config": cfg.resolved(),
        "version": SCHEMA_VERSION,
    }
    _write_report(out_path, report)
    return report


def _write_report(out_path, report: dict):
    os.makedirs(os.path.dirname(os.path.abspath(out_path)) or ".", exist_ok=True)
    with open(out_path, "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=1, sort_keys=True)
    tsv = os.path.splitext(out_path)[0] + ".tsv"
    with open(tsv, "w", encoding="utf-8") as fh:
        fh.write("key\tvalue\n")
        for k, v in sorted(report.items()):
            if isinstance(v, (int, float, str)) or v is None:
                fh.write(f"{k}\t{v}\n")


# ---------------------------------------------------------------------------
# Query-by-example pipelines


def _window_config(cfg: ExperimentConfig) -> srch.WindowConfig:
    sizes = cfg.getints("search", "window_sizes")
    kwargs = {"stride": cfg.getint("search", "stride"),
              "min_ratio": cfg.getfloat("search", "min_ratio"),
              "max_ratio": cfg.getfloat("search", "max_ratio")}
    if sizes:
        kwargs["sizes"] = sizes
    return srch.WindowConfig(**kwargs)


def _embed_windows(f: enc.AcousticEncoder, fm: cp.FrameMatrix, wcfg: srch.WindowConfig):
    windows = srch.generate_windows(fm.num_frames, wcfg)
    if not windows:
        return [], np.zeros((0, f.config.embed_dim))
    x, mask, _ = enc.pad_and_mask([fm.frames], f.config.subsample)
    out, _ = f.encode_padded(Tensor(x), mask)
    items = [(0, f.map_start(s), f.map_end(s + size)) for s, size in windows]
    pooled = f.pool_batch(out, items)
    return windows, f.project(pooled).values


def build_search_index(cfg: ExperimentConfig, checkpoint: str, archive_path: str, out_path: str) -> dict:
    f, _, _, _ = rebuild_embed_model(checkpoint)
    fms = cp.load_feature_archive(archive_path)
    wcfg = _window_config(cfg)
    results = parallel_map(lambda fm: _embed_windows(f, fm, wcfg), fms, cfg.threads)
    refs, embs = [], []
    for fm, (windows, emb) in zip(fms, results):
        for (start, size), row in zip(windows, emb):
            refs.append(srch.SegmentKey(fm.utterance_id, start, size))
            embs.append(row)
    if not refs:
        raise DataError("no windows generated; utterances shorter than the smallest window?")
    index = srch.build_index(np.asarray(embs), refs,
                             bits=cfg.getint("search", "bits"),
                             permutations=cfg.getint("search", "permutations"),
                             seed=cfg.seed)
    srch.save_index(out_path, index)
    report = {"index": str(out_path), "num_segments": len(refs),
              "num_utterances": len(fms), "config": cfg.resolved(), "version": SCHEMA_VERSION}
    _write_report(str(out_path) + ".report.json", report)
    return report


def query_search_index(cfg: ExperimentConfig, checkpoint: str, index_path: str,
                       query_archive: str, query_align_path: str, out_path: str,
                       truth_align_path: str | None = None,
                       search_archive: str | None = None) -> dict:
    """Score every query against every indexed utterance.

    Candidate windows come from beamwidth lookup in the permuted index
    (or all windows with [search] exhaustive = true); each utterance's
    score is the best exact cosine over its admissible candidate windows,
    -1 when it contributed none. With ground-truth alignments for the
    search collection, FOM / OTWV / P@10 and the decision metrics are
    reported, aggregated per query type (median and max)."""
    f, _, _, _ = rebuild_embed_model(checkpoint)
    index = srch.load_index(index_path)
    wcfg = _window_config(cfg)
    beam = cfg.getint("search", "beamwidth")
    exhaustive = cfg.getbool("search", "exhaustive")
    queries = cp.load_feature_archive(query_archive)
    q_align = cp.load_alignments(query_align_path)
    utt_ids = sorted({r.utterance_id for r in index.refs})
    utt_pos = {u: i for i, u in enumerate(utt_ids)}
    by_utt: dict = {u: [] for u in utt_ids}
    for entry, ref in enumerate(index.refs):
        by_utt[ref.utterance_id].append(entry)

    def score_query(q_fm):
        q_emb = f.embed_segments_isolated([q_fm.frames]).values[0]
        ok_sizes = set(wcfg.admissible_sizes(q_fm.num_frames))
        scores = np.full(len(utt_ids), -1.0)
        best_windows = [None] * len(utt_ids)
        if exhaustive:
            candidates = range(index.size)
        else:
            hits = srch.query_index(q_emb, index, beam)
            ref_entry = {(r.utterance_id, r.start, r.size): i for i, r in enumerate(index.refs)}
            candidates = [ref_entry[(r.utterance_id, r.start, r.size)] for r, _ in hits]
        qn = np.linalg.norm(q_emb)
        for entry in candidates:
            ref = index.refs[entry]
            if ref.size not in ok_sizes:
                continue
            e = index.embeddings[entry]
            c = float(e @ q_emb / (np.linalg.norm(e) * qn))
            pos = utt_pos[ref.utterance_id]
            if c > scores[pos]:
                scores[pos] = c
                best_windows[pos] = (ref.start, ref.size)
        return scores, best_windows

    results = parallel_map(score_query, queries, cfg.threads)
    score_matrix = np.stack([r[0] for r in results])
    q_ids = [q.utterance_id for q in queries]
    q_terms = {}
    for q in queries:
        entries = q_align[q.utterance_id].entries
        q_terms[q.utterance_id] = " ".join(v for _, _, v in entries)

    report = {"num_queries": len(q_ids), "num_utterances": len(utt_ids),
              "beamwidth": beam, "exhaustive": exhaustive,
              "config": cfg.resolved(), "version": SCHEMA_VERSION}
    hits_path = os.path.splitext(out_path)[0] + "_hits.tsv"
    with open(hits_path, "w", encoding="utf-8") as fh:
        fh.write("query\tutterance\tscore\twindow_start\twindow_size\n")
        for qi, q in enumerate(q_ids):
            order = np.argsort(-score_matrix[qi], kind="stable")
            for pos in order[:20]:
                win = results[qi][1][pos]
                ws, wz = (win if win else ("", ""))
                fh.write(f"{q}\t{utt_ids[pos]}\t{score_matrix[qi][pos]:.6f}\t{ws}\t{wz}\n")

    if truth_align_path:
        truth_align = cp.load_alignments(truth_align_path)
        hours = 0.0
        if search_archive:
            fms = cp.load_feature_archive(search_archive)
            hours = sum(fm.num_frames / fm.frames_per_second for fm in fms) / 3600.0
        hours = hours or 1.0
        truth = np.zeros((len(q_ids), len(utt_ids)), dtype=bool)
        for qi, q in enumerate(q_ids):
            term = q_terms[q].split(" ")
            for ui, u in enumerate(utt_ids):
                labels = [v for _, _, v in truth_align[u].entries]
                truth[qi, ui] = _contains_subsequence(labels, term)
        qrs = mx.QueryResultSet(q_ids, utt_ids, score_matrix, truth,
                                {q: q_terms[q] for q in q_ids}, hours)
        fom_q = mx.fom_per_query(qrs)
        otwv_q = mx.otwv_per_query(qrs)
        p10_q = mx.p_at_k_per_query(qrs, 10)
        report["fom"] = mx.fom(qrs)
        report["otwv"] = mx.otwv(qrs)
        report["p_at_10"] = mx.p_at_k(qrs, 10)
        report["fom_median_mean"], report["fom_max_mean"] = mx.aggregate_median_max(fom_q, qrs.query_types)
        report["otwv_median_mean"], report["otwv_max_mean"] = mx.aggregate_median_max(otwv_q, qrs.query_types)
        report["p10_median_mean"], report["p10_max_mean"] = mx.aggregate_median_max(p10_q, qrs.query_types)
        flat_scores = score_matrix.ravel()
        flat_truth = truth.ravel()
        if flat_truth.any() and not flat_truth.all():
            report["min_cnxe"] = mx.min_cnxe(flat_scores, flat_truth)
            report["max_twv"] = mx.max_twv(flat_scores, flat_truth)
    _write_report(out_path, report)
    return report


def _contains_subsequence(labels, term):
    if len(term) == 1:
        return term[0] in labels
    for i in range(len(labels) - len(term) + 1):
        if labels[i : i + len(term)] == term:
            return True
    return False
