"""Acoustic-view and written-view encoders plus the word prediction layer.

The acoustic encoder is a stacked bidirectional recurrent network whose
per-frame output is the concatenation of both directions' hidden states
(width 2*hidden). A segment embedding pools those rows over [start, end)
-- "concat" takes the forward state at end-1 next to the backward state
at start, "mean" averages the rows, "attention" uses a softmax over a
learned scoring vector -- and then projects to the embedding dimension.

The written encoder embeds a symbol sequence (characters, phones, or
binary distinctive-feature vectors mapped through a linear layer, i.e.
a sum of feature embeddings), runs one bidirectional recurrent layer,
pools by concatenation of the final states, and projects into the same
space. The projection can be shared with the acoustic encoder.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import nn
from .autodiff import Tensor
from .corpus import FeatureTable, Lexicon, Vocabulary, phones_to_feature_rows


class EncoderError(Exception):
    pass


def pad_and_mask(arrays, pad_multiple: int = 1):
    """Stack variable-length (T_i, D) arrays into (B, T, D) plus a mask."""
    lengths = [a.shape[0] for a in arrays]
    T = max(lengths)
    if pad_multiple > 1:
        T = -(-T // pad_multiple) * pad_multiple
    D = arrays[0].shape[1]
    out = np.zeros((len(arrays), T, D))
    mask = np.zeros((len(arrays), T))
    for i, a in enumerate(arrays):
        out[i, : a.shape[0]] = a
        mask[i, : a.shape[0]] = 1.0
    return out, mask, lengths


def unit_rows(x: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(x, axis=-1, keepdims=True)
    return x / np.where(norms > 0, norms, 1.0)


# ---------------------------------------------------------------------------
# Pooling


def pool_segment(outputs, start: int, end: int, mode: str, attention_vector: Tensor | None = None) -> Tensor:
    """Pre-projection embedding of one [start, end) slice of frame outputs.

    outputs has shape (T, W) with W even: columns [:W/2] are the forward
    direction, [W/2:] the backward direction.
    """
    if isinstance(outputs, np.ndarray):
        outputs = Tensor(outputs)
    T, W = outputs.values.shape
    if not 0 <= start < end <= T:
        raise EncoderError(f"empty or out-of-range segment [{start}, {end})")
    if mode == "concat":
        h = W // 2
        fw = ad.getitem(outputs, (end - 1, slice(0, h)))
        bw = ad.getitem(outputs, (start, slice(h, W)))
        return ad.concat([fw, bw], axis=0)
    if mode == "mean":
        return ad.mean(ad.getitem(outputs, slice(start, end)), axis=0)
    if mode == "attention":
        if attention_vector is None:
            raise EncoderError("attention pooling needs its scoring vector")
        rows = ad.getitem(outputs, slice(start, end))
        scores = ad.matmul(rows, ad.reshape(attention_vector, (W, 1)))
        weights = ad.softmax(ad.reshape(scores, (end - start,)), axis=0)
        return ad.reshape(ad.matmul(ad.reshape(weights, (1, end - start)), rows), (W,))
    raise EncoderError(f"unknown pooling mode {mode!r}")


# ---------------------------------------------------------------------------
# Acoustic encoder


@dataclass
class AcousticEncoderConfig:
    input_dim: int
    cell: str = "lstm"  # lstm | gru
    layers: int = 2
    hidden: int = 128  # per direction
    dropout: float = 0.0
    pooling: str = "concat"  # concat | mean | attention
    embed_dim: int = 64
    subsample: int = 1  # mean-pool stride over frame outputs
    fc_layers: int = 0  # optional ReLU stack before the projection
    fc_dim: int = 256

    def __post_init__(self):
        if self.cell not in ("lstm", "gru"):
            raise EncoderError(f"unknown cell {self.cell!r}")
        if self.pooling not in ("concat", "mean", "attention"):
            raise EncoderError(f"unknown pooling {self.pooling!r}")
        if self.subsample < 1:
            raise EncoderError("subsample stride must be >= 1")


class AcousticEncoder:
    """Stacked bidirectional recurrent encoder with pooling + projection."""

    def __init__(self, config: AcousticEncoderConfig, rng: np.random.Generator, name: str = "f"):
        self.config = config
        self.name = name
        make = nn.LstmParams.create if config.cell == "lstm" else nn.GruParams.create
        self.cells = []
        in_dim = config.input_dim
        for layer in range(config.layers):
            fw = make(f"{name}.layer{layer}.fw", in_dim, config.hidden, rng)
            bw = make(f"{name}.layer{layer}.bw", in_dim, config.hidden, rng)
            self.cells.append((fw, bw))
            in_dim = 2 * config.hidden
        self.frame_width = 2 * config.hidden
        self.attention_vector = None
        if config.pooling == "attention":
            self.attention_vector = nn.Parameter(
                f"{name}.attention", np.zeros(self.frame_width)
            )
        self.fc = []
        fc_in = self.frame_width
        for i in range(config.fc_layers):
            w = nn.Parameter(f"{name}.fc{i}.w", uniform_fc(rng, fc_in, config.fc_dim))
            b = nn.Parameter(f"{name}.fc{i}.b", np.zeros(config.fc_dim))
            self.fc.append((w, b))
            fc_in = config.fc_dim
        self.proj_w = nn.Parameter(f"{name}.proj.w", uniform_fc(rng, fc_in, config.embed_dim))
        self.proj_b = nn.Parameter(f"{name}.proj.b", np.zeros(config.embed_dim))

    def parameters(self) -> list[nn.Parameter]:
        out = []
        for fw, bw in self.cells:
            out.extend(fw.parameters())
            out.extend(bw.parameters())
        if self.attention_vector is not None:
            out.append(self.attention_vector)
        for w, b in self.fc:
            out.extend([w, b])
        out.extend([self.proj_w, self.proj_b])
        return out

    # -- frame-level forward

    def encode_padded(self, x: Tensor, mask: np.ndarray, train: bool = False,
                      rng: np.random.Generator | None = None):
        """(B, T, D) -> (B, T', 2*hidden) frame outputs plus the new mask.

        With subsample > 1, consecutive groups of `subsample` frames are
        mean-pooled (normalized by the number of real frames per group),
        so per-utterance outputs do not depend on batch padding.
        """
        h = x
        for layer, (fw_p, bw_p) in enumerate(self.cells):
            fw = nn.run_recurrent_layer(fw_p, h, mask)
            bw = nn.run_recurrent_layer(bw_p, h, mask, reverse=True)
            h = ad.concat([fw, bw], axis=2)
            if train and self.config.dropout > 0 and layer < len(self.cells) - 1:
                h = ad.dropout(h, self.config.dropout, rng, train=True)
        q = self.config.subsample
        if q == 1:
            return h, mask
        B, T, W = h.values.shape
        if T % q:
            raise EncoderError("padded length must be a multiple of the subsample stride")
        grouped = ad.sum_(ad.reshape(h, (B, T // q, q, W)), axis=2)
        counts = mask.reshape(B, T // q, q).sum(axis=2)
        inv = np.where(counts > 0, 1.0 / np.where(counts > 0, counts, 1.0), 0.0)
        out = ad.mul_const(grouped, inv[:, :, None])
        return out, (counts > 0).astype(np.float64)

    def encode_utterance(self, frames: np.ndarray) -> np.ndarray:
        """Frame outputs for a single utterance (inference path)."""
        x, mask, _ = pad_and_mask([np.asarray(frames, dtype=np.float64)], self.config.subsample)
        out, out_mask = self.encode_padded(Tensor(x), mask)
        T = int(out_mask[0].sum())
        return out.values[0, :T]

    # -- boundary bookkeeping for subsampled outputs

    def map_start(self, s: int) -> int:
        return s // self.config.subsample

    def map_end(self, e: int) -> int:
        return -(-e // self.config.subsample)

    # -- pooling + projection

    def project(self, pooled: Tensor) -> Tensor:
        h = pooled
        for w, b in self.fc:
            h = ad.relu(ad.affine(h, w.tensor, b.tensor))
        return ad.affine(h, self.proj_w.tensor, self.proj_b.tensor)

    def pool_batch(self, outputs: Tensor, segments) -> Tensor:
        """Pool many segments out of batched frame outputs.

        ``segments`` is a list of (batch_row, start, end) in *output* frame
        coordinates (already subsample-mapped). Returns (n, W) pooled rows.
        """
        mode = self.config.pooling
        if mode == "concat":
            h = self.frame_width // 2
            b_idx = np.array([b for b, _, _ in segments], dtype=np.intp)
            s_idx = np.array([s for _, s, _ in segments], dtype=np.intp)
            e_idx = np.array([e for _, _, e in segments], dtype=np.intp)
            fw = ad.getitem(outputs, (b_idx, e_idx - 1, slice(0, h)))
            bw = ad.getitem(outputs, (b_idx, s_idx, slice(h, 2 * h)))
            return ad.concat([fw, bw], axis=1)
        pooled = []
        r = self.attention_vector.tensor if self.attention_vector is not None else None
        for b, s, e in segments:
            rows = ad.getitem(outputs, (b, slice(s, e)))
            if mode == "mean":
                pooled.append(ad.mean(rows, axis=0))
            else:
                scores = ad.reshape(ad.matmul(rows, ad.reshape(r, (self.frame_width, 1))), (e - s,))
                w = ad.softmax(scores, axis=0)
                pooled.append(ad.reshape(ad.matmul(ad.reshape(w, (1, e - s)), rows), (self.frame_width,)))
        return ad.stack(pooled, axis=0)

    def pool_all_segments(self, outputs: Tensor, max_len: int):
        """Pool every segment (start t, length s <= max_len) of one
        utterance's (T, W) frame outputs.

        Returns (pooled, index): pooled is (n, W) in length-major order
        (all length-1 segments by start, then length-2, ...); index is a
        (T, max_len) int grid mapping (t, s-1) to the pooled row, -1 where
        t + s exceeds T.
        """
        T, W = outputs.values.shape
        S = min(max_len, T)
        index = np.full((T, max_len), -1, dtype=np.intp)
        row = 0
        for s in range(1, S + 1):
            n = T - s + 1
            index[:n, s - 1] = np.arange(row, row + n)
            row += n
        mode = self.config.pooling
        blocks = []
        if mode == "concat":
            h = W // 2
            for s in range(1, S + 1):
                fw = ad.getitem(outputs, (slice(s - 1, T), slice(0, h)))
                bw = ad.getitem(outputs, (slice(0, T - s + 1), slice(h, W)))
                blocks.append(ad.concat([fw, bw], axis=1))
        elif mode == "mean":
            # window sums as differences of one cumulative sum
            cum0 = ad.concat([ad.constant(np.zeros((1, W))), ad.cumsum_rows(outputs)], axis=0)
            for s in range(1, S + 1):
                hi = ad.getitem(cum0, slice(s, T + 1))
                lo = ad.getitem(cum0, slice(0, T - s + 1))
                blocks.append(ad.scale(ad.sub(hi, lo), 1.0 / s))
        else:  # attention
            r = self.attention_vector.tensor
            scores = ad.reshape(ad.matmul(outputs, ad.reshape(r, (W, 1))), (T,))
            for s in range(1, S + 1):
                n = T - s + 1
                win = np.arange(s)[None, :] + np.arange(n)[:, None]  # (n, s)
                w8 = ad.softmax(ad.getitem(scores, win), axis=1)
                rows = ad.getitem(outputs, win.reshape(-1))  # (n*s, W)
                prod = ad.row_scale(rows, ad.reshape(w8, (n * s,)))
                blocks.append(ad.sum_(ad.reshape(prod, (n, s, W)), axis=1))
        return ad.concat(blocks, axis=0), index

    def embed_segments_isolated(self, segment_frames, train: bool = False,
                                rng: np.random.Generator | None = None) -> Tensor:
        """Embed isolated word segments (each encoded on its own): (n, d)."""
        x, mask, lengths = pad_and_mask(
            [np.asarray(f, dtype=np.float64) for f in segment_frames], self.config.subsample
        )
        outputs, out_mask = self.encode_padded(Tensor(x), mask, train=train, rng=rng)
        segs = [(i, 0, int(out_mask[i].sum())) for i in range(len(lengths))]
        return self.project(self.pool_batch(outputs, segs))


def uniform_fc(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    return nn.uniform_init(rng, (fan_in, fan_out), fan_in)


# ---------------------------------------------------------------------------
# Written encoder


@dataclass
class WrittenEncoderConfig:
    mode: str = "char"  # char | phone | feature
    symbol_embed_dim: int = 64
    cell: str = "lstm"
    hidden: int = 128
    embed_dim: int = 64

    def __post_init__(self):
        if self.mode not in ("char", "phone", "feature"):
            raise EncoderError(f"unknown written-encoder mode {self.mode!r}")


class WrittenEncoder:
    """Symbol-sequence encoder: embedding, 1-layer bi-RNN, concat pooling,
    projection. In feature mode each phone's binary feature vector passes
    through a bias-free linear map (a sum of feature-value embeddings)."""

    def __init__(
        self,
        config: WrittenEncoderConfig,
        rng: np.random.Generator,
        symbols: list[str] | None = None,
        feature_table: FeatureTable | None = None,
        name: str = "g",
        shared_projection: tuple[nn.Parameter, nn.Parameter] | None = None,
    ):
        self.config = config
        self.name = name
        self.feature_table = feature_table
        if config.mode == "feature":
            if feature_table is None:
                raise EncoderError("feature mode needs a feature table")
            self.symbol_index = None
            self.embed_table = nn.Parameter(
                f"{name}.feature_embed",
                nn.normal_init(rng, (feature_table.num_features, config.symbol_embed_dim)),
            )
        else:
            if not symbols:
                raise EncoderError("char/phone mode needs a symbol inventory")
            self.symbols = sorted(symbols)
            self.symbol_index = {s: i for i, s in enumerate(self.symbols)}
            self.embed_table = nn.Parameter(
                f"{name}.symbol_embed", nn.normal_init(rng, (len(self.symbols), config.symbol_embed_dim))
            )
        make = nn.LstmParams.create if config.cell == "lstm" else nn.GruParams.create
        self.fw = make(f"{name}.rnn.fw", config.symbol_embed_dim, config.hidden, rng)
        self.bw = make(f"{name}.rnn.bw", config.symbol_embed_dim, config.hidden, rng)
        self.width = 2 * config.hidden
        if shared_projection is not None:
            self.proj_w, self.proj_b = shared_projection
            if self.proj_w.values.shape != (self.width, config.embed_dim):
                raise EncoderError("shared projection has incompatible shape")
            self.owns_projection = False
        else:
            self.proj_w = nn.Parameter(f"{name}.proj.w", uniform_fc(rng, self.width, config.embed_dim))
            self.proj_b = nn.Parameter(f"{name}.proj.b", np.zeros(config.embed_dim))
            self.owns_projection = True

    def parameters(self) -> list[nn.Parameter]:
        out = [self.embed_table] + self.fw.parameters() + self.bw.parameters()
        if self.owns_projection:
            out.extend([self.proj_w, self.proj_b])
        return out

    def resolve(self, word: str, lexicon: Lexicon | None) -> tuple:
        """Word -> symbol sequence for the configured input mode."""
        if self.config.mode == "char":
            seq = tuple(word)
        else:
            if lexicon is None or word not in lexicon:
                raise EncoderError(f"word {word!r} not resolvable through the lexicon")
            seq = lexicon[word]
        if not seq:
            raise EncoderError(f"word {word!r} resolves to an empty sequence")
        return seq

    def _sequence_inputs(self, seqs) -> tuple[Tensor, np.ndarray]:
        """Symbol sequences -> (n, L, E) embedded inputs plus mask."""
        n = len(seqs)
        L = max(len(s) for s in seqs)
        mask = np.zeros((n, L))
        for i, s in enumerate(seqs):
            mask[i, : len(s)] = 1.0
        E = self.config.symbol_embed_dim
        if self.config.mode == "feature":
            F = self.feature_table.num_features
            rows = np.zeros((n, L, F))
            for i, s in enumerate(seqs):
                rows[i, : len(s)] = phones_to_feature_rows(s, self.feature_table)
            flat = ad.matmul(Tensor(rows.reshape(n * L, F)), self.embed_table.tensor)
        else:
            ids = np.zeros((n, L), dtype=np.intp)
            for i, s in enumerate(seqs):
                for j, sym in enumerate(s):
                    if sym not in self.symbol_index:
                        raise EncoderError(f"symbol {sym!r} not in inventory")
                    ids[i, j] = self.symbol_index[sym]
            flat = ad.embedding_lookup(self.embed_table.tensor, ids.reshape(-1))
        return ad.reshape(flat, (n, L, E)), mask

    def embed_sequences(self, seqs) -> Tensor:
        """Embed resolved symbol sequences: (n, d)."""
        x, mask = self._sequence_inputs(seqs)
        fw_out = nn.run_recurrent_layer(self.fw, x, mask)
        bw_out = nn.run_recurrent_layer(self.bw, x, mask, reverse=True)
        n = len(seqs)
        last = np.array([int(mask[i].sum()) - 1 for i in range(n)], dtype=np.intp)
        rows = np.arange(n, dtype=np.intp)
        fw_final = ad.getitem(fw_out, (rows, last))
        bw_first = ad.getitem(bw_out, (rows, np.zeros(n, dtype=np.intp)))
        pooled = ad.concat([fw_final, bw_first], axis=1)
        return ad.affine(pooled, self.proj_w.tensor, self.proj_b.tensor)

    def embed_words(self, words, lexicon: Lexicon | None = None) -> Tensor:
        return self.embed_sequences([self.resolve(w, lexicon) for w in words])

    def embed_word(self, word: str, lexicon: Lexicon | None = None) -> np.ndarray:
        """Deterministic single-word embedding (inference)."""
        return self.embed_words([word], lexicon).values[0]


# ---------------------------------------------------------------------------
# Prediction layer


class PredictionLayer:
    """Word scoring matrix W (|V| x d) and bias b (|V|).

    static: rows are free parameters (optionally frozen after init).
    dynamic: rows are produced by the written encoder on demand, so
    gradients flow into it and the vocabulary can be rebuilt at any time.
    """

    def __init__(self, vocab: Vocabulary, embed_dim: int, mode: str = "static",
                 rng: np.random.Generator | None = None, name: str = "pred",
                 unit_normalized: bool = False):
        if mode not in ("static", "dynamic"):
            raise EncoderError(f"unknown prediction-layer mode {mode!r}")
        self.vocab = vocab
        self.embed_dim = embed_dim
        self.mode = mode
        self.name = name
        self.unit_normalized = unit_normalized
        self.written_encoder: WrittenEncoder | None = None
        self.lexicon: Lexicon | None = None
        if mode == "static":
            if rng is None:
                raise EncoderError("static layer needs an rng for initialization")
            w = nn.normal_init(rng, (vocab.size, embed_dim)) / np.sqrt(embed_dim)
            self.w = nn.Parameter(f"{name}.w", w)
        else:
            self.w = None
        self.b = nn.Parameter(f"{name}.b", np.zeros(vocab.size))
        self.base_size = vocab.size  # rows beyond this are extension rows

    @staticmethod
    def from_written_encoder(vocab: Vocabulary, g: WrittenEncoder, lexicon: Lexicon | None,
                             mode: str, rng: np.random.Generator,
                             unit_normalize: bool = True, name: str = "pred") -> "PredictionLayer":
        """Initialize from written-view embeddings.

        static: rows are copies of g(v) (unit-normalized when requested);
        reserved UNK rows are random. dynamic: rows are produced by g live.
        """
        pl = PredictionLayer(vocab, g.config.embed_dim, mode=mode, rng=rng,
                             name=name, unit_normalized=unit_normalize)
        pl.written_encoder = g
        pl.lexicon = lexicon
        if mode == "static":
            embeddable = [v for v in vocab.labels if v != vocab.unk_token]
            embs = g.embed_words(embeddable, lexicon).values
            if unit_normalize:
                embs = unit_rows(embs)
                pl.w.values[...] = unit_rows(pl.w.values)
            for word, row in zip(embeddable, embs):
                pl.w.values[vocab.index(word)] = row
        elif vocab.unk_token is not None:
            pl.init_dynamic_unk(rng)
        return pl

    def parameters(self) -> list[nn.Parameter]:
        out = [self.w, self.b] if self.mode == "static" else [self.b]
        if hasattr(self, "_unk_row"):
            out.append(self._unk_row)
        return out

    def freeze(self):
        """Freeze the weight rows (biases stay trainable)."""
        if self.mode != "static":
            raise EncoderError("only a static layer can be frozen")
        self.w.frozen = True

    def weight_tensor(self) -> Tensor:
        """The (|V|, d) weight matrix as an autodiff tensor."""
        if self.mode == "static":
            return self.w.tensor
        embs = self.written_encoder.embed_words(
            [v for v in self.vocab.labels if v != self.vocab.unk_token], self.lexicon
        )
        if self.vocab.unk_token is None:
            return embs
        # reserved UNK row is a free parameter even in dynamic mode
        if not hasattr(self, "_unk_row"):
            raise EncoderError("dynamic layer with UNK needs init_dynamic_unk()")
        return ad.concat([embs, ad.reshape(self._unk_row.tensor, (1, self.embed_dim))], axis=0)

    def init_dynamic_unk(self, rng: np.random.Generator):
        self._unk_row = nn.Parameter(f"{self.name}.unk", nn.normal_init(rng, self.embed_dim) / np.sqrt(self.embed_dim))

    def rows(self) -> np.ndarray:
        return self.weight_tensor().values


def extend_vocabulary(pl: PredictionLayer, g: WrittenEncoder, new_words,
                      lexicon: Lexicon | None = None) -> PredictionLayer:
    """Append rows g(w) for new words; existing rows are untouched and new
    biases are zero. New rows are unit-normalized when the layer was
    initialized unit-normalized. Duplicates are rejected."""
    new_words = list(new_words)
    for w in new_words:
        if w in pl.vocab:
            raise EncoderError(f"word {w!r} already in the vocabulary")
    if len(set(new_words)) != len(new_words):
        raise EncoderError("duplicate words in the extension")
    if pl.mode != "static":
        raise EncoderError("extension applies to static (frozen) layers")
    lexicon = lexicon if lexicon is not None else pl.lexicon
    out = PredictionLayer.__new__(PredictionLayer)
    out.vocab = _extended_vocab(pl.vocab, new_words)
    out.embed_dim = pl.embed_dim
    out.mode = "static"
    out.name = pl.name
    out.unit_normalized = pl.unit_normalized
    out.written_encoder = g
    out.lexicon = lexicon
    rows = pl.w.values
    if new_words:
        new_rows = g.embed_words(new_words, lexicon).values
        if pl.unit_normalized:
            new_rows = unit_rows(new_rows)
        rows = np.concatenate([rows, new_rows], axis=0)
    out.w = nn.Parameter(f"{pl.name}.w", rows.copy())
    out.w.frozen = True
    out.b = nn.Parameter(f"{pl.name}.b", np.concatenate([pl.b.values, np.zeros(len(new_words))]))
    out.base_size = pl.base_size  # chained extensions keep the original base
    return out


def _extended_vocab(vocab: Vocabulary, new_words) -> Vocabulary:
    ext = Vocabulary.__new__(Vocabulary)
    ext.labels = vocab.labels + list(new_words)
    ext.unk_token = vocab.unk_token
    ext._index = {w: i for i, w in enumerate(ext.labels)}
    return ext
