"""Sequence autoencoder with a concept-triplet structured embedding space.

The encoder runs a GRU over word vectors and projects its last hidden state
to the shared d-dimensional space; the decoder reconstructs the sentence
from that point, teacher forced during training.  The triplet term pulls
sentences that share two or more concepts together and pushes zero-overlap
sentences apart, so the space organizes by visual content rather than by
grammar alone.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .corpus import BOS, EOS, PAD, PairIndex, SentenceRecord, sample_triplet
from .errors import TrainingDiverged, ValidationError
from .nn import Adam, ParameterStore
from .nn import ops
from .seeding import substream

log = logging.getLogger(__name__)


@dataclass
class LMConfig:
    word_dim: int = 200
    hidden: int = 200
    embed_dim: int = 256
    margin: float = 0.5
    lambda_t: float = 0.1
    batch: int = 64
    lr_enc: float = 1e-4
    lr_dec: float = 1e-3

    def __post_init__(self):
        for name in ("word_dim", "hidden", "embed_dim", "batch"):
            if getattr(self, name) <= 0:
                raise ValidationError(f"LMConfig.{name} must be positive")
        if self.margin <= 0:
            raise ValidationError("LMConfig.margin must be positive")


GRU_SUFFIXES = ("Wr", "Ur", "br", "Wz", "Uz", "bz", "Wh", "Uh", "bh")

# block-name prefixes for the two Adam groups; the shared word-embedding
# table trains with the encoder group during LM training and is frozen
# during alignment
ENCODER_BLOCKS = ("embed.E", "enc.")
DECODER_BLOCKS = ("dec.",)


def _add_gru(store: ParameterStore, prefix: str, in_dim: int, hid: int) -> None:
    for gate in ("r", "z", "h"):
        store.add(f"{prefix}.W{gate}", (hid, in_dim))
        store.add(f"{prefix}.U{gate}", (hid, hid))
        store.add(f"{prefix}.b{gate}", (hid,), init="zeros")


def _gru_weights(store: ParameterStore, prefix: str) -> ops.GruWeights:
    return ops.GruWeights(*(store[f"{prefix}.{s}"].value for s in GRU_SUFFIXES))


def _accumulate_gru(store: ParameterStore, prefix: str, grads: ops.GruGrads) -> None:
    for suffix, grad in zip(GRU_SUFFIXES, grads):
        store[f"{prefix}.{suffix}"].grad += grad


def init_lm_store(
    vocab_size: int,
    cfg: LMConfig,
    seed: int,
    dtype=np.float32,
    word_vectors: np.ndarray | None = None,
) -> ParameterStore:
    """All learnable blocks of encoder f and decoder g (plus shared embeddings).

    word_vectors, when given, seeds embed.E with pretrained rows instead of
    the default uniform init.
    """
    store = ParameterStore(seed=seed, dtype=dtype)
    if word_vectors is not None:
        if word_vectors.shape != (vocab_size, cfg.word_dim):
            raise ValidationError(
                f"pretrained word vectors have shape {word_vectors.shape}, "
                f"expected {(vocab_size, cfg.word_dim)}"
            )
        store.add("embed.E", (vocab_size, cfg.word_dim), init=word_vectors)
    else:
        store.add("embed.E", (vocab_size, cfg.word_dim))
    _add_gru(store, "enc.gru", cfg.word_dim, cfg.hidden)
    store.add("enc.proj.W", (cfg.embed_dim, cfg.hidden))
    store.add("enc.proj.b", (cfg.embed_dim,), init="zeros")
    store.add("dec.init.W", (cfg.hidden, cfg.embed_dim))
    store.add("dec.init.b", (cfg.hidden,), init="zeros")
    _add_gru(store, "dec.gru", cfg.word_dim, cfg.hidden)
    store.add("dec.out.W", (vocab_size, cfg.hidden))
    store.add("dec.out.b", (vocab_size,), init="zeros")
    return store


def group_names(store: ParameterStore, prefixes) -> list[str]:
    return [n for n in store.names() if any(n == p or n.startswith(p) for p in prefixes)]


def load_word_vectors(path, vocab, word_dim: int, seed: int = 0) -> np.ndarray:
    """Read GloVe-style text ("token v1 .. vD" per line) into an embedding
    matrix aligned with the vocabulary.  Tokens absent from the file keep
    the default uniform init; file tokens outside the vocabulary are skipped.
    """
    from .nn import glorot_limit

    rng = substream(seed, "word-vectors")
    a = glorot_limit((len(vocab), word_dim))
    matrix = rng.uniform(-a, a, size=(len(vocab), word_dim))
    found = 0
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.rstrip("\n").split()
            if not parts:
                continue
            token, values = parts[0], parts[1:]
            idx = vocab.token_to_id.get(token)
            if idx is None:
                continue
            if len(values) != word_dim:
                raise ValidationError(
                    f"{path}:{lineno}: expected {word_dim} components, got {len(values)}"
                )
            matrix[idx] = [float(v) for v in values]
            found += 1
    log.info("word vectors: %d of %d vocabulary tokens covered", found, len(vocab))
    return matrix


def pad_batch(token_lists: list[list[int]], dtype=np.int64) -> tuple[np.ndarray, np.ndarray]:
    """Right-pad to the longest sequence; returns (ids (B, T), lengths (B,))."""
    lengths = np.array([len(t) for t in token_lists], dtype=np.int64)
    T = int(lengths.max())
    ids = np.full((len(token_lists), T), PAD, dtype=dtype)
    for i, toks in enumerate(token_lists):
        ids[i, : len(toks)] = toks
    return ids, lengths


class SentenceEncoder:
    """GRU over word vectors; last real hidden state projected to d dims."""

    def __init__(self, store: ParameterStore, cfg: LMConfig):
        self.store = store
        self.cfg = cfg

    def forward(self, ids: np.ndarray, lengths: np.ndarray):
        store = self.store
        E = store["embed.E"].value
        w = _gru_weights(store, "enc.gru")
        B, T = ids.shape
        x, _ = ops.embedding_forward(ids, E)
        h = np.zeros((B, self.cfg.hidden), dtype=E.dtype)
        caches = []
        states = np.zeros((B, T, self.cfg.hidden), dtype=E.dtype)
        for t in range(T):
            h, cache = ops.gru_cell_forward(x[:, t, :], h, w)
            caches.append(cache)
            states[:, t, :] = h
        last = states[np.arange(B), lengths - 1, :]
        emb, proj_cache = ops.linear_forward(last, store["enc.proj.W"].value, store["enc.proj.b"].value)
        return emb, (ids, lengths, caches, proj_cache, B, T)

    def backward(self, demb: np.ndarray, cache) -> None:
        store = self.store
        ids, lengths, caches, proj_cache, B, T = cache
        w = _gru_weights(store, "enc.gru")
        dlast, dW, db = ops.linear_backward(demb, proj_cache)
        store["enc.proj.W"].grad += dW
        store["enc.proj.b"].grad += db

        dE = store["embed.E"].grad
        dx_steps = np.zeros((B, T, self.cfg.word_dim), dtype=demb.dtype)
        dh = np.zeros((B, self.cfg.hidden), dtype=demb.dtype)
        for t in range(T - 1, -1, -1):
            # inject the projection gradient at each row's final real step;
            # padded steps carry zero upstream and stay zero
            at_end = lengths - 1 == t
            if at_end.any():
                dh[at_end] += dlast[at_end]
            dx, dh, grads = ops.gru_cell_backward(dh, caches[t], w)
            dx_steps[:, t, :] = dx
            _accumulate_gru(store, "enc.gru", grads)
        ops.embedding_backward(dx_steps, ids, dE)


class SentenceDecoder:
    """Teacher-forced reconstruction and single-step decoding for search."""

    def __init__(self, store: ParameterStore, cfg: LMConfig):
        self.store = store
        self.cfg = cfg

    def teacher_forced(self, emb: np.ndarray, targets: np.ndarray, inputs: np.ndarray):
        """Mean per-word NLL of targets given emb; pads are masked out.

        inputs is targets shifted right behind a bos column (gold history).
        """
        store = self.store
        E = store["embed.E"].value
        w = _gru_weights(store, "dec.gru")
        B, T = targets.shape
        h, init_cache = ops.linear_forward(emb, store["dec.init.W"].value, store["dec.init.b"].value)
        x, _ = ops.embedding_forward(inputs, E)
        mask = (targets != PAD).astype(E.dtype)

        caches = []
        states = np.zeros((B, T, self.cfg.hidden), dtype=E.dtype)
        for t in range(T):
            h, cache = ops.gru_cell_forward(x[:, t, :], h, w)
            caches.append(cache)
            states[:, t, :] = h
        flat_states = states.reshape(B * T, self.cfg.hidden)
        logits, out_cache = ops.linear_forward(flat_states, store["dec.out.W"].value, store["dec.out.b"].value)
        loss, dlogits = ops.softmax_cross_entropy(logits, targets.reshape(-1), mask.reshape(-1))
        cache = (inputs, caches, init_cache, out_cache, dlogits, B, T)
        return float(loss), logits.reshape(B, T, -1), cache

    def backward(self, cache, scale: float = 1.0) -> np.ndarray:
        """Backprop the cached CE loss; returns d(loss)/d(emb) * scale."""
        store = self.store
        inputs, caches, init_cache, out_cache, dlogits, B, T = cache
        w = _gru_weights(store, "dec.gru")
        dflat, dWout, dbout = ops.linear_backward(dlogits * scale, out_cache)
        store["dec.out.W"].grad += dWout
        store["dec.out.b"].grad += dbout
        dstates = dflat.reshape(B, T, self.cfg.hidden)

        dx_steps = np.zeros((B, T, self.cfg.word_dim), dtype=dflat.dtype)
        dh = np.zeros((B, self.cfg.hidden), dtype=dflat.dtype)
        for t in range(T - 1, -1, -1):
            dh = dh + dstates[:, t, :]
            dx, dh, grads = ops.gru_cell_backward(dh, caches[t], w)
            dx_steps[:, t, :] = dx
            _accumulate_gru(store, "dec.gru", grads)
        ops.embedding_backward(dx_steps, inputs, store["embed.E"].grad)

        demb, dWi, dbi = ops.linear_backward(dh, init_cache)
        store["dec.init.W"].grad += dWi
        store["dec.init.b"].grad += dbi
        return demb

    def initial_state(self, emb: np.ndarray) -> np.ndarray:
        h, _ = ops.linear_forward(emb, self.store["dec.init.W"].value, self.store["dec.init.b"].value)
        return h

    def step(self, h: np.ndarray, token_ids: np.ndarray):
        """Consume one token; returns (log-probs over vocab, new state)."""
        store = self.store
        x = store["embed.E"].value[token_ids]
        h_new, _ = ops.gru_cell_forward(x, h, _gru_weights(store, "dec.gru"))
        logits, _ = ops.linear_forward(h_new, store["dec.out.W"].value, store["dec.out.b"].value)
        return ops.log_softmax(logits), h_new


def triplet_loss(t: np.ndarray, t_pos: np.ndarray, t_neg: np.ndarray, margin: float):
    """max(0, ||t - t+||^2 - ||t - t-||^2 + m), batched over rows.

    Returns (per-row losses, cache for triplet_backward).
    """
    d_pos = ops.l2sq_rows(t, t_pos)
    d_neg = ops.l2sq_rows(t, t_neg)
    raw = d_pos - d_neg + margin
    losses = np.maximum(raw, 0.0)
    return losses, (t, t_pos, t_neg, raw > 0)


def triplet_backward(dlosses: np.ndarray, cache):
    """Gradients wrt the three embeddings; inactive rows contribute zero."""
    t, t_pos, t_neg, active = cache
    scale = (dlosses * active)[:, None]
    dt = scale * 2.0 * ((t - t_pos) - (t - t_neg))
    dt_pos = scale * -2.0 * (t - t_pos)
    dt_neg = scale * 2.0 * (t - t_neg)
    return dt, dt_pos, dt_neg


@dataclass
class LMEpochLog:
    epoch: int
    loss_ce: float
    loss_triplet: float
    ratio_intra_inter: float


@dataclass
class LMTrainResult:
    store: ParameterStore
    log: list[LMEpochLog] = field(default_factory=list)


def _records_batchable(records: list[SentenceRecord]) -> None:
    for rec in records:
        if rec.length < 1:
            raise ValidationError(f"sentence {rec.id} is empty")


def encode_records(
    store: ParameterStore, cfg: LMConfig, records: list[SentenceRecord], batch: int = 128
) -> np.ndarray:
    """Embed every sentence; rows follow record order."""
    encoder = SentenceEncoder(store, cfg)
    out = np.zeros((len(records), cfg.embed_dim), dtype=store.dtype)
    for start in range(0, len(records), batch):
        chunk = records[start : start + batch]
        ids, lengths = pad_batch([r.tokens for r in chunk])
        emb, _ = encoder.forward(ids, lengths)
        out[start : start + len(chunk)] = emb
    return out


def _pair_distance_ratio(
    embeddings: np.ndarray, pairs_pos: np.ndarray, pairs_neg: np.ndarray
) -> float:
    """Mean L2 over sampled positive pairs / mean L2 over sampled negative pairs."""
    if len(pairs_pos) == 0 or len(pairs_neg) == 0:
        return float("nan")
    d_pos = np.linalg.norm(embeddings[pairs_pos[:, 0]] - embeddings[pairs_pos[:, 1]], axis=1)
    d_neg = np.linalg.norm(embeddings[pairs_neg[:, 0]] - embeddings[pairs_neg[:, 1]], axis=1)
    denom = float(d_neg.mean())
    return float(d_pos.mean()) / denom if denom > 0 else float("nan")


def _monitor_pairs(index: PairIndex, seed: int, cap: int = 512):
    """A fixed sample of positive/negative pairs reused for every epoch's log."""
    rng = substream(seed, "lm-ratio-monitor")
    anchors = index.triplet_anchor_ids()
    pos, neg = [], []
    for j in anchors[: cap * 2]:
        pos.append((j, index.sample_positive(j, rng)))
        neg.append((j, index.sample_negative(j, rng)))
        if len(pos) >= cap:
            break
    return np.array(pos, dtype=np.int64).reshape(-1, 2), np.array(neg, dtype=np.int64).reshape(-1, 2)


def train_lm(
    records: list[SentenceRecord],
    index: PairIndex,
    cfg: LMConfig,
    epochs: int,
    seed: int,
    vocab_size: int,
    word_vectors: np.ndarray | None = None,
    dtype=np.float32,
    store: ParameterStore | None = None,
) -> LMTrainResult:
    """Joint reconstruction + triplet training.

    Per batch the anchors' reconstruction CE is combined with the mean
    triplet loss over anchors that have both positive and negative pairs
    (weighted by lambda_t); anchors without a usable triplet contribute CE
    only.  Encoder and decoder groups run separate Adam learning rates.
    Raises TrainingDiverged on a non-finite loss.
    """
    _records_batchable(records)
    if store is None:
        store = init_lm_store(vocab_size, cfg, substream(seed, "lm-init").integers(2**31), dtype, word_vectors)
    encoder = SentenceEncoder(store, cfg)
    decoder = SentenceDecoder(store, cfg)
    opt_enc = Adam(store, cfg.lr_enc, group_names(store, ENCODER_BLOCKS))
    opt_dec = Adam(store, cfg.lr_dec, group_names(store, DECODER_BLOCKS))

    mon_pos, mon_neg = _monitor_pairs(index, seed)
    result = LMTrainResult(store=store)
    order_base = np.arange(len(records))

    for epoch in range(epochs):
        order = order_base.copy()
        substream(seed, "lm-order", epoch).shuffle(order)
        trip_rng = substream(seed, "lm-triplet", epoch)
        ce_sum, ce_batches = 0.0, 0
        trip_sum, trip_count = 0.0, 0

        for start in range(0, len(order), cfg.batch):
            batch_ids = order[start : start + cfg.batch]
            batch = [records[j] for j in batch_ids]
            ids, lengths = pad_batch([r.tokens for r in batch])
            targets, _ = pad_batch([r.tokens[1:] for r in batch])
            inputs, _ = pad_batch([r.tokens[:-1] for r in batch])

            emb, enc_cache = encoder.forward(ids, lengths)
            loss_ce, _, dec_cache = decoder.teacher_forced(emb, targets, inputs)

            demb = decoder.backward(dec_cache)

            triplets = []
            if cfg.lambda_t > 0:
                triplets = [
                    (i, sample_triplet(int(j), index, trip_rng))
                    for i, j in enumerate(batch_ids)
                    if index.has_triplet(int(j))
                ]
            loss_t = 0.0
            if triplets:
                rows = [i for i, _ in triplets]
                pos_recs = [records[s.positive_id] for _, s in triplets]
                neg_recs = [records[s.negative_id] for _, s in triplets]
                ids_p, len_p = pad_batch([r.tokens for r in pos_recs])
                ids_n, len_n = pad_batch([r.tokens for r in neg_recs])
                emb_p, cache_p = encoder.forward(ids_p, len_p)
                emb_n, cache_n = encoder.forward(ids_n, len_n)
                losses, trip_cache = triplet_loss(emb[rows], emb_p, emb_n, cfg.margin)
                loss_t = float(losses.mean())
                upstream = np.full(len(rows), cfg.lambda_t / len(rows), dtype=emb.dtype)
                dt, dtp, dtn = triplet_backward(upstream, trip_cache)
                demb[rows] += dt
                encoder.backward(dtp, cache_p)
                encoder.backward(dtn, cache_n)
                trip_sum += loss_t
                trip_count += 1

            encoder.backward(demb, enc_cache)

            total = loss_ce + cfg.lambda_t * loss_t
            if not np.isfinite(total):
                raise TrainingDiverged(f"epoch {epoch}: loss became {total}")
            ce_sum += loss_ce
            ce_batches += 1

            opt_enc.step()
            opt_dec.step()

        embeddings = encode_records(store, cfg, records)
        result.log.append(
            LMEpochLog(
                epoch=epoch,
                loss_ce=ce_sum / max(ce_batches, 1),
                loss_triplet=trip_sum / max(trip_count, 1) if trip_count else 0.0,
                ratio_intra_inter=_pair_distance_ratio(embeddings, mon_pos, mon_neg),
            )
        )
        if epoch % 10 == 0 or epoch == epochs - 1:
            log.info(
                "lm epoch %d: ce=%.4f triplet=%.4f ratio=%.3f",
                epoch,
                result.log[-1].loss_ce,
                result.log[-1].loss_triplet,
                result.log[-1].ratio_intra_inter,
            )
    return result


def greedy_reconstruction_rate(
    store: ParameterStore, cfg: LMConfig, records: list[SentenceRecord], max_len: int = 64
) -> float:
    """Fraction of sentences reproduced exactly by greedy decoding of their own embedding."""
    encoder = SentenceEncoder(store, cfg)
    decoder = SentenceDecoder(store, cfg)
    hits = 0
    for start in range(0, len(records), 128):
        chunk = records[start : start + 128]
        ids, lengths = pad_batch([r.tokens for r in chunk])
        emb, _ = encoder.forward(ids, lengths)
        h = decoder.initial_state(emb)
        B = len(chunk)
        tokens = np.full(B, BOS, dtype=np.int64)
        done = np.zeros(B, dtype=bool)
        outputs: list[list[int]] = [[] for _ in range(B)]
        for _ in range(max_len):
            logp, h = decoder.step(h, tokens)
            logp[:, PAD] = -np.inf
            logp[:, BOS] = -np.inf
            tokens = logp.argmax(axis=1)
            for i in range(B):
                if not done[i]:
                    if tokens[i] == EOS:
                        done[i] = True
                    else:
                        outputs[i].append(int(tokens[i]))
            if done.all():
                break
        for rec, out in zip(chunk, outputs):
            if out == rec.tokens[1:-1]:
                hits += 1
    return hits / len(records)
