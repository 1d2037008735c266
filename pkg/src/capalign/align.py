"""Weak image-sentence assignment and translator training.

The bipartite graph connects images to sentences through shared concepts;
edge weight is the intersection size and rows normalize into a sampling
distribution.  The translator (a one-hidden-layer MLP) maps image features
into the sentence embedding space and trains against three signals: teacher
forced reconstruction of a sampled caption, a robust min-over-K distance to
sampled sentence embeddings, and a concept-conditioned Wasserstein critic
with gradient penalty.
"""

from __future__ import annotations

import logging
import struct
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .corpus import SentenceRecord
from .errors import ShapeError, TrainingDiverged, ValidationError
from .lexicon import ConceptLexicon, ConceptSet, expand_hyponyms
from .lm import LMConfig, SentenceDecoder, encode_records, pad_batch
from .nn import Adam, ParameterStore
from .nn import ops
from .seeding import substream

log = logging.getLogger(__name__)

FEATURES_MAGIC = b"IMGF1"

ABLATIONS = ("align-only", "mle", "joint-l2", "joint-robust", "joint-adv")


@dataclass
class AlignConfig:
    K: int = 10
    lambda_ce: float = 1.0
    lambda_r: float = 1.0
    lambda_adv: float = 0.1
    gp_coeff: float = 10.0
    critic_steps: int = 5
    translator_hidden: int = 512
    critic_hidden: int = 256
    lr: float = 1e-3
    feature_dim: int = 2048
    batch: int = 64
    # sign-flip of the critic; the two polarities are equivalent games
    # (D -> -D) and exist for sensitivity runs only
    conventional_polarity: bool = False

    def __post_init__(self):
        if self.K < 1:
            raise ValidationError("AlignConfig.K must be >= 1")
        if self.critic_steps < 1:
            raise ValidationError("AlignConfig.critic_steps must be >= 1")
        for name in ("lambda_ce", "lambda_r", "lambda_adv", "gp_coeff"):
            if getattr(self, name) < 0:
                raise ValidationError(f"AlignConfig.{name} must be non-negative")


@dataclass
class ImageRecord:
    id: str
    feature: np.ndarray
    concepts: ConceptSet


# ---------------------------------------------------------------------------
# feature / detection files

def save_features(path, ids: list[str], features: np.ndarray) -> None:
    """Binary feature matrix plus a sidecar text file of image ids."""
    if features.ndim != 2 or len(ids) != features.shape[0]:
        raise ShapeError(f"features: {len(ids)} ids vs matrix shape {features.shape}")
    with open(path, "wb") as fh:
        fh.write(FEATURES_MAGIC)
        fh.write(struct.pack("<II", features.shape[0], features.shape[1]))
        fh.write(features.astype("<f4").tobytes())
    with open(str(path) + ".ids", "w", encoding="utf-8") as fh:
        for image_id in ids:
            fh.write(image_id + "\n")


def load_features(path, ids_path=None) -> tuple[list[str], np.ndarray]:
    with open(path, "rb") as fh:
        if fh.read(5) != FEATURES_MAGIC:
            raise ValidationError(f"'{path}' is not a feature file")
        count, dim = struct.unpack("<II", fh.read(8))
        data = np.frombuffer(fh.read(4 * count * dim), dtype="<f4").reshape(count, dim)
    ids_path = ids_path if ids_path is not None else str(path) + ".ids"
    with open(ids_path, "r", encoding="utf-8") as fh:
        ids = [line.strip() for line in fh if line.strip()]
    if len(ids) != count:
        raise ValidationError(f"feature file has {count} rows but {len(ids)} ids")
    return ids, data.astype(np.float32)


def load_detections(path, lex: ConceptLexicon) -> dict[str, ConceptSet]:
    """TSV image_id<TAB>label[,label...]; labels resolve through the lexicon."""
    detections: dict[str, ConceptSet] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n")
            if not line.strip() or line.startswith("#"):
                continue
            fields = line.split("\t")
            if len(fields) != 2:
                raise ValidationError(f"{path}:{lineno}: expected 2 tab-separated fields")
            image_id, label_csv = fields
            concepts = []
            for label in label_csv.split(","):
                label = label.strip()
                if not label:
                    continue
                concept = lex.resolve_label(label)
                if concept is None:
                    log.warning("%s:%d: unknown detector label %r skipped", path, lineno, label)
                    continue
                concepts.append(concept)
            detections[image_id] = ConceptSet.of(concepts)
    return detections


def load_image_records(
    features_path, detections_path, lex: ConceptLexicon, ids_path=None
) -> list[ImageRecord]:
    """Join features with detections and apply the hyponym expansion."""
    ids, features = load_features(features_path, ids_path)
    detections = load_detections(detections_path, lex)
    records = []
    for i, image_id in enumerate(ids):
        detected = detections.get(image_id, ConceptSet())
        records.append(
            ImageRecord(
                id=image_id,
                feature=features[i],
                concepts=expand_hyponyms(detected, lex),
            )
        )
    return records


def concept_multi_hot(concepts: ConceptSet, index: dict[str, int], dtype=np.float32) -> np.ndarray:
    vec = np.zeros(len(index), dtype=dtype)
    for concept in concepts:
        pos = index.get(concept)
        if pos is not None:
            vec[pos] = 1.0
    return vec


# ---------------------------------------------------------------------------
# assignment graph

class AssignmentGraph:
    """Sparse bipartite weights between kept images and sentences.

    Images without any overlapping sentence are dropped (with a warning)
    and listed in .dropped.  Edge order is sorted by sentence id, so the
    construction is independent of input order.
    """

    def __init__(self):
        self.image_ids: list[str] = []
        self.edges: list[np.ndarray] = []      # sentence ids, sorted
        self.weights: list[np.ndarray] = []    # positive integers
        self.row_sums: list[int] = []
        self.dropped: list[str] = []
        self._index: dict[str, int] = {}

    def add_row(self, image_id: str, sentence_ids: np.ndarray, weights: np.ndarray) -> None:
        self._index[image_id] = len(self.image_ids)
        self.image_ids.append(image_id)
        self.edges.append(sentence_ids)
        self.weights.append(weights)
        self.row_sums.append(int(weights.sum()))

    def row(self, image_id: str) -> int:
        return self._index[image_id]

    def __len__(self) -> int:
        return len(self.image_ids)

    def probabilities(self, i: int) -> np.ndarray:
        return self.weights[i] / self.row_sums[i]

    def save_tsv(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("image_id\tsentence_id\tweight\n")
            for image_id, ids, weights in zip(self.image_ids, self.edges, self.weights):
                for j, w in zip(ids, weights):
                    fh.write(f"{image_id}\t{j}\t{w}\n")

    @staticmethod
    def load_tsv(path) -> "AssignmentGraph":
        rows: dict[str, list[tuple[int, int]]] = {}
        order: list[str] = []
        with open(path, "r", encoding="utf-8") as fh:
            header = fh.readline()
            if not header.startswith("image_id\t"):
                raise ValidationError(f"'{path}' is not a graph file")
            for raw in fh:
                image_id, j, w = raw.rstrip("\n").split("\t")
                if image_id not in rows:
                    rows[image_id] = []
                    order.append(image_id)
                rows[image_id].append((int(j), int(w)))
        graph = AssignmentGraph()
        for image_id in order:
            pairs = sorted(rows[image_id])
            graph.add_row(
                image_id,
                np.array([p[0] for p in pairs], dtype=np.int64),
                np.array([p[1] for p in pairs], dtype=np.int64),
            )
        return graph


def build_graph(images: list[ImageRecord], records: list[SentenceRecord]) -> AssignmentGraph:
    """Edges for every (image, sentence) pair with at least one shared concept."""
    postings: dict[str, list[int]] = {}
    for rec in records:
        for concept in rec.concepts:
            postings.setdefault(concept, []).append(rec.id)

    graph = AssignmentGraph()
    for image in images:
        counter: Counter = Counter()
        for concept in image.concepts:
            for j in postings.get(concept, ()):
                counter[j] += 1
        if not counter:
            log.warning("image %s shares no concepts with the corpus; dropped", image.id)
            graph.dropped.append(image.id)
            continue
        items = sorted(counter.items())
        graph.add_row(
            image.id,
            np.array([j for j, _ in items], dtype=np.int64),
            np.array([w for _, w in items], dtype=np.int64),
        )
    return graph


def sample_assignment(i: int, graph: AssignmentGraph, K: int, rng: np.random.Generator) -> np.ndarray:
    """K i.i.d. draws (with replacement) from p(sentence | image i).

    Integer cumulative sums keep the distribution exactly proportional to
    the stored weights.
    """
    cum = np.cumsum(graph.weights[i])
    draws = rng.integers(0, cum[-1], size=K)
    return graph.edges[i][np.searchsorted(cum, draws, side="right")]


# ---------------------------------------------------------------------------
# translator

TRANSLATOR_BLOCKS = ("trans.",)
CRITIC_BLOCKS = ("critic.",)
DECODER_FINETUNE_BLOCKS = ("dec.",)


def init_translator(store: ParameterStore, cfg: AlignConfig, embed_dim: int) -> None:
    store.add("trans.W1", (cfg.translator_hidden, cfg.feature_dim))
    store.add("trans.b1", (cfg.translator_hidden,), init="zeros")
    store.add("trans.W2", (embed_dim, cfg.translator_hidden))
    store.add("trans.b2", (embed_dim,), init="zeros")


def init_critic(store: ParameterStore, cfg: AlignConfig, embed_dim: int, n_concepts: int) -> None:
    store.add("critic.W1", (cfg.critic_hidden, embed_dim + n_concepts))
    store.add("critic.b1", (cfg.critic_hidden,), init="zeros")
    store.add("critic.W2", (1, cfg.critic_hidden))
    store.add("critic.b2", (1,), init="zeros")


class Translator:
    """linear(feature_dim -> hidden) -> relu -> linear(hidden -> embed_dim)."""

    def __init__(self, store: ParameterStore):
        self.store = store

    def forward(self, v: np.ndarray):
        store = self.store
        z1, c1 = ops.linear_forward(v, store["trans.W1"].value, store["trans.b1"].value)
        h, mask = ops.relu_forward(z1)
        e, c2 = ops.linear_forward(h, store["trans.W2"].value, store["trans.b2"].value)
        return e, (c1, mask, c2)

    def backward(self, de: np.ndarray, cache) -> None:
        store = self.store
        c1, mask, c2 = cache
        dh, dW2, db2 = ops.linear_backward(de, c2)
        store["trans.W2"].grad += dW2
        store["trans.b2"].grad += db2
        dz1 = ops.relu_backward(dh, mask)
        _, dW1, db1 = ops.linear_backward(dz1, c1)
        store["trans.W1"].grad += dW1
        store["trans.b1"].grad += db1


class Critic:
    """Scalar score of concat(embedding, concept multi-hot).

    Architecture concat -> linear -> relu -> linear(1).  Besides the usual
    parameter backward it exposes the input gradient (needed by the
    generator objective) and the analytic parameter gradient of the
    WGAN-GP penalty, whose relu second derivative vanishes almost
    everywhere so only W1 and W2 receive penalty gradient.
    """

    def __init__(self, store: ParameterStore):
        self.store = store

    def forward(self, e: np.ndarray, concepts: np.ndarray):
        x = ops.concat_rows(e, concepts)
        store = self.store
        z1, c1 = ops.linear_forward(x, store["critic.W1"].value, store["critic.b1"].value)
        h, mask = ops.relu_forward(z1)
        s, c2 = ops.linear_forward(h, store["critic.W2"].value, store["critic.b2"].value)
        return s[:, 0], (c1, mask, c2, e.shape[1])

    def backward(self, ds: np.ndarray, cache, into_params: bool = True) -> np.ndarray:
        """Returns d(loss)/d(embedding part); optionally accumulates param grads."""
        store = self.store
        c1, mask, c2, embed_dim = cache
        dh, dW2, db2 = ops.linear_backward(ds[:, None], c2)
        dz1 = ops.relu_backward(dh, mask)
        dx, dW1, db1 = ops.linear_backward(dz1, c1)
        if into_params:
            store["critic.W2"].grad += dW2
            store["critic.b2"].grad += db2
            store["critic.W1"].grad += dW1
            store["critic.b1"].grad += db1
        return dx[:, :embed_dim]

    def input_gradient(self, x: np.ndarray) -> np.ndarray:
        """d score / d input, rows independent: W1^T (w2 * relu'(z1))."""
        store = self.store
        W1 = store["critic.W1"].value
        w2 = store["critic.W2"].value[0]
        z1 = x @ W1.T + store["critic.b1"].value
        return ((z1 > 0) * w2) @ W1

    def gradient_penalty(self, x_hat: np.ndarray, coeff: float, into_params: bool = True):
        """mean over rows of coeff * (||grad_x D(x_hat)|| - 1)^2.

        Accumulates the exact parameter gradient of the penalty (derived by
        hand for this fixed architecture; b1 and b2 drop out a.e.).
        """
        store = self.store
        W1 = store["critic.W1"].value
        w2 = store["critic.W2"].value[0]
        z1 = x_hat @ W1.T + store["critic.b1"].value
        m = (z1 > 0).astype(x_hat.dtype)
        V = m * w2                      # (B, H)
        G = V @ W1                      # rows: grad of D wrt input
        norms = np.sqrt((G * G).sum(axis=1))
        B = x_hat.shape[0]
        value = coeff * float(((norms - 1.0) ** 2).mean())
        if into_params:
            safe = np.maximum(norms, 1e-12)
            U = (2.0 * coeff / B) * ((norms - 1.0) / safe)[:, None] * G
            store["critic.W1"].grad += V.T @ U
            store["critic.W2"].grad += (m * (U @ W1.T)).sum(axis=0)[None, :]
        return value


def robust_loss(e: np.ndarray, candidates: np.ndarray):
    """min over candidates of squared L2 to each row's translated feature.

    e (B, d), candidates (B, K, d).  Returns (per-row min distances,
    argmin indices, cache).  Ties break toward the lowest index; gradient
    flows only through the argmin candidate.
    """
    if candidates.ndim != 3 or candidates.shape[0] != e.shape[0]:
        raise ShapeError(f"robust_loss: e {e.shape} vs candidates {candidates.shape}")
    diff = e[:, None, :] - candidates
    dists = (diff * diff).sum(axis=2)
    idx = dists.argmin(axis=1)          # argmin returns the first minimum
    rows = np.arange(e.shape[0])
    return dists[rows, idx], idx, (e, candidates[rows, idx])


def robust_loss_backward(dlosses: np.ndarray, cache) -> np.ndarray:
    e, nearest = cache
    return dlosses[:, None] * 2.0 * (e - nearest)


# ---------------------------------------------------------------------------
# training

@dataclass
class AlignEpochLog:
    epoch: int
    loss_ce: float
    loss_robust: float
    loss_adv: float
    wasserstein: float
    grad_penalty: float


@dataclass
class AlignTrainResult:
    store: ParameterStore
    log: list[AlignEpochLog] = field(default_factory=list)
    critic_log: list[tuple[float, float]] = field(default_factory=list)  # (wasserstein, gp) per step


@dataclass
class _AblationPlan:
    use_ce: bool
    use_robust: bool
    robust_reduce: str     # "min" or "mean"
    use_adv: bool
    finetune_decoder: bool


def ablation_plan(name: str, cfg: AlignConfig) -> _AblationPlan:
    if name not in ABLATIONS:
        raise ValidationError(f"unknown ablation '{name}', pick one of {ABLATIONS}")
    plan = {
        "align-only": _AblationPlan(False, True, "min", False, False),
        "mle": _AblationPlan(True, False, "min", False, True),
        "joint-l2": _AblationPlan(True, True, "mean", False, True),
        "joint-robust": _AblationPlan(True, True, "min", False, True),
        "joint-adv": _AblationPlan(True, True, "min", True, True),
    }[name]
    if plan.use_ce and cfg.lambda_ce == 0:
        plan.use_ce = False
    if plan.use_robust and cfg.lambda_r == 0:
        plan.use_robust = False
    if plan.use_adv and cfg.lambda_adv == 0:
        plan.use_adv = False
    return plan


def _critic_sign(cfg: AlignConfig) -> float:
    # The published formulation scores sentence embeddings high and
    # translated features low; the flag studies the mirrored game.
    return -1.0 if cfg.conventional_polarity else 1.0


def train_align(
    images: list[ImageRecord],
    records: list[SentenceRecord],
    graph: AssignmentGraph,
    lm_store: ParameterStore,
    lm_cfg: LMConfig,
    cfg: AlignConfig,
    lex: ConceptLexicon,
    epochs: int,
    seed: int,
    ablation: str = "joint-adv",
) -> AlignTrainResult:
    """Translator (+ decoder, + critic) training over the weak graph.

    The encoder stays frozen: all sentence embeddings are computed once up
    front.  Per generator step the critic, when active, trains
    cfg.critic_steps times on the same image batch with fresh sentence
    samples.  Every stochastic choice draws from a named substream, so
    disabling one term leaves the others' draws untouched.
    """
    plan = ablation_plan(ablation, cfg)
    store = lm_store
    init_rng = substream(seed, "align-init")
    init_store = ParameterStore(seed=int(init_rng.integers(2**31)), dtype=store.dtype)
    init_translator(init_store, cfg, lm_cfg.embed_dim)
    concept_index = lex.concept_index()
    init_critic(init_store, cfg, lm_cfg.embed_dim, len(concept_index))
    for name in init_store.names():
        store.add(name, init_store[name].value.shape, init=init_store[name].value)

    translator = Translator(store)
    critic = Critic(store)
    decoder = SentenceDecoder(store, lm_cfg)

    text_emb = encode_records(store, lm_cfg, records).astype(store.dtype)

    trainable = list(TRANSLATOR_BLOCKS)
    if plan.finetune_decoder:
        trainable += list(DECODER_FINETUNE_BLOCKS)
    gen_names = [n for n in store.names() if any(n.startswith(p) for p in trainable)]
    opt_gen = Adam(store, cfg.lr, gen_names)
    opt_critic = Adam(store, cfg.lr, [n for n in store.names() if n.startswith("critic.")])

    by_id = images_by_id(images)
    trainable_images = [
        i for i in range(len(graph)) if by_id[graph.image_ids[i]].concepts
    ]
    if not trainable_images:
        raise ValidationError("no image has both features and overlapping concepts")
    feats = np.stack([by_id[graph.image_ids[i]].feature for i in trainable_images]).astype(store.dtype)
    hots = np.stack(
        [
            concept_multi_hot(by_id[graph.image_ids[i]].concepts, concept_index, store.dtype)
            for i in trainable_images
        ]
    )
    row_of = {i: r for r, i in enumerate(trainable_images)}
    sign = _critic_sign(cfg)

    result = AlignTrainResult(store=store)

    for epoch in range(epochs):
        order = np.array(trainable_images, dtype=np.int64)
        substream(seed, "align-order", epoch).shuffle(order)
        ce_rng = substream(seed, "align-ce", epoch)
        robust_rng = substream(seed, "align-robust", epoch)
        critic_rng = substream(seed, "align-critic", epoch)
        sums = {"ce": 0.0, "rob": 0.0, "adv": 0.0, "w": 0.0, "gp": 0.0}
        n_batches = 0
        n_critic = 0

        for start in range(0, len(order), cfg.batch):
            batch = order[start : start + cfg.batch]
            rows = [row_of[int(i)] for i in batch]
            v = feats[rows]
            c_hot = hots[rows]

            if plan.use_adv:
                e_gen, _ = translator.forward(v)  # translator frozen during critic steps
                for _ in range(cfg.critic_steps):
                    fake_ids = np.array(
                        [sample_assignment(int(i), graph, 1, critic_rng)[0] for i in batch]
                    )
                    e_text = text_emb[fake_ids]
                    s_gen, cache_g = critic.forward(e_gen, c_hot)
                    s_text, cache_t = critic.forward(e_text, c_hot)
                    # critic pushes translated scores down, text scores up
                    B = len(batch)
                    critic.backward(sign * np.full(B, 1.0 / B, dtype=store.dtype), cache_g)
                    critic.backward(sign * np.full(B, -1.0 / B, dtype=store.dtype), cache_t)
                    eps = critic_rng.uniform(0.0, 1.0, size=(B, 1)).astype(store.dtype)
                    x_hat = ops.concat_rows(eps * e_gen + (1.0 - eps) * e_text, c_hot)
                    gp = critic.gradient_penalty(x_hat, cfg.gp_coeff)
                    w_est = float(sign * (s_text.mean() - s_gen.mean()))
                    loss_d = -w_est + gp
                    if not np.isfinite(loss_d):
                        raise TrainingDiverged(f"critic loss became {loss_d}")
                    opt_critic.step()
                    result.critic_log.append((w_est, gp))
                    sums["w"] += w_est
                    sums["gp"] += gp
                    n_critic += 1

            # generator step
            e, trans_cache = translator.forward(v)
            de = np.zeros_like(e)
            loss_ce = loss_rob = loss_adv = 0.0

            if plan.use_ce:
                cap_ids = np.array(
                    [sample_assignment(int(i), graph, 1, ce_rng)[0] for i in batch]
                )
                caps = [records[j] for j in cap_ids]
                targets, _ = pad_batch([r.tokens[1:] for r in caps])
                inputs, _ = pad_batch([r.tokens[:-1] for r in caps])
                loss_ce, _, dec_cache = decoder.teacher_forced(e, targets, inputs)
                de += decoder.backward(dec_cache, scale=cfg.lambda_ce)

            if plan.use_robust:
                cand_ids = np.stack(
                    [sample_assignment(int(i), graph, cfg.K, robust_rng) for i in batch]
                )
                cands = text_emb[cand_ids]
                B = len(batch)
                if plan.robust_reduce == "min":
                    dists, _, rcache = robust_loss(e, cands)
                    loss_rob = float(dists.mean())
                    de += cfg.lambda_r * robust_loss_backward(
                        np.full(B, 1.0 / B, dtype=store.dtype), rcache
                    )
                else:
                    diff = e[:, None, :] - cands
                    loss_rob = float((diff * diff).sum(axis=2).mean())
                    de += cfg.lambda_r * (2.0 / (B * cfg.K)) * diff.sum(axis=1)

            if plan.use_adv:
                s, cache_s = critic.forward(e, c_hot)
                loss_adv = float(-sign * s.mean())
                B = len(batch)
                de += cfg.lambda_adv * critic.backward(
                    sign * np.full(B, -1.0 / B, dtype=store.dtype), cache_s, into_params=False
                )

            translator.backward(de, trans_cache)
            total = cfg.lambda_ce * loss_ce + cfg.lambda_r * loss_rob + cfg.lambda_adv * loss_adv
            if not np.isfinite(total):
                raise TrainingDiverged(f"generator loss became {total}")
            opt_gen.step()
            store.zero_grads()  # drop grads on frozen blocks (encoder, embeddings)

            sums["ce"] += loss_ce
            sums["rob"] += loss_rob
            sums["adv"] += loss_adv
            n_batches += 1

        result.log.append(
            AlignEpochLog(
                epoch=epoch,
                loss_ce=sums["ce"] / max(n_batches, 1),
                loss_robust=sums["rob"] / max(n_batches, 1),
                loss_adv=sums["adv"] / max(n_batches, 1),
                wasserstein=sums["w"] / max(n_critic, 1) if n_critic else 0.0,
                grad_penalty=sums["gp"] / max(n_critic, 1) if n_critic else 0.0,
            )
        )
        if epoch % 10 == 0 or epoch == epochs - 1:
            entry = result.log[-1]
            log.info(
                "align epoch %d: ce=%.4f robust=%.4f adv=%.4f w=%.4f gp=%.4f",
                epoch, entry.loss_ce, entry.loss_robust, entry.loss_adv,
                entry.wasserstein, entry.grad_penalty,
            )
    return result


def images_by_id(images: list[ImageRecord]) -> dict[str, ImageRecord]:
    return {image.id: image for image in images}
