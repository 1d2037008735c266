"""Sentence corpus ingestion, vocabulary, and concept-overlap pair index.

Sentences are tokenized, truncated, and mapped to integer ids.  Each
sentence also carries the concept set extracted from its surface tokens
*before* rare words collapse to the unk id.  The pair index stores, per
sentence, the positive candidates (two or more shared concepts, with the
overlap count as a sampling weight) and an implicit negative set (zero
shared concepts); pairs sharing exactly one concept belong to neither side.
"""

from __future__ import annotations

import re
import struct
from collections import Counter
from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .lexicon import ConceptLexicon, ConceptSet, extract_concepts

PAD, BOS, EOS, UNK = 0, 1, 2, 3
RESERVED = ("<pad>", "<bos>", "<eos>", "<unk>")

_TOKEN_RE = re.compile(r"[^\W_]+(?:'[^\W_]+)*", re.UNICODE)

PAIR_INDEX_MAGIC = b"PIDX1"


def tokenize(text: str) -> list[str]:
    """Lowercase and split on whitespace/punctuation, keeping inner apostrophes."""
    return _TOKEN_RE.findall(text.lower())


class Vocabulary:
    """Token <-> dense integer ids with four reserved slots (pad/bos/eos/unk)."""

    def __init__(self, tokens: list[str], min_count: int):
        self.min_count = min_count
        self.id_to_token: list[str] = list(RESERVED) + tokens
        self.token_to_id: dict[str, int] = {t: i for i, t in enumerate(self.id_to_token)}
        if len(self.token_to_id) != len(self.id_to_token):
            raise ValidationError("vocabulary contains duplicate tokens")

    @staticmethod
    def from_counts(counts: Counter, min_count: int) -> "Vocabulary":
        kept = [t for t, c in counts.items() if c >= min_count and t not in RESERVED]
        # deterministic id order: frequency desc, then token
        kept.sort(key=lambda t: (-counts[t], t))
        return Vocabulary(kept, min_count)

    def encode(self, token: str) -> int:
        return self.token_to_id.get(token, UNK)

    def decode(self, idx: int) -> str:
        return self.id_to_token[idx]

    def __len__(self) -> int:
        return len(self.id_to_token)

    @property
    def size(self) -> int:
        return len(self.id_to_token)


@dataclass
class SentenceRecord:
    """One corpus sentence: ids bos..eos, surface tokens, and its concept set."""

    id: int
    tokens: list[int]           # [BOS, w1..wM, EOS]
    surface: list[str]          # post-truncation tokens, pre-unk
    concepts: ConceptSet
    length: int                 # M, excludes bos/eos

    @property
    def text(self) -> str:
        return " ".join(self.surface)


def build_corpus(
    path,
    lex: ConceptLexicon,
    min_count: int = 5,
    max_len: int = 20,
) -> tuple[Vocabulary, list[SentenceRecord]]:
    """Read one sentence per line, build the vocabulary, extract concepts.

    Sentences longer than max_len are truncated before the eos marker.
    Tokens rarer than min_count map to unk, but concept extraction always
    runs on the surface tokens so a rare concept word still contributes
    its concept.  Empty lines are skipped; an empty corpus is an error.
    """
    if max_len < 4:
        raise ValidationError(f"max_len must be >= 4, got {max_len}")
    token_lists: list[list[str]] = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            toks = tokenize(line)
            if toks:
                token_lists.append(toks[:max_len])
    if not token_lists:
        raise ValidationError(f"corpus '{path}' contains no usable sentences")

    counts: Counter = Counter()
    for toks in token_lists:
        counts.update(toks)
    vocab = Vocabulary.from_counts(counts, min_count)

    records = []
    for j, toks in enumerate(token_lists):
        ids = [BOS] + [vocab.encode(t) for t in toks] + [EOS]
        records.append(
            SentenceRecord(
                id=j,
                tokens=ids,
                surface=toks,
                concepts=extract_concepts(toks, lex),
                length=len(toks),
            )
        )
    return vocab, records


@dataclass(frozen=True)
class TripletSample:
    anchor_id: int
    positive_id: int
    negative_id: int


class PairIndex:
    """Per-sentence positive candidates and implicit negative sets.

    positives[j] is a list of (sentence id, overlap count) with overlap >= 2.
    nonzero[j] is the sorted array of ids sharing at least one concept with j
    (excluding j itself); the negative set is everything else, stored
    implicitly and sampled by rejection.
    """

    def __init__(self, positives: list[list[tuple[int, int]]], nonzero: list[np.ndarray]):
        if len(positives) != len(nonzero):
            raise ValidationError("positives/nonzero length mismatch")
        self.positives = positives
        self.nonzero = nonzero
        self.n = len(positives)
        self._pos_ids = [np.array([k for k, _ in p], dtype=np.int64) for p in positives]
        self._pos_cum = [
            np.cumsum(np.array([w for _, w in p], dtype=np.int64)) for p in positives
        ]

    def negative_count(self, j: int) -> int:
        return self.n - 1 - len(self.nonzero[j])

    def has_positives(self, j: int) -> bool:
        return len(self.positives[j]) > 0

    def has_triplet(self, j: int) -> bool:
        return self.has_positives(j) and self.negative_count(j) > 0

    def triplet_anchor_ids(self) -> list[int]:
        return [j for j in range(self.n) if self.has_triplet(j)]

    def sample_positive(self, j: int, rng: np.random.Generator) -> int:
        """Draw k from P+_j with probability proportional to the overlap count."""
        cum = self._pos_cum[j]
        if len(cum) == 0:
            raise ValidationError(f"sentence {j} has no positive pairs")
        u = int(rng.integers(0, cum[-1]))
        return int(self._pos_ids[j][np.searchsorted(cum, u, side="right")])

    def sample_negative(self, j: int, rng: np.random.Generator) -> int:
        """Uniform draw from the implicit negative set, by rejection."""
        if self.negative_count(j) <= 0:
            raise ValidationError(f"sentence {j} has no negative pairs")
        nz = self.nonzero[j]
        while True:
            k = int(rng.integers(0, self.n))
            if k == j:
                continue
            pos = np.searchsorted(nz, k)
            if pos < len(nz) and nz[pos] == k:
                continue
            return k

    def save(self, path) -> None:
        with open(path, "wb") as fh:
            fh.write(PAIR_INDEX_MAGIC)
            fh.write(struct.pack("<I", self.n))
            for j in range(self.n):
                fh.write(struct.pack("<I", len(self.positives[j])))
                for k, w in self.positives[j]:
                    fh.write(struct.pack("<II", k, w))
                nz = self.nonzero[j]
                fh.write(struct.pack("<I", len(nz)))
                fh.write(nz.astype("<u4").tobytes())

    @staticmethod
    def load(path) -> "PairIndex":
        with open(path, "rb") as fh:
            magic = fh.read(5)
            if magic != PAIR_INDEX_MAGIC:
                raise ValidationError(f"'{path}' is not a pair index file")
            (n,) = struct.unpack("<I", fh.read(4))
            positives: list[list[tuple[int, int]]] = []
            nonzero: list[np.ndarray] = []
            for _ in range(n):
                (npos,) = struct.unpack("<I", fh.read(4))
                pos = []
                for _ in range(npos):
                    k, w = struct.unpack("<II", fh.read(8))
                    pos.append((k, w))
                positives.append(pos)
                (nnz,) = struct.unpack("<I", fh.read(4))
                nonzero.append(np.frombuffer(fh.read(4 * nnz), dtype="<u4").astype(np.int64))
        return PairIndex(positives, nonzero)


def build_pair_index(records: list[SentenceRecord]) -> PairIndex:
    """Compute pairwise concept overlaps through a per-concept inverted index."""
    if not records:
        raise ValidationError("cannot build a pair index over an empty corpus")
    postings: dict[str, list[int]] = {}
    for rec in records:
        for concept in rec.concepts:
            postings.setdefault(concept, []).append(rec.id)

    n = len(records)
    overlap: list[Counter] = [Counter() for _ in range(n)]
    for ids in postings.values():
        for a in ids:
            counter = overlap[a]
            for b in ids:
                if b != a:
                    counter[b] += 1

    positives = []
    nonzero = []
    for j in range(n):
        pos = sorted((k, w) for k, w in overlap[j].items() if w >= 2)
        positives.append(pos)
        nonzero.append(np.array(sorted(overlap[j].keys()), dtype=np.int64))
    return PairIndex(positives, nonzero)


def sample_triplet(j: int, index: PairIndex, rng: np.random.Generator) -> TripletSample:
    """One (anchor, positive, negative) draw for sentence j.

    The positive follows a multinomial over overlap counts; the negative is
    uniform over the zero-overlap set.  Callers should skip anchors for
    which has_triplet(j) is false.
    """
    return TripletSample(
        anchor_id=j,
        positive_id=index.sample_positive(j, rng),
        negative_id=index.sample_negative(j, rng),
    )
