"""Caption scoring: corpus BLEU, ROUGE-L, oracle baseline, uniqueness,
novelty, and the modality-mixing diagnostic for the joint embedding space.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, asdict

import numpy as np

from .align import AssignmentGraph
from .errors import ValidationError


@dataclass
class EvalReport:
    bleu1: float = 0.0
    bleu2: float = 0.0
    bleu3: float = 0.0
    bleu4: float = 0.0
    rougeL: float = 0.0
    unique_rate: float = 0.0
    novel_rate: float = 0.0
    mixing_score: float = float("nan")
    n_candidates: int = 0

    def to_json(self, path) -> None:
        data = asdict(self)
        for key, value in data.items():
            if isinstance(value, float) and not np.isfinite(value):
                data[key] = None
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(data, fh, indent=2, sort_keys=True)
            fh.write("\n")

    def score_key(self):
        return (self.bleu4, self.bleu3, self.bleu2, self.bleu1, self.rougeL)


def _ngram_counts(tokens: list[str], n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def bleu_corpus(
    candidates: list[list[str]],
    references: list[list[list[str]]],
    max_n: int = 4,
) -> list[float]:
    """Corpus-level BLEU-1..max_n with clipping and brevity penalty.

    Modified n-gram precision: per candidate, each n-gram count clips at
    the maximum count over that candidate's references; counts aggregate
    over the corpus before the precision ratio.  The effective reference
    length r sums, per candidate, the reference length closest to the
    candidate length (ties to the shorter).  BP = exp(1 - r/c) when c < r.
    An unmatched order makes every BLEU-n that includes it zero (no
    smoothing at corpus level).
    """
    if len(candidates) != len(references):
        raise ValidationError("candidate/reference count mismatch")
    if any(len(refs) == 0 for refs in references):
        raise ValidationError("every candidate needs at least one reference")

    clipped = np.zeros(max_n)
    totals = np.zeros(max_n)
    c_len = 0
    r_len = 0
    for cand, refs in zip(candidates, references):
        c_len += len(cand)
        r_len += min((abs(len(r) - len(cand)), len(r)) for r in refs)[1]
        for n in range(1, max_n + 1):
            counts = _ngram_counts(cand, n)
            if not counts:
                continue
            max_ref = Counter()
            for ref in refs:
                for gram, cnt in _ngram_counts(ref, n).items():
                    if cnt > max_ref[gram]:
                        max_ref[gram] = cnt
            totals[n - 1] += sum(counts.values())
            clipped[n - 1] += sum(min(cnt, max_ref[gram]) for gram, cnt in counts.items())

    bp = 1.0 if c_len >= r_len else float(np.exp(1.0 - r_len / c_len)) if c_len > 0 else 0.0
    scores = []
    for n in range(1, max_n + 1):
        precisions = []
        for k in range(n):
            precisions.append(clipped[k] / totals[k] if totals[k] > 0 else 0.0)
        if any(p == 0.0 for p in precisions):
            scores.append(0.0)
        else:
            scores.append(bp * float(np.exp(np.mean(np.log(precisions)))))
    return scores


def sentence_bleu_smoothed(candidate: list[str], references: list[list[str]], max_n: int = 4) -> float:
    """Add-one smoothed single-sentence BLEU, for debugging output only."""
    clipped = np.zeros(max_n)
    totals = np.zeros(max_n)
    for n in range(1, max_n + 1):
        counts = _ngram_counts(candidate, n)
        max_ref = Counter()
        for ref in references:
            for gram, cnt in _ngram_counts(ref, n).items():
                if cnt > max_ref[gram]:
                    max_ref[gram] = cnt
        totals[n - 1] = sum(counts.values())
        clipped[n - 1] = sum(min(cnt, max_ref[gram]) for gram, cnt in counts.items())
    precisions = [(clipped[k] + 1.0) / (totals[k] + 1.0) for k in range(max_n)]
    c = len(candidate)
    r = min((abs(len(ref) - c), len(ref)) for ref in references)[1] if references else 0
    bp = 1.0 if c >= r else (float(np.exp(1.0 - r / c)) if c > 0 else 0.0)
    return bp * float(np.exp(np.mean(np.log(precisions))))


def _lcs_length(a: list[str], b: list[str]) -> int:
    if not a or not b:
        return 0
    dp = np.zeros((len(a) + 1, len(b) + 1), dtype=np.int64)
    for i, tok_a in enumerate(a, start=1):
        for j, tok_b in enumerate(b, start=1):
            if tok_a == tok_b:
                dp[i, j] = dp[i - 1, j - 1] + 1
            else:
                dp[i, j] = max(dp[i - 1, j], dp[i, j - 1])
    return int(dp[len(a), len(b)])


def rouge_l(candidate: list[str], references: list[list[str]], beta: float = 1.2) -> float:
    """LCS F-measure, maximum over references."""
    best = 0.0
    for ref in references:
        lcs = _lcs_length(candidate, ref)
        if lcs == 0:
            continue
        precision = lcs / len(candidate)
        recall = lcs / len(ref)
        f = (1.0 + beta * beta) * precision * recall / (recall + beta * beta * precision)
        best = max(best, f)
    return best


def rouge_l_corpus(candidates: list[list[str]], references: list[list[list[str]]], beta: float = 1.2) -> float:
    if not candidates:
        return 0.0
    return float(np.mean([rouge_l(c, r, beta) for c, r in zip(candidates, references)]))


def unique_novel_rates(generated: list[str], training: set[str] | list[str]) -> tuple[float, float]:
    """unique = distinct / generated; novel = fraction absent from training
    (exact string match on the canonical space-joined token form)."""
    if not generated:
        return 0.0, 0.0
    training_set = set(training)
    unique = len(set(generated)) / len(generated)
    novel = sum(1 for g in generated if g not in training_set) / len(generated)
    return unique, novel


def score_captions(
    candidates: list[list[str]],
    references: list[list[list[str]]],
    training_texts: set[str] | None = None,
) -> EvalReport:
    bleu = bleu_corpus(candidates, references)
    unique, novel = unique_novel_rates(
        [" ".join(c) for c in candidates], training_texts if training_texts is not None else set()
    )
    return EvalReport(
        bleu1=bleu[0],
        bleu2=bleu[1],
        bleu3=bleu[2],
        bleu4=bleu[3],
        rougeL=rouge_l_corpus(candidates, references),
        unique_rate=unique,
        novel_rate=novel,
        n_candidates=len(candidates),
    )


def oracle_baseline(
    graph: AssignmentGraph,
    sentence_tokens: list[list[str]],
    references: dict[str, list[list[str]]],
    runs: int = 100,
    rng: np.random.Generator | None = None,
) -> EvalReport:
    """Best-of-N oracle over the weak assignments.

    Per image the candidates are the sentences tied at the row's maximal
    edge weight; each run picks one uniformly per image, the selected
    captions are corpus-scored against the references, and the best run by
    (bleu4, bleu3, bleu2, bleu1, rougeL) is reported.  Images without
    references (or dropped from the graph) are excluded.
    """
    if rng is None:
        rng = np.random.Generator(np.random.PCG64(0))
    image_rows = [
        (image_id, graph.row(image_id))
        for image_id in graph.image_ids
        if image_id in references
    ]
    if not image_rows:
        raise ValidationError("oracle: no graph image has references")
    tied: list[np.ndarray] = []
    for _, row in image_rows:
        weights = graph.weights[row]
        tied.append(graph.edges[row][weights == weights.max()])

    best: EvalReport | None = None
    for _ in range(runs):
        cands = []
        refs = []
        for (image_id, _), choices in zip(image_rows, tied):
            j = int(choices[rng.integers(0, len(choices))])
            cands.append(sentence_tokens[j])
            refs.append(references[image_id])
        report = score_captions(cands, refs)
        if best is None or report.score_key() > best.score_key():
            best = report
    return best


def mixing_score(
    embeddings: np.ndarray,
    is_text: np.ndarray,
    labels: np.ndarray,
    k: int = 10,
) -> float:
    """Mean, over image embeddings, of the text fraction among each one's
    k nearest same-cluster neighbors (self excluded).  Clusters with fewer
    than k+1 members are skipped; a fully mixed space scores about the text
    share within clusters, a separated space scores near zero.
    """
    if embeddings.ndim != 2 or len(is_text) != len(embeddings) or len(labels) != len(embeddings):
        raise ValidationError("mixing_score: inputs misaligned")
    fractions = []
    for label in np.unique(labels):
        member_idx = np.flatnonzero(labels == label)
        if len(member_idx) < k + 1:
            continue
        cluster = embeddings[member_idx]
        text_flags = is_text[member_idx]
        image_positions = np.flatnonzero(~text_flags)
        if len(image_positions) == 0:
            continue
        d2 = ((cluster[image_positions, None, :] - cluster[None, :, :]) ** 2).sum(axis=2)
        for row, pos in enumerate(image_positions):
            dists = d2[row].copy()
            dists[pos] = np.inf
            nearest = np.argsort(dists, kind="stable")[:k]
            fractions.append(float(text_flags[nearest].mean()))
    if not fractions:
        raise ValidationError(f"mixing_score: no cluster has more than k={k} members")
    return float(np.mean(fractions))
