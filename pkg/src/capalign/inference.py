"""Caption decoding by greedy or beam search.

Search is generic over a stepper so the same algorithm runs against the
trained decoder and against hand-built probability tables in tests.  A
stepper exposes next_logprobs(state) over the vocabulary and
advance(state, token).  Scores are total log-probability with no length
normalization; the closing eos is always scored, including when a
hypothesis is cut off at max_len and force-completed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .corpus import BOS, EOS, PAD, UNK
from .lm import LMConfig, SentenceDecoder
from .align import Translator
from .nn import ParameterStore


@dataclass(frozen=True)
class Hypothesis:
    tokens: tuple[int, ...]     # content tokens; completed ones end with eos
    score: float
    state: object


def _key(h: Hypothesis):
    # higher score first; exact ties resolve to the earlier token ids
    return (-h.score, h.tokens)


class Beam:
    """Fixed-width pool of live hypotheses plus the completed set."""

    def __init__(self, width: int):
        if width < 1:
            raise ValueError("beam width must be >= 1")
        self.width = width
        self.live: list[Hypothesis] = []
        self.completed: list[Hypothesis] = []

    def select(self, candidates: list[Hypothesis]) -> None:
        candidates.sort(key=_key)
        self.live = []
        for h in candidates[: self.width]:
            if h.tokens[-1] == EOS:
                self.completed.append(h)
            else:
                self.live.append(h)

    def best(self, length_normalize: bool = False) -> Hypothesis:
        if length_normalize:
            return min(self.completed, key=lambda h: (-h.score / len(h.tokens), h.tokens))
        return min(self.completed, key=_key)


class ModelStepper:
    """Decoder-backed stepper; state carries the GRU hidden row and the
    log-probabilities of the next token (pad and bos masked, unk optional)."""

    def __init__(self, store: ParameterStore, cfg: LMConfig, suppress_unk: bool = True):
        self.decoder = SentenceDecoder(store, cfg)
        self.suppress_unk = suppress_unk

    def start(self, embedding: np.ndarray):
        h0 = self.decoder.initial_state(embedding[None, :])
        return self.advance((h0, None), BOS)

    def next_logprobs(self, state) -> np.ndarray:
        return state[1]

    def advance(self, state, token: int):
        h, _ = state
        logp, h_new = self.decoder.step(h, np.array([token], dtype=np.int64))
        row = logp[0].astype(np.float64).copy()
        row[PAD] = -np.inf
        row[BOS] = -np.inf
        if self.suppress_unk:
            row[UNK] = -np.inf
        return (h_new, row)


def beam_search(stepper, start_state, width: int, max_len: int,
                length_normalize: bool = False) -> Hypothesis:
    """Top-width search over sequences of at most max_len content tokens.

    Every expansion scores its token's log-probability; an eos candidate
    completes a hypothesis.  Hypotheses still live after max_len steps are
    completed by appending eos (scored).  The best completed hypothesis by
    total log-probability wins (length_normalize divides the final ranking
    score by sequence length); ties prefer the lexicographically earlier
    token sequence.  Width at least V^max_len makes the search exhaustive.
    """
    beam = Beam(width)
    beam.live = [Hypothesis(tokens=(), score=0.0, state=start_state)]

    for _ in range(max_len):
        if not beam.live:
            break
        candidates: list[Hypothesis] = []
        for hyp in beam.live:
            logp = stepper.next_logprobs(hyp.state)
            # per-parent top-width children cover the global top-width
            order = np.argsort(-logp, kind="stable")[: width]
            for token in order:
                token = int(token)
                score = hyp.score + float(logp[token])
                if not np.isfinite(score):
                    continue
                if token == EOS:
                    candidates.append(Hypothesis(hyp.tokens + (EOS,), score, None))
                else:
                    candidates.append(
                        Hypothesis(hyp.tokens + (token,), score, stepper.advance(hyp.state, token))
                    )
        beam.select(candidates)
        if beam.completed and beam.live and not length_normalize:
            best_done = min(beam.completed, key=_key)
            best_live = min(beam.live, key=_key)
            # extensions only lower a total score, so a strictly better
            # completed hypothesis can never be overtaken (normalized
            # ranking lacks this guarantee, so no early stop there)
            if best_done.score > best_live.score:
                beam.live = []
                break

    for hyp in beam.live:  # hit the length cap: force-complete with scored eos
        logp = stepper.next_logprobs(hyp.state)
        beam.completed.append(Hypothesis(hyp.tokens + (EOS,), hyp.score + float(logp[EOS]), None))
    return beam.best(length_normalize)


def caption_feature(
    feature: np.ndarray,
    store: ParameterStore,
    lm_cfg: LMConfig,
    width: int = 3,
    max_len: int = 20,
    suppress_unk: bool = True,
    length_normalize: bool = False,
) -> list[int]:
    """Decode one image feature into a token id sequence ending with eos."""
    translator = Translator(store)
    emb, _ = translator.forward(feature[None, :].astype(store.dtype))
    stepper = ModelStepper(store, lm_cfg, suppress_unk=suppress_unk)
    best = beam_search(stepper, stepper.start(emb[0]), width, max_len, length_normalize)
    return list(best.tokens)
