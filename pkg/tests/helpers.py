"""Shared test fixtures: toy probability tables for beam search and their
exhaustive-search oracle."""

import numpy as np

from capalign.corpus import EOS
from capalign.inference import Hypothesis

CONTENT = (4, 5, 6)
VOCAB = 7  # ids 0..6; pad/bos/unk masked to -inf


class TableStepper:
    """Next-token distribution conditioned on the content prefix."""

    def __init__(self, table: dict):
        self.table = table

    def start(self):
        return ()

    def next_logprobs(self, state):
        return self.table[state]

    def advance(self, state, token):
        return state + (token,)


def random_table(seed: int, max_len: int = 3) -> dict:
    rng = np.random.default_rng(seed)
    table = {}
    prefixes = [()]
    for _ in range(max_len + 1):
        next_prefixes = []
        for prefix in prefixes:
            probs = rng.dirichlet(np.ones(len(CONTENT) + 1))
            row = np.full(VOCAB, -np.inf)
            row[EOS] = np.log(probs[0])
            for tok, p in zip(CONTENT, probs[1:]):
                row[tok] = np.log(p)
            table[prefix] = row
            next_prefixes.extend(prefix + (t,) for t in CONTENT)
        prefixes = next_prefixes
    return table


def planted_table(seed: int, max_len: int = 3) -> dict:
    """One dominant path (p=0.9 per step, ending in a dominant eos); off-path
    prefixes close immediately with a dominant eos, so greedy is optimal and
    every beam width finds the same sequence."""
    rng = np.random.default_rng(seed)
    length = int(rng.integers(1, max_len + 1))
    target = tuple(int(rng.choice(CONTENT)) for _ in range(length))
    table = {}
    prefixes = [()]
    for _ in range(max_len + 1):
        next_prefixes = []
        for prefix in prefixes:
            row = np.full(VOCAB, -np.inf)
            on_path = prefix == target[: len(prefix)] and len(prefix) <= length
            if on_path and len(prefix) < length:
                dominant = target[len(prefix)]
                rest = [t for t in CONTENT if t != dominant] + [EOS]
                row[dominant] = np.log(0.9)
                for t in rest:
                    row[t] = np.log(0.1 / len(rest))
            else:
                row[EOS] = np.log(0.9)
                for t in CONTENT:
                    row[t] = np.log(0.1 / len(CONTENT))
            table[prefix] = row
            next_prefixes.extend(prefix + (t,) for t in CONTENT)
        prefixes = next_prefixes
    return table


def exhaustive_best(stepper, max_len: int) -> Hypothesis:
    """Enumerate every content sequence of length <= max_len, close each with
    a scored eos, and return the best by (score, lexicographic tokens)."""
    best = None

    def visit(state, tokens, score, depth):
        nonlocal best
        logp = stepper.next_logprobs(state)
        closed = Hypothesis(tokens + (EOS,), score + float(logp[EOS]), None)
        key = (-closed.score, closed.tokens)
        if best is None or key < (-best.score, best.tokens):
            best = closed
        if depth == max_len:
            return
        for token in CONTENT:
            if np.isfinite(logp[token]):
                visit(stepper.advance(state, token), tokens + (token,),
                      score + float(logp[token]), depth + 1)

    visit(stepper.start(), (), 0.0, 0)
    return best
