"""Greedy and beam-search decoding over a next-token scorer.

A scorer is any callable ``scorer(prefix, context) -> log_probs`` returning
a normalized log-probability vector over a fixed vocabulary. Start-token
handling belongs to the scorer (via ``context``); decoding starts from an
empty prefix.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Callable, Sequence

import numpy as np
from scipy.special import logsumexp

from .caploss import SequenceLogProb

TokenScorer = Callable[[tuple, Any], np.ndarray]

NORM_TOL = 1e-6


@dataclass(frozen=True)
class DecodeConfig:
    beam_size: int = 5
    max_length: int = 32
    eos_id: int = 0

    def __post_init__(self):
        if self.beam_size < 1:
            raise ValueError("beam_size must be >= 1")
        if self.max_length < 1:
            raise ValueError("max_length must be >= 1")


def _score(scorer: TokenScorer, prefix: tuple, context) -> np.ndarray:
    logp = np.asarray(scorer(prefix, context), dtype=np.float64).reshape(-1)
    if logp.size == 0 or np.any(np.isnan(logp)) or np.any(logp == np.inf):
        raise ValueError("scorer returned an invalid log-probability vector")
    if abs(logsumexp(logp)) > NORM_TOL:
        raise ValueError(f"scorer output is not normalized (logsumexp={logsumexp(logp):.3g})")
    return logp


def greedy(scorer: TokenScorer, context=None, config: DecodeConfig = DecodeConfig()) -> SequenceLogProb:
    """Arg-max decoding; ties go to the lowest token id. EOS is kept when emitted."""
    tokens: list[int] = []
    logps: list[float] = []
    while len(tokens) < config.max_length:
        logp = _score(scorer, tuple(tokens), context)
        tok = int(np.argmax(logp))
        tokens.append(tok)
        logps.append(float(logp[tok]))
        if tok == config.eos_id:
            break
    return SequenceLogProb(tokens, logps)


def _rank(hyp):
    # higher score first, then smaller token sequence
    return -hyp[0], hyp[1]


def beam_search(scorer: TokenScorer, context=None,
                config: DecodeConfig = DecodeConfig()) -> list[SequenceLogProb]:
    """Beam search ranked by the raw sum of token log-probabilities.

    At every step the ``beam_size`` best expansions are kept; those ending
    in EOS retire to the finished pool, the rest continue. The best
    ``beam_size`` finished hypotheses are returned, padded with the best
    unfinished ones at ``max_length`` when too few finished. Output is
    sorted best first; score ties go to the lexicographically smaller
    token sequence.
    """
    k = config.beam_size
    # (score, tokens, logps)
    live: list[tuple[float, tuple, tuple]] = [(0.0, (), ())]
    done: list[tuple[float, tuple, tuple]] = []
    for _ in range(config.max_length):
        expansions = []
        for score, toks, lps in live:
            logp = _score(scorer, toks, context)
            for tok in range(len(logp)):
                if logp[tok] == -np.inf:
                    continue
                lp = float(logp[tok])
                expansions.append((score + lp, toks + (tok,), lps + (lp,)))
        expansions.sort(key=_rank)
        live = []
        for cand in expansions[:k]:
            (done if cand[1][-1] == config.eos_id else live).append(cand)
        if not live:
            break
    out = sorted(done, key=_rank)[:k]
    if len(out) < k:
        out += sorted(live, key=_rank)[:k - len(out)]
    return [SequenceLogProb(list(t), list(lps)) for _, t, lps in sorted(out, key=_rank)]


def enumerate_sequences(scorer: TokenScorer, context, config: DecodeConfig) -> list[SequenceLogProb]:
    """All complete hypotheses up to ``max_length``, ranked like :func:`beam_search`.

    Exponential in ``max_length``; meant for small vocabularies and tests.
    """
    out = []

    def walk(toks: tuple, lps: tuple, score: float):
        logp = _score(scorer, toks, context)
        for tok in range(len(logp)):
            if logp[tok] == -np.inf:
                continue
            t2, l2, s2 = toks + (tok,), lps + (float(logp[tok]),), score + float(logp[tok])
            if tok == config.eos_id or len(t2) == config.max_length:
                out.append((s2, t2, l2))
            else:
                walk(t2, l2, s2)

    walk((), (), 0.0)
    out.sort(key=_rank)
    return [SequenceLogProb(list(t), list(l)) for _, t, l in out]


class TableScorer:
    """Scorer backed by a fixed random table keyed on the prefix.

    Each distinct prefix maps to its own log-softmax of seeded Gaussian
    logits, so the table is reproducible and needs no storage.
    """

    def __init__(self, vocab_size: int, seed: int = 0, temperature: float = 1.0):
        self.vocab_size = vocab_size
        self.seed = seed
        self.temperature = temperature

    def __call__(self, prefix: Sequence[int], context=None) -> np.ndarray:
        rng = np.random.default_rng([self.seed, len(prefix), *prefix])
        logits = rng.normal(size=self.vocab_size) / self.temperature
        return logits - logsumexp(logits)
