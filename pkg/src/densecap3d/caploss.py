"""Caption losses over given per-token log-probabilities (natural log)."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np


@dataclass
class SequenceLogProb:
    tokens: list[int]
    logprobs: list[float]

    def __post_init__(self):
        self.tokens = [int(t) for t in self.tokens]
        self.logprobs = [float(lp) for lp in self.logprobs]
        if len(self.tokens) != len(self.logprobs):
            raise ValueError("tokens and logprobs must have equal length")
        if not all(math.isfinite(lp) for lp in self.logprobs):
            raise ValueError("log-probabilities must be finite")
        if any(lp > 1e-12 for lp in self.logprobs):
            raise ValueError("log-probabilities must be <= 0")

    def __len__(self):
        return len(self.tokens)

    @property
    def total(self) -> float:
        return math.fsum(self.logprobs)


def mle_loss(seq: SequenceLogProb) -> float:
    """Negative log-likelihood of the annotated tokens."""
    if len(seq) == 0:
        raise ValueError("mle_loss needs a nonempty sequence")
    return -seq.total


def scst_loss(beams: Sequence[SequenceLogProb], rewards: Sequence[float],
              baseline_reward: float) -> float:
    """Self-critical loss with a greedy-decode baseline.

    Each beam's log-probability is divided by its length before being
    weighted by its reward advantage.
    """
    if len(beams) < 1:
        raise ValueError("need at least one beam")
    if len(beams) != len(rewards):
        raise ValueError(f"{len(beams)} beams but {len(rewards)} rewards")
    terms = []
    for beam, reward in zip(beams, rewards):
        if len(beam) == 0:
            raise ValueError("zero-length beam")
        terms.append((float(reward) - float(baseline_reward)) * beam.total / len(beam))
    return -math.fsum(terms)


def caption_loss(per_instance_losses: Sequence[float]) -> float:
    """Average caption loss over annotated instances (0 when there are none)."""
    if len(per_instance_losses) == 0:
        return 0.0
    return float(np.mean(per_instance_losses))
