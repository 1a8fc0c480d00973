"""Shared primitives: vocabularies, sequences, log-space arithmetic, seeded sampling."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence as _Seq

import numpy as np

NEG_INF = float("-inf")

# A sequence is an immutable tuple of token ids.
Seq = tuple


class ContractError(ValueError):
    """Raised when an operation's precondition is violated."""


class DegenerateDistributionError(ContractError):
    """Raised when every weight of a categorical distribution is -inf."""


@dataclass(frozen=True)
class Vocab:
    size: int
    eos: Optional[int] = None

    def __post_init__(self):
        if self.size < 1:
            raise ContractError(f"vocabulary size must be >= 1, got {self.size}")
        if self.eos is not None and not 0 <= self.eos < self.size:
            raise ContractError(f"eos id {self.eos} outside 0..{self.size - 1}")

    @property
    def tokens(self) -> list[int]:
        return list(range(self.size))

    def validate(self, seq: Iterable[int]) -> tuple[int, ...]:
        out = tuple(int(t) for t in seq)
        for t in out:
            if not 0 <= t < self.size:
                raise ContractError(f"token {t} outside vocabulary of size {self.size}")
        return out


@dataclass(frozen=True)
class Example:
    """A training target ``y*`` plus optional conditioning.

    ``source`` is an opaque tag (e.g. the source sentence of a transduction
    task). ``cond`` holds one conditioning id per target position; policies
    with ``n_cond > 1`` key their tables on it.
    """

    target: tuple[int, ...]
    source: Optional[tuple[int, ...]] = None
    cond: Optional[tuple[int, ...]] = None

    def __post_init__(self):
        if len(self.target) == 0:
            raise ContractError("example target must be non-empty")
        if self.cond is not None and len(self.cond) != len(self.target):
            raise ContractError("cond must align with target positions")

    @property
    def length(self) -> int:
        return len(self.target)


def as_example(y_star) -> Example:
    if isinstance(y_star, Example):
        return y_star
    return Example(tuple(int(t) for t in y_star))


def log_sum_exp(values: _Seq[float]) -> float:
    """Numerically stable ``log(sum(exp(values)))``; -inf iff all inputs are -inf."""
    arr = np.asarray(values, dtype=float)
    if arr.size == 0:
        raise ContractError("log_sum_exp of an empty list")
    if np.isnan(arr).any() or np.isposinf(arr).any():
        raise ContractError("log_sum_exp inputs must be finite or -inf")
    m = arr.max()
    if m == NEG_INF:
        return NEG_INF
    return float(m + np.log(np.exp(arr - m).sum()))


def log_normalize(log_weights) -> np.ndarray:
    """Return ``log_weights - log_sum_exp(log_weights)`` as an array."""
    arr = np.asarray(log_weights, dtype=float)
    lse = log_sum_exp(arr)
    if lse == NEG_INF:
        raise DegenerateDistributionError("degenerate distribution: all weights are -inf")
    return arr - lse


def log_softmax_rows(logits: np.ndarray) -> np.ndarray:
    m = logits.max(axis=-1, keepdims=True)
    shifted = logits - m
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def softmax(log_weights) -> np.ndarray:
    return np.exp(log_normalize(log_weights))


def safe_log(x: float) -> float:
    """``log`` that maps 0 to -inf instead of raising."""
    if x < 0:
        raise ContractError(f"log of negative value {x}")
    return math.log(x) if x > 0 else NEG_INF


def make_rng(seed) -> np.random.Generator:
    return np.random.default_rng(seed)


def split_rng(rng: np.random.Generator, n: int) -> list[np.random.Generator]:
    """Derive ``n`` independent child generators from ``rng``."""
    return list(rng.spawn(n))


def sample_categorical(log_weights, rng: np.random.Generator) -> int:
    """Draw index ``i`` with probability ``softmax(log_weights)[i]``."""
    probs = softmax(log_weights)
    # inverse-CDF draw keeps one uniform per call, which keeps streams aligned
    u = rng.random()
    cdf = np.cumsum(probs)
    idx = int(np.searchsorted(cdf, u * cdf[-1], side="right"))
    idx = min(idx, len(probs) - 1)
    while probs[idx] == 0.0:  # guard against landing on a zero-mass tail slot
        idx -= 1
    return idx


def total_variation(p, q) -> float:
    return 0.5 * float(np.abs(np.asarray(p, dtype=float) - np.asarray(q, dtype=float)).sum())
