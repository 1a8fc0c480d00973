"""Sequence rewards R(y | y*) with whole-sequence and token-incremental forms.

Every reward is a log-weight: a finite float or ``-inf``. The incremental
form is defined by telescoping prefix rewards,
``dR(y_t | y_<t) = R(y_<=t) - R(y_<t)``, so the per-token increments of a
full target-length sequence always sum back to its whole-sequence reward.
"""

from __future__ import annotations

import itertools
import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .core import NEG_INF, ContractError, Example, as_example, safe_log

KINDS = (
    "delta",
    "hamming",
    "ngram_match",
    "unigram_noise",
    "single_token_relaxed_delta",
    "interpolated",
)


class RewardResurrectionError(ContractError):
    """A prefix with reward -inf was extended to a finite reward."""


@dataclass(frozen=True)
class RewardSpec:
    """Reward kind plus its parameters.

    ``gamma``/``unigram`` parameterize ``unigram_noise``; ``n`` is the
    n-gram order; ``interpolated`` mixes ``lam * base + (1 - lam) * delta``.
    """

    kind: str
    gamma: Optional[float] = None
    unigram: Optional[tuple[float, ...]] = None
    n: int = 2
    lam: float = 0.5
    base: Optional["RewardSpec"] = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ContractError(f"unknown reward kind {self.kind!r}; expected one of {KINDS}")
        if self.kind == "unigram_noise":
            if self.gamma is None or self.unigram is None:
                raise ContractError("unigram_noise needs gamma and unigram")
            validate_unigram(self.unigram)
        if self.gamma is not None and not 0.0 <= self.gamma <= 1.0:
            raise ContractError(f"gamma must lie in [0, 1], got {self.gamma}")
        if self.n < 1:
            raise ContractError(f"n-gram order must be >= 1, got {self.n}")
        if self.kind == "interpolated":
            if self.base is None:
                raise ContractError("interpolated reward needs a base reward")
            if not 0.0 <= self.lam <= 1.0:
                raise ContractError(f"lam must lie in [0, 1], got {self.lam}")

    def to_dict(self) -> dict:
        out: dict = {"kind": self.kind}
        if self.kind == "unigram_noise":
            out["gamma"] = self.gamma
            out["unigram"] = list(self.unigram)
        if self.kind == "ngram_match":
            out["n"] = self.n
        if self.kind == "interpolated":
            out["lam"] = self.lam
            out["base"] = self.base.to_dict()
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "RewardSpec":
        d = dict(d)
        allowed = {"kind", "gamma", "unigram", "n", "lam", "base"}
        unknown = set(d) - allowed
        if unknown:
            raise ContractError(f"unknown reward keys: {sorted(unknown)}")
        if "unigram" in d and d["unigram"] is not None:
            d["unigram"] = tuple(float(x) for x in d["unigram"])
        if "base" in d and d["base"] is not None:
            d["base"] = cls.from_dict(d["base"])
        return cls(**d)


DELTA = RewardSpec("delta")
HAMMING = RewardSpec("hamming")


def validate_unigram(u) -> None:
    arr = np.asarray(u, dtype=float)
    if (arr < 0).any():
        raise ContractError("unigram entries must be non-negative")
    if abs(arr.sum() - 1.0) > 1e-12:
        raise ContractError(f"unigram must sum to 1 (got {arr.sum()!r})")


def token_diff(y, y_star) -> frozenset[int]:
    """Positions where ``y`` and ``y_star`` differ; both must have equal length."""
    if len(y) != len(y_star):
        raise ContractError("token_diff needs sequences of equal length")
    return frozenset(t for t, (a, b) in enumerate(zip(y, y_star)) if a != b)


# Whole-sequence rewards


def delta_reward(y, y_star) -> float:
    return 1.0 if tuple(y) == tuple(y_star) else NEG_INF


def hamming_reward(y, y_star) -> float:
    T, Ts = len(y), len(y_star)
    matches = sum(1 for a, b in zip(y, y_star) if a == b)
    if T == Ts:
        return matches / Ts
    span = max(T, Ts)
    return max(matches / span - abs(T - Ts) / span, -1.0)


def _ngrams(seq, k: int) -> Counter:
    return Counter(tuple(seq[i : i + k]) for i in range(len(seq) - k + 1))


def ngram_match_reward(y, y_star, n: int = 2) -> float:
    """Smoothed geometric-mean clipped n-gram precision times a brevity factor.

    Orders with no k-gram in ``y`` are skipped; an empty ``y`` scores 0.
    """
    if n < 1:
        raise ContractError(f"n-gram order must be >= 1, got {n}")
    T = len(y)
    if T == 0:
        return 0.0
    ref = tuple(y_star)
    log_prec = []
    for k in range(1, min(n, T) + 1):
        hyp = _ngrams(tuple(y), k)
        ref_counts = _ngrams(ref, k)
        clipped = sum(min(c, ref_counts.get(g, 0)) for g, c in hyp.items())
        prec = clipped / (T - k + 1)
        if prec == 0.0:
            prec = 1.0 / (2 * T)
        log_prec.append(math.log(prec))
    brevity = min(1.0, T / len(ref))
    return math.exp(sum(log_prec) / len(log_prec)) * brevity


def unigram_noise_reward(y, y_star, gamma: float, u) -> float:
    if len(y) != len(y_star):
        return NEG_INF
    diff = token_diff(y, y_star)
    T = len(y)
    logw = len(diff) * safe_log(gamma) if diff else 0.0
    if T - len(diff):
        logw += (T - len(diff)) * safe_log(1.0 - gamma)
    for t in diff:
        logw += safe_log(u[y[t]])
    return logw


def single_token_relaxed_delta(y, y_star) -> float:
    if len(y) != len(y_star):
        return NEG_INF
    return 1.0 if len(token_diff(y, y_star)) == 1 else NEG_INF


def reward(y, y_star, spec: RewardSpec) -> float:
    """Whole-sequence reward ``R(y | y*)`` for any kind."""
    y_star = tuple(as_example(y_star).target) if isinstance(y_star, Example) else tuple(y_star)
    kind = spec.kind
    if kind == "delta":
        return delta_reward(y, y_star)
    if kind == "hamming":
        return hamming_reward(y, y_star)
    if kind == "ngram_match":
        return ngram_match_reward(y, y_star, spec.n)
    if kind == "unigram_noise":
        return unigram_noise_reward(y, y_star, spec.gamma, spec.unigram)
    if kind == "single_token_relaxed_delta":
        return single_token_relaxed_delta(y, y_star)
    # interpolated
    d = delta_reward(y, y_star)
    if d == NEG_INF:
        return NEG_INF
    return spec.lam * reward(y, y_star, spec.base) + (1.0 - spec.lam) * d


# Prefix rewards


def delta_prefix_reward(prefix, y_star) -> float:
    target = as_example(y_star).target
    t = len(prefix)
    if t <= len(target) and tuple(prefix) == target[:t]:
        return t / len(target)
    return NEG_INF


def prefix_reward(prefix, y_star, spec: RewardSpec) -> float:
    """Reward of a partial sequence, used to define token increments.

    For a prefix of full target length this coincides with ``reward``.
    """
    target = as_example(y_star).target
    prefix = tuple(prefix)
    t, Ts = len(prefix), len(target)
    kind = spec.kind
    if kind == "delta":
        return delta_prefix_reward(prefix, target)
    if kind == "hamming":
        if t < Ts:
            return sum(1 for a, b in zip(prefix, target) if a == b) / Ts
        return hamming_reward(prefix, target)
    if kind == "ngram_match":
        return ngram_match_reward(prefix, target, spec.n)
    if kind == "unigram_noise":
        if t > Ts:
            return NEG_INF
        return unigram_noise_reward(prefix, target[:t], spec.gamma, spec.unigram)
    if kind == "single_token_relaxed_delta":
        if t > Ts:
            return NEG_INF
        nd = len(token_diff(prefix, target[:t]))
        if nd > 1 or (t == Ts and nd != 1):
            return NEG_INF
        return t / Ts
    d = delta_prefix_reward(prefix, target)
    if d == NEG_INF:
        return NEG_INF
    return spec.lam * prefix_reward(prefix, target, spec.base) + (1.0 - spec.lam) * d


def _increment(prev: float, new: float) -> float:
    if prev == NEG_INF:
        if new != NEG_INF:
            raise RewardResurrectionError("prefix reward is -inf but its extension is finite")
        return NEG_INF
    if new == NEG_INF:
        return NEG_INF
    return new - prev


def incremental_reward(prefix, token: int, y_star, spec: RewardSpec) -> float:
    """Token-level increment ``R(prefix + token) - R(prefix)``."""
    prefix = tuple(prefix)
    prev = prefix_reward(prefix, y_star, spec)
    new = prefix_reward(prefix + (int(token),), y_star, spec)
    return _increment(prev, new)


def incremental_reward_vector(prefix, y_star, spec: RewardSpec, vocab_size: int) -> np.ndarray:
    """Increments for every next token, as a length-``vocab_size`` array."""
    prefix = tuple(prefix)
    target = as_example(y_star).target
    t, Ts = len(prefix), len(target)
    kind = spec.kind
    # closed forms for the per-position kinds; they avoid V whole-prefix rescans
    if kind == "hamming" and t < Ts:
        # at t + 1 == T* the whole-sequence formula takes over; it agrees at T = T*
        out = np.zeros(vocab_size)
        out[target[t]] = 1.0 / Ts
        return out
    if kind == "delta":
        out = np.full(vocab_size, NEG_INF)
        if t < Ts and prefix == target[:t]:
            out[target[t]] = 1.0 / Ts
        return out
    if kind == "unigram_noise" and t < Ts:
        prev = prefix_reward(prefix, target, spec)
        if prev == NEG_INF:
            return np.full(vocab_size, NEG_INF)
        miss = np.array([safe_log(spec.gamma) + safe_log(spec.unigram[v]) for v in range(vocab_size)])
        miss[target[t]] = safe_log(1.0 - spec.gamma)
        return miss
    prev = prefix_reward(prefix, target, spec)
    return np.array(
        [_increment(prev, prefix_reward(prefix + (v,), target, spec)) for v in range(vocab_size)]
    )


@dataclass
class NoisingDiagnostic:
    """Two laws over equal-length sequences, aligned with ``support``."""

    support: list[tuple[int, ...]]
    reward_law: np.ndarray = field(repr=False)
    procedural_law: np.ndarray = field(repr=False)

    @property
    def tv(self) -> float:
        return 0.5 * float(np.abs(self.reward_law - self.procedural_law).sum())

    def table(self) -> str:
        lines = ["sequence        exp-reward law   procedural law"]
        for y, a, b in zip(self.support, self.reward_law, self.procedural_law):
            lines.append(f"{str(list(y)):<15} {a:>14.6f}   {b:>14.6f}")
        lines.append(f"total variation: {self.tv:.6f}")
        return "\n".join(lines)


def noising_diagnostic(y_star, gamma: float, u, vocab_size: int) -> NoisingDiagnostic:
    """Compare softmax of the unigram-noise reward with the replace-by-draw noiser.

    The noiser keeps a token with probability ``1 - gamma`` and otherwise
    draws from ``u`` (which may redraw the original token). Its law differs
    from the normalized exponentiated reward at matching positions.
    """
    target = tuple(as_example(y_star).target)
    support = list(itertools.product(range(vocab_size), repeat=len(target)))
    rw = np.array([_exp_or_zero(unigram_noise_reward(y, target, gamma, u)) for y in support])
    rw = rw / rw.sum()
    proc = np.array(
        [
            math.prod((1 - gamma) * (a == b) + gamma * u[a] for a, b in zip(y, target))
            for y in support
        ]
    )
    return NoisingDiagnostic(support, rw, proc)


def _exp_or_zero(x: float) -> float:
    return 0.0 if x == NEG_INF else math.exp(x)
