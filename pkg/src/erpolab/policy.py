"""Tabular autoregressive sequence model with exact log-probabilities.

The conditional ``p(y_t | y_<t)`` is a softmax over one row of a logit
table. A row is selected by the last ``order`` tokens of the prefix and, if
the policy is conditional, by a per-position conditioning id (for example
the aligned source token of a transduction task).
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .core import ContractError, Vocab, log_softmax_rows, sample_categorical

CHECKPOINT_MAGIC = "erpolab-policy"
CHECKPOINT_VERSION = 1


@dataclass
class Policy:
    vocab_size: int
    order: int
    length: int
    logits: np.ndarray = field(repr=False)
    n_cond: int = 1
    eos: Optional[int] = None

    def __post_init__(self):
        self.logits = np.asarray(self.logits, dtype=float)
        expected = (self.n_cond * n_contexts(self.vocab_size, self.order), self.vocab_size)
        if self.logits.shape != expected:
            raise ContractError(f"logit table has shape {self.logits.shape}, expected {expected}")
        self._offsets = np.array(
            [sum(self.vocab_size**i for i in range(j)) for j in range(self.order + 1)], dtype=np.int64
        )

    @property
    def n_ctx(self) -> int:
        return n_contexts(self.vocab_size, self.order)

    def copy(self) -> "Policy":
        return Policy(self.vocab_size, self.order, self.length, self.logits.copy(), self.n_cond, self.eos)

    def row_index(self, prefix, cond_t: int = 0) -> int:
        k = self.order
        ctx = tuple(prefix[-k:]) if k and len(prefix) else ()
        idx = 0
        for tok in ctx:
            idx = idx * self.vocab_size + tok
        return int(cond_t * self.n_ctx + self._offsets[len(ctx)] + idx)

    def cond_seq(self, cond, length: int) -> tuple[int, ...]:
        if cond is None:
            return (0,) * length
        if len(cond) < length:
            raise ContractError(f"conditioning covers {len(cond)} positions, need {length}")
        return tuple(cond)

    def token_log_probs(self, prefix, cond_t: int = 0) -> np.ndarray:
        row = self.logits[self.row_index(prefix, cond_t)]
        return log_softmax_rows(row)

    def row_indices(self, seqs: np.ndarray, cond=None) -> np.ndarray:
        """Row index for every (sequence, position) of a fixed-length batch."""
        seqs = np.asarray(seqs, dtype=np.int64)
        N, L = seqs.shape
        cond = np.asarray(self.cond_seq(cond, L), dtype=np.int64)
        rows = np.empty((N, L), dtype=np.int64)
        V, k = self.vocab_size, self.order
        for t in range(L):
            j = min(t, k)
            idx = np.zeros(N, dtype=np.int64)
            for s in range(t - j, t):
                idx = idx * V + seqs[:, s]
            rows[:, t] = cond[t] * self.n_ctx + self._offsets[j] + idx
        return rows


def n_contexts(vocab_size: int, order: int) -> int:
    return sum(vocab_size**j for j in range(order + 1))


def init_policy(
    vocab,
    order: int,
    length: int,
    init: str = "uniform",
    sigma: float = 0.0,
    seed=None,
    n_cond: int = 1,
) -> Policy:
    """Allocate a dense table over all contexts of up to ``order`` tokens."""
    vocab = vocab if isinstance(vocab, Vocab) else Vocab(int(vocab))
    if order < 0:
        raise ContractError("context order must be >= 0")
    if sigma < 0:
        raise ContractError("sigma must be >= 0")
    shape = (n_cond * n_contexts(vocab.size, order), vocab.size)
    if init == "uniform":
        logits = np.zeros(shape)
    elif init == "gaussian":
        logits = sigma * np.random.default_rng(seed).standard_normal(shape)
    else:
        raise ContractError(f"unknown init {init!r}")
    return Policy(vocab.size, order, length, logits, n_cond, vocab.eos)


def _check_length(policy: Policy, y) -> None:
    T = len(y)
    if policy.eos is None:
        if T != policy.length:
            raise ContractError(f"sequence length {T} != generation length {policy.length}")
        return
    if not 1 <= T <= policy.length:
        raise ContractError(f"sequence length {T} outside 1..{policy.length}")
    if policy.eos in y[:-1]:
        raise ContractError("eos may only appear as the final token")
    if T < policy.length and y[-1] != policy.eos:
        raise ContractError("sequences shorter than the generation length must end in eos")


def log_prob_seq(policy: Policy, y, cond=None) -> float:
    y = tuple(y)
    _check_length(policy, y)
    cond = policy.cond_seq(cond, len(y))
    total = 0.0
    for t, tok in enumerate(y):
        total += policy.token_log_probs(y[:t], cond[t])[tok]
    return float(total)


def log_prob_batch(policy: Policy, seqs: np.ndarray, cond=None) -> np.ndarray:
    """Vectorized ``log_prob_seq`` over a fixed-length batch."""
    seqs = np.asarray(seqs, dtype=np.int64)
    rows = policy.row_indices(seqs, cond)
    table = log_softmax_rows(policy.logits)
    return table[rows, seqs].sum(axis=1)


def sample_seq(policy: Policy, rng: np.random.Generator, cond=None, prefix=()) -> tuple[int, ...]:
    """Ancestral sampling; an optional ``prefix`` is forced before sampling starts."""
    y = list(prefix)
    cond = policy.cond_seq(cond, policy.length)
    while len(y) < policy.length:
        if policy.eos is not None and y and y[-1] == policy.eos:
            break
        y.append(sample_categorical(policy.token_log_probs(y, cond[len(y)]), rng))
    return tuple(y)


def grad_log_prob(policy: Policy, y, cond=None) -> np.ndarray:
    """Gradient of ``log p(y)`` w.r.t. the logit table."""
    y = tuple(y)
    _check_length(policy, y)
    cond = policy.cond_seq(cond, len(y))
    grad = np.zeros_like(policy.logits)
    for t, tok in enumerate(y):
        r = policy.row_index(y[:t], cond[t])
        grad[r] -= np.exp(log_softmax_rows(policy.logits[r]))
        grad[r, tok] += 1.0
    return grad


def expected_grad(policy: Policy, seqs: np.ndarray, weights: np.ndarray, cond=None) -> np.ndarray:
    """``sum_i w_i * grad log p(seq_i)`` for a fixed-length batch."""
    seqs = np.asarray(seqs, dtype=np.int64)
    weights = np.asarray(weights, dtype=float)
    rows = policy.row_indices(seqs, cond)
    probs = np.exp(log_softmax_rows(policy.logits))
    grad = np.zeros_like(policy.logits)
    V = policy.vocab_size
    flat_rows = rows.ravel()
    w = np.repeat(weights, seqs.shape[1])
    # token counts minus expected counts, accumulated per visited row
    onehot = np.zeros((flat_rows.size, V))
    onehot[np.arange(flat_rows.size), seqs.ravel()] = 1.0
    np.add.at(grad, flat_rows, w[:, None] * (onehot - probs[flat_rows]))
    return grad


def clip_gradient(grad: np.ndarray, max_norm: Optional[float]) -> np.ndarray:
    if max_norm is None:
        return grad
    norm = float(np.sqrt((grad**2).sum()))
    if norm <= max_norm or norm == 0.0:
        return grad
    return grad * (max_norm / norm)


def apply_update(policy: Policy, grad: np.ndarray, lr: float, max_norm: Optional[float] = None) -> Policy:
    """Return a new policy after one gradient-ascent step."""
    if grad.shape != policy.logits.shape:
        raise ContractError("gradient shape does not match the logit table")
    if lr < 0:
        raise ContractError("learning rate must be non-negative")
    new = policy.copy()
    if lr:
        new.logits += lr * clip_gradient(grad, max_norm)
    return new


def beam_decode(policy: Policy, width: int, cond=None, prefix=()) -> tuple[int, ...]:
    """Beam search over ``log p``; ``prefix`` tokens are forced.

    Ties are broken towards the lexicographically smaller sequence. With
    ``width >= V**L`` the search is exhaustive.
    """
    if width < 1:
        raise ContractError("beam width must be >= 1")
    cond = policy.cond_seq(cond, policy.length)
    start = tuple(prefix)
    score = 0.0
    for t, tok in enumerate(start):
        score += policy.token_log_probs(start[:t], cond[t])[tok]
    beams = [(score, start)]
    finished = []
    for t in range(len(start), policy.length):
        cand = []
        for s, y in beams:
            if policy.eos is not None and y and y[-1] == policy.eos:
                finished.append((s, y))
                continue
            lp = policy.token_log_probs(y, cond[t])
            for v in range(policy.vocab_size):
                cand.append((s + lp[v], y + (v,)))
        if not cand:
            beams = []
            break
        beams = heapq.nsmallest(width, cand, key=lambda c: (-c[0], c[1]))
    pool = finished + beams
    best = min(pool, key=lambda c: (-c[0], c[1]))
    return best[1]


def greedy_decode(policy: Policy, cond=None, prefix=()) -> tuple[int, ...]:
    return beam_decode(policy, 1, cond, prefix)


def save_checkpoint(policy: Policy, path, header_extra: str = "") -> None:
    eos = -1 if policy.eos is None else policy.eos
    with open(path, "w", encoding="utf-8") as f:
        f.write(f"{CHECKPOINT_MAGIC} {CHECKPOINT_VERSION}\n")
        if header_extra:
            f.write(f"# {header_extra}\n")
        f.write(f"{policy.vocab_size} {policy.order} {policy.length} {policy.n_cond} {eos}\n")
        for row in policy.logits:
            f.write(" ".join(repr(float(x)) for x in row) + "\n")


def load_checkpoint(path) -> Policy:
    with open(path, encoding="utf-8") as f:
        lines = [ln for ln in f.read().splitlines()]
    magic = lines[0].split()
    if len(magic) != 2 or magic[0] != CHECKPOINT_MAGIC:
        raise ContractError(f"{path}: not a policy checkpoint")
    if int(magic[1]) != CHECKPOINT_VERSION:
        raise ContractError(f"{path}: unsupported checkpoint version {magic[1]}")
    body = [ln for ln in lines[1:] if not ln.startswith("#")]
    V, k, L, n_cond, eos = (int(x) for x in body[0].split())
    logits = np.array([[float(x) for x in ln.split()] for ln in body[1:] if ln.strip()])
    return Policy(V, k, L, logits.reshape(-1, V), n_cond, None if eos < 0 else eos)


def argmax_exhaustive(policy: Policy, seqs: np.ndarray, cond=None) -> tuple[int, ...]:
    """Best sequence among an explicit fixed-length candidate set."""
    lp = log_prob_batch(policy, seqs, cond)
    best = np.flatnonzero(lp == lp.max())[0]
    return tuple(int(x) for x in seqs[best])

